"""Writers for legacy VTK, CSV and JSON outputs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

VTK_TRIANGLE = 5


def write_vtk(path, mesh, point_data: dict | None = None, title: str = "perfplate"):
    """Legacy VTK 3.0 ASCII unstructured grid with nodal scalar fields."""
    point_data = point_data or {}
    V = mesh.vertices
    T = mesh.triangles
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(V)} double\n")
        for x, y in V:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {len(T)} {4 * len(T)}\n")
        for a, b, c in T:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {len(T)}\n")
        fh.write(f"{VTK_TRIANGLE}\n" * len(T))
        if point_data:
            fh.write(f"POINT_DATA {len(V)}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (len(V),):
                    raise ValueError(f"field {name!r} has shape {values.shape}, expected ({len(V)},)")
                fh.write(f"SCALARS {name} double 1\n")
                fh.write("LOOKUP_TABLE default\n")
                for v in values:
                    fh.write(f"{float(v)!r}\n")


def format_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows):
    """RFC-4180 CSV with LF line endings and round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
