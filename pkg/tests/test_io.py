import json

import numpy as np

from perfplate.geometry import CellGeometry, WallPattern
from perfplate.io import read_csv, write_csv, write_json, write_vtk
from perfplate.mesh import mesh_cell


def test_csv_roundtrip_is_exact(tmp_path):
    values = [0.1, 1 / 3, np.float64(2.0) ** -40, -7]
    write_csv(tmp_path / "a.csv", ["name", "value"], [["v", v] for v in values])
    raw = (tmp_path / "a.csv").read_bytes()
    assert b"\r" not in raw
    header, rows = read_csv(tmp_path / "a.csv")
    assert header == ["name", "value"]
    assert [float(r[1]) for r in rows] == [float(v) for v in values]


def test_csv_quotes_fields_with_commas(tmp_path):
    write_csv(tmp_path / "a.csv", ["k"], [["a,b"]])
    assert (tmp_path / "a.csv").read_text() == 'k\n"a,b"\n'


def test_vtk_layout(tmp_path):
    mesh = mesh_cell(CellGeometry(WallPattern.slit(0.25, 0.5), 0.25, 3.0), 0.1)
    u = mesh.vertices[:, 1]
    write_vtk(tmp_path / "m.vtk", mesh, {"Y": u})
    lines = (tmp_path / "m.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == f"POINTS {mesh.n_vertices} double"
    first = [float(t) for t in lines[5].split()]
    assert first == [*mesh.vertices[0], 0.0]
    i = lines.index(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    assert lines[i + 1].split()[0] == "3"
    j = lines.index(f"POINT_DATA {mesh.n_vertices}")
    assert lines[j + 1] == "SCALARS Y double 1"
    assert np.array_equal(np.array(lines[j + 3:], dtype=float), u)


def test_json(tmp_path):
    write_json(tmp_path / "r.json", [{"check_name": "x", "pass": True}])
    assert json.loads((tmp_path / "r.json").read_text())[0]["pass"] is True
