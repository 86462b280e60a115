import csv

import numpy as np
import pytest

from geoflow.io import export_csv, export_vtk, format_float
from geoflow.mesh import VertexField, octahedron, polygonal_circle, sphere_mesh


def parse_vtk(path):
    """Minimal legacy ASCII POLYDATA reader for round-trip tests."""
    tokens = open(path).read().split("\n")
    assert tokens[0].startswith("# vtk DataFile Version 2.0")
    assert tokens[2] == "ASCII" and tokens[3] == "DATASET POLYDATA"
    i = 4
    out = {"fields": {}}
    while i < len(tokens):
        head = tokens[i].split()
        if not head:
            i += 1
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(c) for c in tokens[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif head[0] in ("POLYGONS", "LINES"):
            n = int(head[1])
            cells = [[int(c) for c in tokens[i + 1 + k].split()] for k in range(n)]
            assert sum(len(c) for c in cells) == int(head[2])
            out["cells"] = np.array([c[1:] for c in cells])
            out["kind"] = head[0]
            i += n + 1
        elif head[0] == "POINT_DATA":
            npts = int(head[1])
            i += 1
        elif head[0] == "VECTORS":
            out["fields"][head[1]] = np.array(
                [[float(c) for c in tokens[i + 1 + k].split()] for k in range(npts)])
            i += npts + 1
        elif head[0] == "SCALARS":
            out["fields"][head[1]] = np.array([float(tokens[i + 2 + k]) for k in range(npts)])
            i += npts + 2
        else:
            raise AssertionError(f"unexpected line {tokens[i]!r}")
    return out


def test_vtk_header_without_fields(tmp_path):
    path = tmp_path / "oct.vtk"
    export_vtk(octahedron(), [], path)
    text = path.read_text()
    assert "POINTS 6 double" in text
    assert "POLYGONS 8 32" in text
    assert "POINT_DATA" not in text


def test_vtk_vectors_section(tmp_path):
    m = octahedron()
    path = tmp_path / "f.vtk"
    export_vtk(m, [VertexField(m, 2 * m.vertices, name="f")], path)
    assert "VECTORS f double" in path.read_text()


def test_vtk_round_trip(tmp_path):
    m = sphere_mesh(3)
    rng = np.random.default_rng(1)
    f = VertexField(m, rng.standard_normal((m.n_vertices, 3)), name="f")
    path = tmp_path / "s.vtk"
    export_vtk(m, [f], path)
    back = parse_vtk(path)
    np.testing.assert_allclose(back["points"], m.vertices, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(back["cells"], m.simplices)
    np.testing.assert_array_equal(back["fields"]["f"], f.values)


def test_vtk_pads_planar_data(tmp_path):
    m = polygonal_circle(7)
    path = tmp_path / "c.vtk"
    export_vtk(m, [VertexField(m, m.vertices, name="f"),
                   VertexField(m, np.arange(7.0), name="s")], path)
    back = parse_vtk(path)
    assert back["kind"] == "LINES"
    np.testing.assert_array_equal(back["points"][:, :2], m.vertices)
    assert np.all(back["points"][:, 2] == 0.0)
    np.testing.assert_array_equal(back["fields"]["s"], np.arange(7.0))


def test_vtk_field_size_mismatch(tmp_path):
    m = octahedron()
    other = VertexField(sphere_mesh(1), sphere_mesh(1).vertices)
    with pytest.raises(ValueError):
        export_vtk(m, [other], tmp_path / "x.vtk")


def test_vtk_io_error_names_path(tmp_path):
    bad = tmp_path / "missing" / "x.vtk"
    with pytest.raises(OSError, match="missing"):
        export_vtk(octahedron(), [], bad)


def test_csv_header_and_precision(tmp_path):
    path = tmp_path / "m.csv"
    x = 0.1 + 0.2
    export_csv([{"t": 0.001, "value": x, "n": 3}], path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "value", "n"]
    assert float(rows[1][1]) == x
    assert rows[1][2] == "3"


def test_csv_sequence_rows_need_header(tmp_path):
    with pytest.raises(ValueError):
        export_csv([[1.0, 2.0]], tmp_path / "x.csv")
    export_csv([[1.0, 2.0]], tmp_path / "x.csv", header=["a", "b"])
    assert open(tmp_path / "x.csv").read().splitlines() == ["a,b", "1,2"]


def test_format_float_round_trips():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-20, 20, 200):
        assert float(format_float(x)) == x
