"""Artifact writers: legacy VTK polydata and plain CSV."""
from __future__ import annotations

import csv
import os

import numpy as np

__all__ = ["export_vtk", "export_csv", "format_float"]


def format_float(x) -> str:
    return f"{float(x):.17g}"


def _pad3(a):
    a = np.asarray(a, dtype=np.float64)
    if a.shape[1] == 3:
        return a
    out = np.zeros((a.shape[0], 3))
    out[:, : a.shape[1]] = a
    return out


def export_vtk(mesh, fields, path, title="geoflow"):
    """Write ``mesh`` and vertex fields as legacy ASCII VTK POLYDATA.

    Points and vectors with fewer than three components are zero padded.
    ``fields`` is a sequence of :class:`~geoflow.mesh.VertexField`; each one
    becomes a ``VECTORS <name> double`` block (``SCALARS`` for one component).
    """
    for fld in fields:
        if fld.values.shape[0] != mesh.n_vertices:
            raise ValueError(f"field {fld.name!r} does not match the mesh vertex count")
    pts = _pad3(mesh.vertices)
    cells = mesh.simplices
    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET POLYDATA"]
    lines.append(f"POINTS {pts.shape[0]} double")
    lines.extend(" ".join(format_float(c) for c in p) for p in pts)
    kind = "POLYGONS" if mesh.dim_surface == 2 else "LINES"
    npc = cells.shape[1]
    lines.append(f"{kind} {cells.shape[0]} {cells.shape[0] * (npc + 1)}")
    lines.extend(f"{npc} " + " ".join(str(int(i)) for i in c) for c in cells)
    if fields:
        lines.append(f"POINT_DATA {pts.shape[0]}")
        for fld in fields:
            if fld.n_components == 1:
                lines.append(f"SCALARS {fld.name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(format_float(x) for x in fld.values[:, 0])
            else:
                if fld.n_components > 3:
                    raise ValueError("VTK vectors support at most 3 components")
                lines.append(f"VECTORS {fld.name} double")
                lines.extend(" ".join(format_float(c) for c in p) for p in _pad3(fld.values))
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {os.fspath(path)!r}: {exc}") from exc


def export_csv(rows, path, header=None):
    """Write rows (dicts or sequences) with a header row; floats keep 17 digits."""
    rows = list(rows)
    if header is None:
        if not rows or not isinstance(rows[0], dict):
            raise ValueError("header required for non-dict rows")
        header = list(rows[0].keys())

    def fmt(x):
        if isinstance(x, (float, np.floating)):
            return format_float(x)
        return str(x)

    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                vals = [row[k] for k in header] if isinstance(row, dict) else row
                w.writerow([fmt(x) for x in vals])
    except OSError as exc:
        raise OSError(f"cannot write CSV file {os.fspath(path)!r}: {exc}") from exc
