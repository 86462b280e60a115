"""Closed simplicial hypersurfaces: construction, refinement, deformation.

A :class:`SurfaceMesh` is a closed, orientation-consistent triangulation of a
``d``-dimensional hypersurface in ``R^(d+1)``: polygonal curves in the plane
(``d = 1``) or polyhedral surfaces in space (``d = 2``).  Meshes are
immutable; every constructor and refiner returns a fresh, validated mesh.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import MeshError

__all__ = [
    "SurfaceMesh",
    "MeshStats",
    "VertexField",
    "octahedron",
    "refine_global",
    "sphere_mesh",
    "deform",
    "experiment_deformation",
    "polygonal_circle",
    "mesh_stats",
    "load_off",
]


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _simplex_measures(vertices, simplices):
    """d-measure of each simplex via the Gram determinant of its edge vectors."""
    p0 = vertices[simplices[:, 0]]
    edges = vertices[simplices[:, 1:]] - p0[:, None, :]  # (K, d, D)
    gram = np.einsum("kid,kjd->kij", edges, edges)
    det = np.linalg.det(gram)
    d = simplices.shape[1] - 1
    return np.sqrt(np.clip(det, 0.0, None)) / math.factorial(d)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Immutable closed triangulated hypersurface.

    Parameters
    ----------
    vertices : array_like, shape (n_vertices, d + 1)
        Vertex coordinates (converted to float64).
    simplices : array_like, shape (n_simplices, d + 1)
        Vertex indices of each simplex.  Orientation must be consistent:
        neighbouring simplices traverse their shared face in opposite
        directions.

    Raises
    ------
    MeshError
        If the mesh is not closed, inconsistently oriented, has unused
        vertices, non-finite coordinates or a simplex of (numerically) zero
        measure.
    """

    vertices: np.ndarray
    simplices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        s = np.asarray(self.simplices, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError(f"vertices must have shape (n, 2) or (n, 3), got {v.shape}")
        if s.ndim != 2 or s.shape[1] != v.shape[1]:
            raise MeshError(
                f"simplices must have shape (k, {v.shape[1]}) for a hypersurface "
                f"in R^{v.shape[1]}, got {s.shape}"
            )
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "simplices", _readonly(s))
        self._validate()

    # -- basic shape -------------------------------------------------------
    @property
    def dim_surface(self) -> int:
        return self.simplices.shape[1] - 1

    @property
    def dim_ambient(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    @cached_property
    def measures(self) -> np.ndarray:
        return _readonly(_simplex_measures(self.vertices, self.simplices))

    @property
    def total_measure(self) -> float:
        return float(self.measures.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (n_edges, 2)."""
        if self.dim_surface == 1:
            e = self.simplices
        else:
            s = self.simplices
            e = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]]])
        return _readonly(np.unique(np.sort(e, axis=1), axis=0))

    @cached_property
    def vertex_simplices(self) -> list:
        """For each vertex, the indices of the simplices containing it."""
        adj = [[] for _ in range(self.n_vertices)]
        for k, simplex in enumerate(self.simplices):
            for i in simplex:
                adj[i].append(k)
        return adj

    # -- validation --------------------------------------------------------
    def _validate(self):
        v, s = self.vertices, self.simplices
        if s.shape[0] == 0:
            raise MeshError("mesh has no simplices")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if s.min() < 0 or s.max() >= v.shape[0]:
            raise MeshError("simplex index out of range")
        if np.unique(s).size != v.shape[0]:
            raise MeshError("mesh has vertices not used by any simplex")
        ss = np.sort(s, axis=1)
        if np.any(ss[:, 1:] == ss[:, :-1]):
            raise MeshError("simplex with repeated vertex")

        if self.dim_surface == 1:
            starts = np.bincount(s[:, 0], minlength=v.shape[0])
            ends = np.bincount(s[:, 1], minlength=v.shape[0])
            if np.any(starts + ends != 2):
                raise MeshError("mesh is not closed: a vertex is not shared by exactly 2 segments")
            if np.any(starts != 1):
                raise MeshError("inconsistent orientation of segments")
        else:
            directed = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]]])
            _, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
            if np.any(counts != 2):
                raise MeshError("mesh is not closed: an edge is not shared by exactly 2 triangles")
            _, dcounts = np.unique(directed, axis=0, return_counts=True)
            if np.any(dcounts != 1):
                raise MeshError("inconsistent orientation of adjacent triangles")

        meas = self.measures
        lengths = np.linalg.norm(v[s[:, 1]] - v[s[:, 0]], axis=1)
        scale = lengths ** self.dim_surface
        bad = np.flatnonzero(~(meas > 1e-12 * scale))
        if bad.size:
            raise MeshError(f"degenerate simplex {int(bad[0])} (measure {meas[bad[0]]:.3e})")


@dataclass(frozen=True)
class MeshStats:
    h_max: float
    h_min: float
    min_radius_ratio: float
    n_vertices: int
    n_simplices: int


@dataclass(frozen=True, eq=False)
class VertexField:
    """P1 finite element map: one vector in ``R^(n+1)`` per mesh vertex."""

    mesh: SurfaceMesh
    values: np.ndarray
    name: str = field(default="f")

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.mesh.n_vertices:
            raise ValueError(
                f"field has {vals.shape[0] if vals.ndim else 0} rows, mesh has "
                f"{self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    @classmethod
    def interpolate(cls, mesh, fn, name="f"):
        """Lagrange interpolant of ``fn`` (vectorised over an (n, D) array)."""
        return cls(mesh, fn(np.array(mesh.vertices)), name=name)

    def with_values(self, values, name=None):
        return VertexField(self.mesh, values, name=self.name if name is None else name)


# -- constructors ----------------------------------------------------------
def octahedron() -> SurfaceMesh:
    """Regular octahedron with vertices ``±e1, ±e2, ±e3``, outward oriented."""
    vertices = [
        [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ]
    triangles = [
        [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
        [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
    ]
    return SurfaceMesh(vertices, triangles)


def polygonal_circle(k: int) -> SurfaceMesh:
    """Closed polygon with ``k`` equispaced vertices on the unit circle."""
    if k < 3:
        raise MeshError(f"polygonal circle needs at least 3 vertices, got {k}")
    theta = 2.0 * np.pi * np.arange(k) / k
    vertices = np.column_stack([np.cos(theta), np.sin(theta)])
    segments = np.column_stack([np.arange(k), (np.arange(k) + 1) % k])
    return SurfaceMesh(vertices, segments)


def refine_global(mesh: SurfaceMesh, project_to_unit_sphere: bool = False,
                  levels: int = 1) -> SurfaceMesh:
    """Uniform refinement: triangles split 1:4, segments 1:2, per level.

    Midpoints are shared between neighbours through an edge-keyed lookup, so
    no coordinate welding is involved.  With ``project_to_unit_sphere`` every
    *new* vertex is moved radially onto the unit sphere (circle); existing
    vertices never move.
    """
    for _ in range(levels):
        mesh = _refine_once(mesh, project_to_unit_sphere)
    return mesh


def _refine_once(mesh, project):
    v, s = mesh.vertices, mesh.simplices
    nv = v.shape[0]
    if mesh.dim_surface == 1:
        local_edges = s[:, None, :]
    else:
        local_edges = np.stack([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]]], axis=1)
    keys = np.sort(local_edges, axis=2).reshape(-1, 2)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(local_edges.shape[:2])

    mid = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    if project:
        norms = np.linalg.norm(mid, axis=1)
        if np.any(norms == 0.0):
            raise MeshError("cannot project a midpoint located at the origin")
        mid = mid / norms[:, None]
    new_vertices = np.concatenate([v, mid])
    m = inverse + nv

    if mesh.dim_surface == 1:
        a, b, ab = s[:, 0], s[:, 1], m[:, 0]
        children = np.stack([np.column_stack([a, ab]), np.column_stack([ab, b])], axis=1)
    else:
        a, b, c = s[:, 0], s[:, 1], s[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        children = np.stack([
            np.column_stack([a, ab, ca]),
            np.column_stack([ab, b, bc]),
            np.column_stack([ca, bc, c]),
            np.column_stack([ab, bc, ca]),
        ], axis=1)
    children = children.reshape(-1, s.shape[1])
    try:
        return SurfaceMesh(new_vertices, children)
    except MeshError as exc:
        if "degenerate" in str(exc):
            raise MeshError(f"refinement produced degenerate simplex: {exc}") from exc
        raise


def sphere_mesh(level: int) -> SurfaceMesh:
    """Octahedron refined ``level`` times with projection onto the unit sphere."""
    return refine_global(octahedron(), project_to_unit_sphere=True, levels=level)


def deform(mesh: SurfaceMesh, fn) -> SurfaceMesh:
    """Apply a point map to every vertex; connectivity is kept.

    ``fn`` receives the (n_vertices, D) coordinate array and must return an
    array of the same shape.
    """
    new = np.asarray(fn(np.array(mesh.vertices)), dtype=np.float64)
    if new.shape != mesh.vertices.shape:
        raise ValueError(f"deformation returned shape {new.shape}, expected {mesh.vertices.shape}")
    if not np.all(np.isfinite(new)):
        raise MeshError("deformation produced non-finite coordinates")
    return SurfaceMesh(new, mesh.simplices)


def experiment_deformation(a: float = 0.6, b: float = 0.4, variant: str = "corrected"):
    """Point map ``x -> (x1, alpha(x1) x2, alpha(x1) x3)`` with ``alpha = a x1^2 + b``.

    ``variant="printed"`` uses the literal form, which repeats ``x2``
    in the last slot and flattens the surface onto the plane ``x2 = x3``.
    """
    if variant not in ("corrected", "printed"):
        raise ValueError(f"unknown deformation variant {variant!r}")

    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        alpha = a * x[:, 0] ** 2 + b
        last = x[:, 2] if variant == "corrected" else x[:, 1]
        return np.column_stack([x[:, 0], alpha * x[:, 1], alpha * last])

    return fn


def mesh_stats(mesh: SurfaceMesh) -> MeshStats:
    v, s = mesh.vertices, mesh.simplices
    if mesh.dim_surface == 1:
        lengths = np.linalg.norm(v[s[:, 1]] - v[s[:, 0]], axis=1)
        diam = lengths
        inradius = 0.5 * lengths
    else:
        l01 = np.linalg.norm(v[s[:, 1]] - v[s[:, 0]], axis=1)
        l12 = np.linalg.norm(v[s[:, 2]] - v[s[:, 1]], axis=1)
        l20 = np.linalg.norm(v[s[:, 0]] - v[s[:, 2]], axis=1)
        diam = np.maximum(np.maximum(l01, l12), l20)
        inradius = 2.0 * mesh.measures / (l01 + l12 + l20)
    h_max = float(diam.max())
    return MeshStats(
        h_max=h_max,
        h_min=float(diam.min()),
        min_radius_ratio=float(inradius.min() / h_max),
        n_vertices=mesh.n_vertices,
        n_simplices=mesh.n_simplices,
    )


def load_off(path) -> SurfaceMesh:
    """Read a triangle mesh from an OFF file."""
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line.split())
    if not tokens or not tokens[0][0].upper().endswith("OFF"):
        raise MeshError(f"{path}: missing OFF header")
    header = tokens[0][1:] if len(tokens[0]) > 1 else tokens[1]
    body = tokens[1:] if len(tokens[0]) > 1 else tokens[2:]
    nv, nf = int(header[0]), int(header[1])
    if len(body) < nv + nf:
        raise MeshError(f"{path}: expected {nv} vertices and {nf} faces")
    vertices = np.array([[float(t) for t in row[:3]] for row in body[:nv]])
    faces = []
    for row in body[nv:nv + nf]:
        count = int(row[0])
        if count != 3:
            raise MeshError(f"{path}: only triangular faces are supported, got {count}-gon")
        faces.append([int(t) for t in row[1:4]])
    return SurfaceMesh(vertices, faces)
