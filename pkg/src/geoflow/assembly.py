"""P1 surface finite elements for the extended harmonic map heat flow.

Every integrand is evaluated at quadrature points with the previous map
interpolated linearly on each simplex; weights are never lumped or averaged
over vertices.  Tangential gradients of the hat functions are constant per
simplex, so ``|grad f|^2`` is the squared Frobenius norm of a constant
Jacobian on each simplex.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, MeshError
from .quadrature import quadrature_rule
from .targets import DEFAULT_GUARD, SphereTarget

__all__ = [
    "ElementGeometry",
    "SparseSystem",
    "element_geometry",
    "mass_matrix",
    "stiffness_matrix",
    "assemble_step_system",
    "assemble_general_system",
    "discrete_energy",
    "general_energy",
    "first_variation",
    "first_variation_terms",
    "second_variation_apply",
    "bilinear_b",
    "h1_error",
    "interpolate_at_quadrature",
]


@dataclass(frozen=True)
class ElementGeometry:
    measure: float
    gradients: np.ndarray  # (d+1, D): tangential gradient of each local hat function
    normal: np.ndarray     # unit normal, sign fixed by the simplex orientation


def _gradients(vertices, simplices):
    p0 = vertices[simplices[:, 0]]
    J = vertices[simplices[:, 1:]] - p0[:, None, :]  # (K, d, D) edge vectors
    gram = np.einsum("kid,kjd->kij", J, J)
    ginv = np.linalg.inv(gram)
    g_rest = np.einsum("kij,kjd->kid", ginv, J)  # gradients of lambda_1..lambda_d
    g0 = -g_rest.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g_rest], axis=1)


def _normals(vertices, simplices):
    p = vertices[simplices]
    if simplices.shape[1] == 2:
        t = p[:, 1] - p[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return n / np.linalg.norm(n, axis=1)[:, None]


class _Geometry:
    """Per-mesh cache: hat-function gradients, measures and sparsity patterns."""

    def __init__(self, mesh):
        self.n_vertices = mesh.n_vertices
        self.simplices = np.asarray(mesh.simplices)
        self.vertices = np.asarray(mesh.vertices)
        self.measures = np.asarray(mesh.measures)
        self.grads = _gradients(self.vertices, self.simplices)
        self.gg = np.einsum("kid,kjd->kij", self.grads, self.grads)
        self._patterns = {}

    def pattern(self, ncomp=1):
        """CSR structure and scatter map for ``(K, d+1, d+1[, c, c])`` local blocks."""
        if ncomp in self._patterns:
            return self._patterns[ncomp]
        s = self.simplices
        N = self.n_vertices * ncomp
        if ncomp == 1:
            rows = np.broadcast_to(s[:, :, None], s.shape + (s.shape[1],))
            cols = np.broadcast_to(s[:, None, :], rows.shape)
        else:
            c = np.arange(ncomp)
            rows = s[:, :, None, None, None] * ncomp + c[None, None, None, :, None]
            cols = s[:, None, :, None, None] * ncomp + c[None, None, None, None, :]
            rows, cols = np.broadcast_arrays(rows, cols)
        keys = rows.ravel() * N + cols.ravel()
        uniq, inverse = np.unique(keys, return_inverse=True)
        r = uniq // N
        indices = (uniq % N).astype(np.int64)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=N))]).astype(np.int64)
        pat = (indices, indptr, inverse.ravel(), N)
        self._patterns[ncomp] = pat
        return pat

    def build(self, local, ncomp=1):
        indices, indptr, inverse, N = self.pattern(ncomp)
        data = np.bincount(inverse, weights=local.ravel(), minlength=indices.size)
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(N, N))

    def scatter(self, local):
        """Sum per-simplex vertex contributions ``(K, d+1, c)`` into ``(N, c)``."""
        c = local.shape[-1]
        out = np.empty((self.n_vertices, c))
        idx = self.simplices.ravel()
        flat = local.reshape(-1, c)
        for a in range(c):
            out[:, a] = np.bincount(idx, weights=flat[:, a], minlength=self.n_vertices)
        return out


_CACHE = weakref.WeakKeyDictionary()


def _geometry(mesh) -> _Geometry:
    geo = _CACHE.get(mesh)
    if geo is None:
        geo = _Geometry(mesh)
        _CACHE[mesh] = geo
    return geo


def element_geometry(mesh, simplex_index) -> ElementGeometry:
    """Measure, hat-function gradients and unit normal of one simplex."""
    if not 0 <= simplex_index < mesh.n_simplices:
        raise IndexError(f"simplex index {simplex_index} out of range")
    s = np.asarray(mesh.simplices[simplex_index : simplex_index + 1])
    v = np.asarray(mesh.vertices)
    if mesh.measures[simplex_index] <= 0:
        raise MeshError(f"degenerate simplex {simplex_index}")
    return ElementGeometry(
        measure=float(mesh.measures[simplex_index]),
        gradients=_gradients(v, s)[0],
        normal=_normals(v, s)[0],
    )


def _values(f):
    return np.asarray(getattr(f, "values", f), dtype=np.float64)


def interpolate_at_quadrature(mesh, f, degree=5):
    """P1 values ``(K, nq, c)`` at quadrature points and Jacobians ``(K, c, D)``."""
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    fv = _values(f)
    if fv.ndim == 1:
        fv = fv[:, None]
    loc = fv[geo.simplices]  # (K, d+1, c)
    fq = np.matmul(rule.points, loc)
    jac = np.matmul(loc.transpose(0, 2, 1), geo.grads)
    return fq, jac


def _guarded_norm(fq, guard):
    r = np.linalg.norm(fq, axis=-1)
    if np.any(r < guard):
        k = int(np.argwhere(r < guard)[0, 0])
        raise GeometryError(
            f"|f| = {float(r.min()):.3g} below guard {guard} at a quadrature point of simplex {k}"
        )
    return r


# -- linear systems -------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SparseSystem:
    """``(mass / tau + stiffness) f = rhs`` for one time step.

    For the sphere scheme the matrices are scalar ``(N, N)`` and act on every
    component separately (``coupled=False``); the general-metric scheme
    stores component-coupled ``(N c, N c)`` matrices in vertex-major ordering
    ``i * c + alpha``.  ``rhs`` always has shape ``(N, c)``.
    """

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    rhs: np.ndarray
    tau: float
    coupled: bool = False

    @cached_property
    def matrix(self):
        return (self.mass / self.tau + self.stiffness).tocsr()

    @property
    def n_components(self) -> int:
        return self.rhs.shape[1]

    def full_matrix(self):
        """The system matrix acting on the flattened vertex-major unknowns."""
        if self.coupled:
            return self.matrix
        return sp.kron(self.matrix, sp.identity(self.n_components), format="csr")

    def full_rhs(self):
        return self.rhs.ravel()


def mass_matrix(mesh, weight=None, degree=5):
    """P1 mass matrix, optionally weighted by values ``(K, nq)`` at quadrature points."""
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    w = rule.weights if weight is None else rule.weights * weight
    if w.ndim == 1:
        w = np.broadcast_to(w, (geo.measures.size, w.size))
    d1 = rule.points.shape[1]
    pp = np.einsum("qi,qj->qij", rule.points, rule.points).reshape(len(rule), -1)
    local = (w @ pp).reshape(-1, d1, d1) * geo.measures[:, None, None]
    return geo.build(local)


def stiffness_matrix(mesh, weight=None, degree=5):
    """P1 stiffness (Laplace-Beltrami) matrix with optional quadrature-point weight."""
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    if weight is None:
        avg = np.ones(geo.measures.size)
    else:
        avg = weight @ rule.weights
    local = geo.gg * (geo.measures * avg)[:, None, None]
    return geo.build(local)


def assemble_step_system(mesh, f_prev, tau, target=None, degree=5):
    """Linear system of one semi-implicit step for a spherical target.

    Weights ``1/2 + 1/(2|f|^4)`` and ``|grad f|^2/|f|^6`` are frozen at
    ``f_prev`` and evaluated at quadrature points.
    """
    if tau <= 0:
        raise ValueError("time step must be positive")
    guard = target.guard_radius if isinstance(target, SphereTarget) else DEFAULT_GUARD
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    fv = _values(f_prev)
    fq, jac = interpolate_at_quadrature(mesh, fv, degree)
    r = _guarded_norm(fq, guard)
    grad2 = np.einsum("kcd,kcd->k", jac, jac)
    rho = 0.5 + 0.5 / r ** 4
    react = grad2[:, None] / r ** 6

    M = mass_matrix(mesh, rho, degree)
    S = stiffness_matrix(mesh, rho, degree)
    # reaction term: integral of phi_i f^alpha |grad f|^2/|f|^6
    wr = rule.weights * react * geo.measures[:, None]  # (K, nq)
    local_rhs = np.matmul(rule.points.T, wr[:, :, None] * fq)
    rhs = M @ fv / tau + geo.scatter(local_rhs)
    return SparseSystem(mass=M, stiffness=S, rhs=rhs, tau=float(tau), coupled=False)


def assemble_general_system(mesh, f_prev, tau, target, degree=5):
    """Component-coupled step system for an arbitrary extended metric ``G``.

    ``M_ijab = int phi_i phi_j G_ab(f)``, ``S_ijab = int grad phi_i . grad phi_j G_ab(f)``,
    ``rhs_ib = (M f_old / tau)_ib - 1/2 int D_b G_ki(f) grad f^k . grad f^i phi_i``,
    with ``G`` and ``DG`` evaluated at the quadrature points of ``f_prev``.
    """
    if tau <= 0:
        raise ValueError("time step must be positive")
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    fv = _values(f_prev)
    c = fv.shape[1]
    fq, jac = interpolate_at_quadrature(mesh, fv, degree)
    if isinstance(target, SphereTarget):
        _guarded_norm(fq, target.guard_radius)
    G = target.metric(fq)               # (K, nq, c, c)
    dG = target.metric_derivative(fq)   # (K, nq, b, k, i)

    wm = rule.weights * geo.measures[:, None]  # (K, nq)
    local_m = np.einsum("kq,qi,qj,kqab->kijab", wm, rule.points, rule.points, G, optimize=True)
    gbar = np.einsum("kq,kqab->kab", wm, G)
    local_s = geo.gg[:, :, :, None, None] * gbar[:, None, None, :, :]
    M = geo.build(local_m, c)
    S = geo.build(local_s, c)

    gradgrad = np.einsum("kcd,ked->kce", jac, jac)  # grad f^k . grad f^i
    force = -0.5 * np.einsum("kqbce,kce->kqb", dG, gradgrad)
    local_rhs = np.matmul(rule.points.T, wm[:, :, None] * force)
    rhs = (M @ fv.ravel()).reshape(-1, c) / tau + geo.scatter(local_rhs)
    return SparseSystem(mass=M, stiffness=S, rhs=rhs, tau=float(tau), coupled=True)


# -- energy and variations --------------------------------------------------------
def _sphere_terms(mesh, f, degree, guard=DEFAULT_GUARD):
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    fq, jac = interpolate_at_quadrature(mesh, f, degree)
    r = _guarded_norm(fq, guard)
    grad2 = np.einsum("kcd,kcd->k", jac, jac)
    wm = rule.weights * geo.measures[:, None]
    return geo, rule, fq, jac, r, grad2, wm


def discrete_energy(mesh, f, degree=5):
    """``1/2 int |grad f|^2 (1/2 + 1/(2|f|^4))`` over the polyhedral surface."""
    _, _, _, _, r, grad2, wm = _sphere_terms(mesh, f, degree)
    rho = 0.5 + 0.5 / r ** 4
    return 0.5 * float(np.sum(wm * rho * grad2[:, None]))


def general_energy(mesh, f, target, degree=5):
    """``1/2 int G_ab(f) grad f^a . grad f^b`` for an arbitrary target metric."""
    if isinstance(target, SphereTarget):
        return discrete_energy(mesh, f, degree)
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    fq, jac = interpolate_at_quadrature(mesh, f, degree)
    G = target.metric(fq)
    gradgrad = np.einsum("kcd,ked->kce", jac, jac)
    wm = rule.weights * geo.measures[:, None]
    return 0.5 * float(np.einsum("kq,kqce,kce->", wm, G, gradgrad))


def first_variation(mesh, f, degree=5):
    """Gradient of the discrete energy in the basis ``phi_i e_alpha``.

    Returns a flat vector of length ``n_vertices * (n + 1)`` ordered
    vertex-major (index ``i * (n + 1) + alpha``).
    """
    diff, react = first_variation_terms(mesh, f, degree)
    return (diff - react).ravel()


def first_variation_terms(mesh, f, degree=5):
    """Diffusion and reaction parts ``(N, n+1)`` of the first variation.

    The first variation is ``diffusion - reaction`` with
    ``diffusion_i = int rho grad f . grad phi_i`` and
    ``reaction_i = int |grad f|^2 f phi_i / |f|^6``.
    """
    geo, rule, fq, jac, r, grad2, wm = _sphere_terms(mesh, f, degree)
    rho_bar = np.sum(wm * (0.5 + 0.5 / r ** 4), axis=1)
    diff = np.einsum("kcd,kid->kic", jac, geo.grads) * rho_bar[:, None, None]
    wr = wm * grad2[:, None] / r ** 6
    react = np.matmul(rule.points.T, wr[:, :, None] * fq)
    return geo.scatter(diff), geo.scatter(react)


def second_variation_apply(mesh, f, psi, degree=5):
    """Second variation ``E''(f)(psi, psi)`` of the discrete energy."""
    geo, rule, fq, jac, r, grad2, wm = _sphere_terms(mesh, f, degree)
    pq, pjac = interpolate_at_quadrature(mesh, psi, degree)
    gpsi2 = np.einsum("kcd,kcd->k", pjac, pjac)
    fgp = np.einsum("kcd,kcd->k", jac, pjac)
    fp = np.einsum("kqc,kqc->kq", fq, pq)
    p2 = np.einsum("kqc,kqc->kq", pq, pq)
    integrand = (
        gpsi2[:, None] * (0.5 + 0.5 / r ** 4)
        - 4.0 * fgp[:, None] * fp / r ** 6
        - grad2[:, None] * p2 / r ** 6
        + 6.0 * grad2[:, None] * fp ** 2 / r ** 8
    )
    return float(np.sum(wm * integrand))


def bilinear_b(mesh, f, psi, degree=5):
    """Direct and decomposed values of ``b(psi, psi)`` for maps into ``S^1``.

    The direct value integrates
    ``|grad psi|^2 - 4 grad f : grad psi (f.psi) - |grad f|^2 |psi|^2 + 6 |grad f|^2 (f.psi)^2``;
    the decomposed value integrates ``|grad psi_n|^2 + |grad psi_t|^2 + 2 |grad f|^2 psi_n^2``
    with ``psi_n = psi . f`` and ``psi_t = psi . f_perp``, ``f_perp = (-f2, f1)``.
    Both use the P1 fields at quadrature points.

    Returns
    -------
    tuple of float
        ``(b_value, decomposed_value)``.
    """
    fv, pv = _values(f), _values(psi)
    if fv.ndim != 2 or fv.shape[1] != 2 or pv.shape != fv.shape:
        raise ValueError("bilinear_b needs two-component fields (maps into S^1)")
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    wm = rule.weights * geo.measures[:, None]
    fq, jac = interpolate_at_quadrature(mesh, fv, degree)
    pq, pjac = interpolate_at_quadrature(mesh, pv, degree)
    grad2 = np.einsum("kcd,kcd->k", jac, jac)
    gpsi2 = np.einsum("kcd,kcd->k", pjac, pjac)
    fgp = np.einsum("kcd,kcd->k", jac, pjac)
    fp = np.einsum("kqc,kqc->kq", fq, pq)
    p2 = np.einsum("kqc,kqc->kq", pq, pq)
    direct = (gpsi2[:, None] - 4.0 * fgp[:, None] * fp - grad2[:, None] * p2
              + 6.0 * grad2[:, None] * fp ** 2)

    rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # f_perp = rot @ f
    fperp = fq @ rot.T
    jperp = np.einsum("ab,kbd->kad", rot, jac)
    # gradients of the products psi.f and psi.f_perp at each quadrature point
    g_nu = np.einsum("kcd,kqc->kqd", pjac, fq) + np.einsum("kcd,kqc->kqd", jac, pq)
    g_tau = np.einsum("kcd,kqc->kqd", pjac, fperp) + np.einsum("kcd,kqc->kqd", jperp, pq)
    decomposed = (np.einsum("kqd,kqd->kq", g_nu, g_nu) + np.einsum("kqd,kqd->kq", g_tau, g_tau)
                  + 2.0 * grad2[:, None] * fp ** 2)
    return float(np.sum(wm * direct)), float(np.sum(wm * decomposed))


def _radial(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def h1_error(mesh, f_h, exact_map, projection=_radial, degree=5):
    """Discrete H1 distance between ``f_h`` and ``exact_map`` lifted to the mesh.

    ``sqrt(||f_h - f o proj||^2_L2 + ||grad (f_h - I_h(f o proj))||^2_L2)`` on the
    polyhedral surface; ``projection`` defaults to the radial projection,
    which is the exact lift for meshes inscribed in the unit sphere/circle.
    """
    geo = _geometry(mesh)
    rule = quadrature_rule(mesh.dim_surface, degree)
    wm = rule.weights * geo.measures[:, None]
    fv = _values(f_h)
    xq = np.einsum("qi,kid->kqd", rule.points, geo.vertices[geo.simplices])
    fq, _ = interpolate_at_quadrature(mesh, fv, degree)
    exact_q = np.asarray(exact_map(projection(xq.reshape(-1, xq.shape[-1])))).reshape(fq.shape)
    l2 = float(np.sum(wm * np.sum((fq - exact_q) ** 2, axis=-1)))
    interp = np.asarray(exact_map(projection(geo.vertices))).reshape(fv.shape)
    _, djac = interpolate_at_quadrature(mesh, fv - interp, degree)
    h1 = float(np.sum(geo.measures * np.einsum("kcd,kcd->k", djac, djac)))
    return float(np.sqrt(l2 + h1))
