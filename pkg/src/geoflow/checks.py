"""Seeded property batteries for the target geometry and the discrete energy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import discrete_energy, first_variation, first_variation_terms, second_variation_apply
from .mesh import sphere_mesh
from .targets import (
    HypersurfaceTarget,
    SphereTarget,
    christoffel_from_metric,
    ellipsoid,
    sphere_as_hypersurface,
)

__all__ = [
    "CheckResult",
    "CheckReport",
    "check_geometry",
    "check_variations",
    "drop_quadratic_term",
    "flipped_reaction_first_variation",
    "sample_tube_points",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


@dataclass(frozen=True)
class CheckReport:
    title: str
    results: tuple

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self):
        return [self.title] + [r.line() for r in self.results]

    def __str__(self):
        return "\n".join(self.lines())


# -- geometry -------------------------------------------------------------------
class _NoQuadraticTerm(HypersurfaceTarget):
    def _metric_from(self, d, hess):
        return np.eye(hess.shape[-1]) - 2.0 * d[..., None, None] * hess


def drop_quadratic_term(target: HypersurfaceTarget) -> HypersurfaceTarget:
    """Mutant of ``target`` whose metric lacks the ``2 d^2 D^2d D^2d`` term.

    Used to make sure the Hessian identity check can fail.
    """
    return _NoQuadraticTerm(target.distance_fn, target.n, target.tube_halfwidth,
                            third_fn=None, fd_step=target.fd_step, name=f"{target.name}-mutant")


def _on_surface(target, rng, n_points):
    """Random points on a star-shaped target: Newton along rays from the origin."""
    u = rng.standard_normal((n_points, target.ambient_dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    lam = np.ones(n_points)
    for _ in range(50):
        d, dd, _ = target.distance_derivatives(lam[:, None] * u, check=False)
        lam -= d / np.einsum("ij,ij->i", dd, u)
        if np.max(np.abs(d)) < 1e-15:
            break
    return lam[:, None] * u


def sample_tube_points(target, rng, n_points, fraction=0.95):
    """Points ``p + s nu(p)`` with ``p`` on the target and ``|s| < fraction * halfwidth``."""
    if isinstance(target, SphereTarget):
        u = rng.standard_normal((n_points, target.ambient_dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s = rng.uniform(-0.5, 1.0, n_points)
        return u * (1.0 + s)[:, None]
    p = _on_surface(target, rng, n_points)
    _, nu, _ = target.distance_derivatives(p)
    s = rng.uniform(-fraction, fraction, n_points) * target.tube_halfwidth
    return p + s[:, None] * nu


def default_targets():
    return [
        SphereTarget(),
        sphere_as_hypersurface(),
        sphere_as_hypersurface(analytic_derivative=True),
        ellipsoid(),
    ]


def _label(target):
    extra = ", analytic DG" if getattr(target, "third_fn", None) is not None else ""
    return f"{target.name}{extra}"


def check_geometry(seed: int = 0, targets=None, n_points: int = 1000) -> CheckReport:
    """Involution, metric and Hessian identities on seeded random points.

    For every hypersurface target: ``i(i(x)) = x`` (1e-12), ``G = Id`` on the
    surface (1e-12), ``G Dd = Dd`` in the tube (1e-10) and the covariant
    Hessian of ``d`` equal to ``d D^2d D^2d`` (1e-8).  For the sphere
    inversion metric: the involution, ``rho = 1`` on the sphere and the closed
    form Christoffel symbols against the generic formula.
    """
    rng = np.random.default_rng(seed)
    targets = default_targets() if targets is None else list(targets)
    results = []
    for tgt in targets:
        lab = _label(tgt)
        x = sample_tube_points(tgt, rng, n_points)
        if isinstance(tgt, SphereTarget):
            err = np.max(np.abs(tgt.inversion(tgt.inversion(x)) - x))
            results.append(CheckResult(f"{lab}: involution", float(err), 1e-12))
            u = x / np.linalg.norm(x, axis=1, keepdims=True)
            err = np.max(np.abs(tgt.metric(u) - np.eye(tgt.ambient_dim)))
            results.append(CheckResult(f"{lab}: G = Id on target", float(err), 1e-12))
            gam = christoffel_from_metric(tgt.metric(x), tgt.metric_derivative(x))
            err = np.max(np.abs(tgt.christoffel(x) - gam))
            results.append(CheckResult(f"{lab}: closed-form Christoffel symbols", float(err), 1e-12))
            continue
        err = np.max(np.abs(tgt.involution(tgt.involution(x)) - x))
        results.append(CheckResult(f"{lab}: involution", float(err), 1e-12))
        p = tgt.project(x)
        err = np.max(np.abs(tgt.metric(p) - np.eye(tgt.ambient_dim)))
        results.append(CheckResult(f"{lab}: G = Id on target", float(err), 1e-12))
        _, dd, _ = tgt.distance_derivatives(x)
        err = np.max(np.abs(np.einsum("...ij,...j->...i", tgt.metric(x), dd) - dd))
        results.append(CheckResult(f"{lab}: G Dd = Dd", float(err), 1e-10))
        err = np.max(np.abs(tgt.covariant_hessian_distance(x) - tgt.hessian_identity_rhs(x)))
        results.append(CheckResult(f"{lab}: covariant Hessian identity", float(err), 1e-8))
    return CheckReport(f"check-geometry (seed {seed}, {n_points} points per target)", tuple(results))


# -- variations -----------------------------------------------------------------
def flipped_reaction_first_variation(mesh, f, degree=5):
    """Mutant first variation with the sign of the reaction term flipped."""
    diff, react = first_variation_terms(mesh, f, degree)
    return (diff + react).ravel()


def _random_field(mesh, rng):
    x = np.array(mesh.vertices)
    scale = 1.0 + 0.3 * rng.uniform(-1.0, 1.0, (x.shape[0], 1))
    return x * scale + 0.1 * rng.standard_normal(x.shape)


def check_variations(seed: int = 0, n_fields: int = 20, level: int = 2,
                     first_variation_fn=first_variation,
                     second_variation_fn=second_variation_apply) -> CheckReport:
    """Finite-difference checks of the first and second variation.

    The gradient error of a field is ``max|g - g_fd| / max|g|`` with central
    differences of step 1e-6; the second variation is compared with second
    differences of step 1e-4 along a random direction.
    """
    rng = np.random.default_rng(seed)
    mesh = sphere_mesh(level)
    grad_err = 0.0
    hess_err = 0.0
    h1, h2 = 1e-6, 1e-4
    for _ in range(n_fields):
        f = _random_field(mesh, rng)
        g = np.asarray(first_variation_fn(mesh, f))
        flat = f.ravel()
        fd = np.empty_like(flat)
        for j in range(flat.size):
            fp = flat.copy()
            fp[j] += h1
            fm = flat.copy()
            fm[j] -= h1
            fd[j] = (discrete_energy(mesh, fp.reshape(f.shape))
                     - discrete_energy(mesh, fm.reshape(f.shape))) / (2.0 * h1)
        grad_err = max(grad_err, float(np.max(np.abs(g - fd)) / np.max(np.abs(g))))

        psi = rng.standard_normal(f.shape)
        e0 = discrete_energy(mesh, f)
        second = (discrete_energy(mesh, f + h2 * psi) - 2.0 * e0
                  + discrete_energy(mesh, f - h2 * psi)) / h2 ** 2
        exact = second_variation_fn(mesh, f, psi)
        hess_err = max(hess_err, abs(exact - second) / abs(exact))

    const = np.tile(rng.standard_normal(3), (mesh.n_vertices, 1))
    const /= np.linalg.norm(const[0])
    dconst = np.tile(rng.standard_normal(3), (mesh.n_vertices, 1))
    vanish = max(float(np.max(np.abs(first_variation_fn(mesh, const)))),
                 abs(second_variation_fn(mesh, const, dconst)))
    results = (
        CheckResult(f"first variation vs central differences ({n_fields} fields)", grad_err, 1e-5),
        CheckResult(f"second variation vs second differences ({n_fields} fields)", hess_err, 1e-4),
        CheckResult("constant map: both variations vanish", vanish, 1e-12),
    )
    return CheckReport(f"check-variations (seed {seed}, level-{level} sphere mesh)", results)
