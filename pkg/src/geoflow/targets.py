"""Target manifolds and their totally geodesic extensions.

Two constructions are provided:

* :class:`SphereTarget` -- the round sphere ``S^n`` with the metric obtained
  by averaging the Euclidean metric under the sphere inversion
  ``x -> x/|x|^2``, i.e. ``G(x) = rho(x) Id`` with ``rho = 1/2 + 1/(2|x|^4)``.
* :class:`HypersurfaceTarget` -- a closed hypersurface given by its signed
  distance ``d``; the involution is the reflection ``x -> x - 2 d Dd`` and the
  averaged metric is ``G = Id - 2 d D^2d + 2 d^2 D^2d D^2d``.

All evaluations are vectorised over leading axes: a point array of shape
``(..., n+1)`` yields scalars ``(...)``, vectors ``(..., n+1)`` and so on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

__all__ = [
    "SphereTarget",
    "HypersurfaceTarget",
    "MetricEval",
    "sphere_as_hypersurface",
    "ellipsoid",
    "make_target",
    "sphere_rho",
    "sphere_drho",
    "sphere_inversion",
    "hypersurface_involution",
    "extended_metric",
    "christoffel",
    "christoffel_from_metric",
    "covariant_hessian_distance",
    "signed_distance",
    "project",
]

DEFAULT_GUARD = 0.1


@dataclass(frozen=True)
class MetricEval:
    """Extended metric ``G`` and its derivative ``dG[..., b, k, i] = D_b G_ki``."""

    G: np.ndarray
    dG: np.ndarray
    point: np.ndarray


def christoffel_from_metric(G, dG):
    """Christoffel symbols ``Gamma[..., c, a, b]`` of a metric field.

    ``Gamma^c_ab = 1/2 G^{ck} (D_a G_bk + D_b G_ak - D_k G_ab)``.
    """
    dG = 0.5 * (dG + np.swapaxes(dG, -1, -2))  # exact symmetry in (a, b) below
    lower = 0.5 * (
        dG
        + np.swapaxes(dG, -3, -2)
        - np.moveaxis(dG, -3, -1)
    )  # lower[..., a, b, k]
    Ginv = np.linalg.inv(G)
    return np.einsum("...ck,...abk->...cab", Ginv, lower)


# -- sphere -----------------------------------------------------------------
@dataclass(frozen=True)
class SphereTarget:
    """Unit sphere ``S^n`` in ``R^(n+1)`` with the inversion-averaged metric.

    Evaluations closer than ``guard_radius`` to the origin raise
    :class:`GeometryError` instead of silently modifying ``rho``.
    """

    n: int = 2
    guard_radius: float = DEFAULT_GUARD
    name: str = "sphere"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sphere dimension must be >= 1")
        if not 0.0 < self.guard_radius < 1.0:
            raise ValueError("guard_radius must lie in (0, 1)")

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    def _norm(self, x):
        x = np.asarray(x, dtype=np.float64)
        r = np.linalg.norm(x, axis=-1)
        if np.any(r < self.guard_radius):
            raise GeometryError(
                f"evaluation too close to origin (|x| = {float(np.min(r)):.3g} "
                f"< guard {self.guard_radius})"
            )
        return x, r

    def admitted(self, x):
        return np.linalg.norm(np.asarray(x), axis=-1) >= self.guard_radius

    def rho(self, x):
        _, r = self._norm(x)
        return 0.5 + 0.5 / r ** 4

    def drho(self, x):
        x, r = self._norm(x)
        return -2.0 * x / r[..., None] ** 6

    def inversion(self, x):
        x, r = self._norm(x)
        return x / r[..., None] ** 2

    involution = inversion

    def signed_distance(self, x):
        _, r = self._norm(x)
        return r - 1.0

    def distance_derivatives(self, x):
        """``sigma = |x| - 1`` with its gradient and Euclidean Hessian."""
        x, r = self._norm(x)
        nu = x / r[..., None]
        eye = np.eye(x.shape[-1])
        hess = (eye - nu[..., :, None] * nu[..., None, :]) / r[..., None, None]
        return r - 1.0, nu, hess

    def project(self, x):
        x, r = self._norm(x)
        return x / r[..., None]

    def metric(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.rho(x)[..., None, None] * np.eye(x.shape[-1])

    def metric_derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.drho(x)[..., :, None, None] * np.eye(x.shape[-1])

    def christoffel(self, x):
        """Closed form ``(1/2rho)(d_cb D_a rho + d_ca D_b rho - d_ab D_c rho)``."""
        x = np.asarray(x, dtype=np.float64)
        rho = self.rho(x)
        dr = self.drho(x)
        eye = np.eye(x.shape[-1])
        gam = (
            eye[:, None, :] * dr[..., None, :, None]   # d_cb D_a rho
            + eye[:, :, None] * dr[..., None, None, :]  # d_ca D_b rho
            - eye[None, :, :] * dr[..., :, None, None]  # d_ab D_c rho
        )
        return gam / (2.0 * rho[..., None, None, None])

    def covariant_hessian_distance(self, x):
        """Hessian of ``sigma = |x| - 1`` with respect to ``G`` (closed form)."""
        x, r = self._norm(x)
        sigma = r - 1.0
        nu = x / r[..., None]
        eye = np.eye(x.shape[-1])
        pref = 1.0 / (r * (1.0 + r ** 4))
        iso = ((1.0 + r) * (1.0 + r ** 2) * sigma)[..., None, None] * eye
        aniso = (3.0 - r ** 4)[..., None, None] * nu[..., :, None] * nu[..., None, :]
        return pref[..., None, None] * (iso + aniso)

    def monitor_distance(self, x):
        return np.abs(np.linalg.norm(np.asarray(x), axis=-1) - 1.0)


# -- hypersurfaces ------------------------------------------------------------
class HypersurfaceTarget:
    """Closed hypersurface ``M`` described by its signed distance function.

    Parameters
    ----------
    distance_fn : callable
        ``distance_fn(x) -> (d, Dd, D2d)`` for an array of points ``(..., n+1)``.
    n : int
        Dimension of ``M``; points live in ``R^(n+1)``.
    tube_halfwidth : float
        Half width of the tubular neighbourhood in which ``d`` is smooth and
        the extended metric is used.
    third_fn : callable, optional
        ``third_fn(x) -> D3d`` of shape ``(..., n+1, n+1, n+1)``.  When given,
        ``DG`` is differentiated analytically, otherwise by central
        differences of ``G`` with step ``fd_step``.
    """

    def __init__(self, distance_fn, n, tube_halfwidth, third_fn=None, fd_step=1e-6,
                 name="hypersurface"):
        if tube_halfwidth <= 0:
            raise ValueError("tube_halfwidth must be positive")
        self.distance_fn = distance_fn
        self.n = int(n)
        self.tube_halfwidth = float(tube_halfwidth)
        self.third_fn = third_fn
        self.fd_step = float(fd_step)
        self.name = name

    def __repr__(self):
        return f"HypersurfaceTarget(name={self.name!r}, n={self.n}, tube_halfwidth={self.tube_halfwidth})"

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    def distance_derivatives(self, x, check=True):
        x = np.asarray(x, dtype=np.float64)
        d, dd, d2d = self.distance_fn(x)
        if check and np.any(np.abs(d) > self.tube_halfwidth):
            worst = float(np.max(np.abs(d)))
            raise GeometryError(
                f"point outside tubular neighbourhood (|d| = {worst:.3g} > {self.tube_halfwidth:.3g})"
            )
        return d, dd, d2d

    def admitted(self, x):
        d, _, _ = self.distance_derivatives(x, check=False)
        return np.abs(d) <= self.tube_halfwidth

    def signed_distance(self, x):
        return self.distance_derivatives(x)[0]

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        d, dd, _ = self.distance_derivatives(x)
        return x - d[..., None] * dd

    def involution(self, x):
        x = np.asarray(x, dtype=np.float64)
        d, dd, _ = self.distance_derivatives(x)
        return x - 2.0 * d[..., None] * dd

    def _metric_from(self, d, hess):
        eye = np.eye(hess.shape[-1])
        hh = hess @ hess
        return eye - 2.0 * d[..., None, None] * hess + 2.0 * (d ** 2)[..., None, None] * hh

    def metric(self, x, check=True):
        d, _, hess = self.distance_derivatives(x, check=check)
        G = self._metric_from(d, hess)
        if check:
            try:
                np.linalg.cholesky(G)
            except np.linalg.LinAlgError:
                raise GeometryError("metric not positive definite (tube too wide)") from None
        return G

    def metric_derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.distance_derivatives(x)  # tube check on the evaluation point itself
        if self.third_fn is not None:
            return self._metric_derivative_analytic(x)
        h = self.fd_step
        D = x.shape[-1]
        out = np.empty(x.shape + (D, D))
        for b in range(D):
            e = np.zeros(D)
            e[b] = h
            gp = self.metric(x + e, check=False)
            gm = self.metric(x - e, check=False)
            out[..., b, :, :] = (gp - gm) / (2.0 * h)
        return out

    def _metric_derivative_analytic(self, x):
        d, dd, H = self.distance_derivatives(x)
        T = self.third_fn(x)  # T[..., k, i, b] = D_k D_i D_b d
        dH = np.moveaxis(T, -1, -3)  # dH[..., b, k, i] = D_b H_ki
        HH = H @ H
        d_ = d[..., None, None, None]
        ddb = dd[..., :, None, None]
        return (
            -2.0 * ddb * H[..., None, :, :]
            - 2.0 * d_ * dH
            + 4.0 * d_ * ddb * HH[..., None, :, :]
            + 2.0 * d_ ** 2 * (dH @ H[..., None, :, :] + H[..., None, :, :] @ dH)
        )

    def christoffel(self, x):
        return christoffel_from_metric(self.metric(x), self.metric_derivative(x))

    def covariant_hessian_distance(self, x):
        """``D^2 d - Gamma^c_ab D_c d`` computed from the Christoffel symbols."""
        d, dd, H = self.distance_derivatives(x)
        gam = self.christoffel(x)
        return H - np.einsum("...cab,...c->...ab", gam, dd)

    def hessian_identity_rhs(self, x):
        """``d D^2d D^2d``, the closed form the covariant Hessian must match."""
        d, _, H = self.distance_derivatives(x)
        return d[..., None, None] * (H @ H)

    def monitor_distance(self, x):
        return np.abs(self.distance_derivatives(x, check=False)[0])


def _sphere_distance(radius):
    def fn(x):
        r = np.linalg.norm(x, axis=-1)
        nu = x / r[..., None]
        eye = np.eye(x.shape[-1])
        hess = (eye - nu[..., :, None] * nu[..., None, :]) / r[..., None, None]
        return r - radius, nu, hess

    def third(x):
        r = np.linalg.norm(x, axis=-1)
        nu = x / r[..., None]
        eye = np.eye(x.shape[-1])
        t = (
            eye[:, :, None] * nu[..., None, None, :]
            + eye[:, None, :] * nu[..., None, :, None]
            + eye[None, :, :] * nu[..., :, None, None]
        )
        t = 3.0 * nu[..., :, None, None] * nu[..., None, :, None] * nu[..., None, None, :] - t
        return t / (r ** 2)[..., None, None, None]

    return fn, third


def sphere_as_hypersurface(n=2, radius=1.0, tube_halfwidth=None, analytic_derivative=False):
    """Sphere of given radius treated through its signed distance function."""
    fn, third = _sphere_distance(float(radius))
    if tube_halfwidth is None:
        tube_halfwidth = 0.4 * radius
    return HypersurfaceTarget(fn, n, tube_halfwidth,
                              third_fn=third if analytic_derivative else None,
                              name="sphere_as_hypersurface")


def _ellipsoid_closest(x, e2, tol=1e-12, max_iter=50):
    """Closest point parameter ``t`` with ``y = e2 x / (e2 + t)`` on the ellipsoid.

    Safeguarded Newton on ``F(t) = sum (e x / (e2 + t))^2 - 1``, which is
    convex and decreasing on ``(-min e2, inf)``.
    """
    def F(t):
        return np.sum(e2 * x ** 2 / (e2 + t[:, None]) ** 2, axis=1) - 1.0

    def dF(t):
        return -2.0 * np.sum(e2 * x ** 2 / (e2 + t[:, None]) ** 3, axis=1)

    phi = np.sum(x ** 2 / e2, axis=1) - 1.0
    grad2 = np.sum(4.0 * x ** 2 / e2 ** 2, axis=1)
    outside = phi > 0
    lo = np.where(outside, 0.0, -e2.min())
    hi = np.where(outside, np.sqrt(e2.max()) * np.linalg.norm(x, axis=1) + 1.0, 0.0)
    t = np.clip(2.0 * phi / np.maximum(grad2, 1e-300), lo, hi)
    t = np.where((t <= lo) | (t >= hi), 0.5 * (lo + hi), t)
    t = np.where(phi == 0.0, 0.0, t)

    done = phi == 0.0
    for _ in range(max_iter):
        f = F(t)
        lo = np.where(f > 0, t, lo)
        hi = np.where(f < 0, t, hi)
        step = f / dF(t)
        t_new = t - step
        bad = ~((t_new > lo) & (t_new < hi))
        t_new = np.where(bad, 0.5 * (lo + hi), t_new)
        conv = np.abs(t_new - t) <= tol * (1.0 + np.abs(t))
        t = np.where(done, t, t_new)
        done = done | conv | (f == 0.0)
        if np.all(done):
            break
    else:
        raise GeometryError("closest-point iteration did not converge")
    # one polishing Newton step
    f = F(t)
    df = dF(t)
    t = np.where(np.abs(f) > 0, t - f / df, t)
    return t


def _ellipsoid_distance(axes):
    e = np.asarray(axes, dtype=np.float64)
    e2 = e ** 2

    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        flat = x.reshape(-1, shape[-1])
        t = _ellipsoid_closest(flat, e2)
        y = e2 * flat / (e2 + t[:, None])
        g = y / e2  # half the gradient of the level-set function
        gn = np.linalg.norm(g, axis=1)
        d = t * gn
        nu = g / gn[:, None]
        D = shape[-1]
        eye = np.eye(D)
        P = eye - nu[:, :, None] * nu[:, None, :]
        shape_op = P @ (np.eye(D) / e2)[None] @ P / gn[:, None, None]
        hess = np.linalg.solve(eye + d[:, None, None] * shape_op, shape_op)
        hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
        return d.reshape(shape[:-1]), nu.reshape(shape), hess.reshape(shape + (D,))

    return fn


def ellipsoid(axes=(1.0, 0.8, 0.6), tube_halfwidth=None):
    """Axis-aligned ellipsoid ``sum x_i^2 / a_i^2 = 1``."""
    axes = tuple(float(a) for a in axes)
    if min(axes) <= 0:
        raise ValueError("ellipsoid semi-axes must be positive")
    kmax = max(axes) / min(axes) ** 2
    if tube_halfwidth is None:
        tube_halfwidth = 0.4 / kmax
    return HypersurfaceTarget(_ellipsoid_distance(axes), len(axes) - 1, tube_halfwidth,
                              name="ellipsoid")


def make_target(spec, n=2):
    """Build a target from a CLI/config description.

    Accepts a target object, a name (``"sphere"``, ``"sphere_as_hypersurface"``,
    ``"ellipsoid"``) or a dict ``{"name": ..., "axes": [...], ...}``.
    """
    if isinstance(spec, (SphereTarget, HypersurfaceTarget)):
        return spec
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name", "sphere")
    if name == "sphere":
        return SphereTarget(n=spec.get("n", n), guard_radius=spec.get("guard_radius", DEFAULT_GUARD))
    if name == "sphere_as_hypersurface":
        return sphere_as_hypersurface(n=spec.get("n", n), radius=spec.get("radius", 1.0),
                                      tube_halfwidth=spec.get("tube_halfwidth"))
    if name == "ellipsoid":
        return ellipsoid(spec.get("axes", (1.0, 0.8, 0.6)), spec.get("tube_halfwidth"))
    raise ValueError(f"unknown target {name!r}")


# -- functional API -------------------------------------------------------------
_DEFAULT_SPHERE = SphereTarget()


def sphere_rho(x, guard_radius=DEFAULT_GUARD):
    return SphereTarget(n=max(np.shape(x)[-1] - 1, 1), guard_radius=guard_radius).rho(x)


def sphere_drho(x, guard_radius=DEFAULT_GUARD):
    return SphereTarget(n=max(np.shape(x)[-1] - 1, 1), guard_radius=guard_radius).drho(x)


def sphere_inversion(x, guard_radius=DEFAULT_GUARD):
    return SphereTarget(n=max(np.shape(x)[-1] - 1, 1), guard_radius=guard_radius).inversion(x)


def hypersurface_involution(target, x):
    return target.involution(x)


def extended_metric(target, x) -> MetricEval:
    x = np.asarray(x, dtype=np.float64)
    return MetricEval(G=target.metric(x), dG=target.metric_derivative(x), point=x)


def christoffel(target, x):
    return target.christoffel(x)


def covariant_hessian_distance(target, x):
    return target.covariant_hessian_distance(x)


def signed_distance(target, x):
    return target.signed_distance(x)


def project(target, x):
    return target.project(x)
