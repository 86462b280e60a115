"""Semi-implicit time stepping of the extended harmonic map heat flow.

Each step freezes the nonlinear weights at the current map ``f^m`` and
solves one symmetric positive definite system ``(M/tau + S) f^{m+1} = b``
with conjugate gradients, warm started from ``f^m``.  The flow is stopped
once the largest vertex velocity ``|f^{m+1} - f^m| / tau`` drops below
``stop_tol``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_general_system, assemble_step_system, general_energy
from .errors import FlowError, FlowNotConverged, GeoflowError, SolverError
from .mesh import VertexField
from .targets import HypersurfaceTarget, SphereTarget, make_target

logger = logging.getLogger(__name__)

__all__ = [
    "FlowConfig",
    "FlowState",
    "MonitorRecord",
    "StationaryResult",
    "MONITOR_COLUMNS",
    "cg_solve",
    "step",
    "run_flow",
    "solve_stationary",
    "monitor_rows",
    "scaling_ode_reference",
    "unstable_extension_ode",
]

MONITOR_COLUMNS = ("t", "max_distance", "energy", "max_velocity", "cg_iters")
SCHEMES = ("sphere_specialized", "general_metric")


def _colnorm(A):
    return np.sqrt(np.einsum("ij,ij->j", A, A))


def cg_solve(A, b, x0=None, rel_tol=1e-10, max_iters=None, preconditioner=None):
    """Conjugate gradients for SPD ``A``; columns of a 2-D ``b`` are solved independently.

    Parameters
    ----------
    A : sparse matrix, ndarray or LinearOperator
        Symmetric positive definite operator supporting ``A @ x``.
    b : ndarray, shape (N,) or (N, k)
    x0 : ndarray, optional
        Initial guess (zeros by default).
    rel_tol : float
        Stop once ``||A x - b|| <= rel_tol * ||b||`` for every column.
    max_iters : int, optional
        Defaults to ``10 * b.size``.
    preconditioner : {None, "jacobi"}

    Returns
    -------
    x : ndarray
        Solution with the shape of ``b``.
    iterations : int

    Raises
    ------
    SolverError
        On NaN residuals or when ``max_iters`` is exhausted.
    """
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=np.float64).reshape(B.shape)
    if max_iters is None:
        max_iters = 10 * B.size
    if preconditioner == "jacobi":
        diag = np.asarray(A.diagonal()).ravel()
        if np.any(diag <= 0):
            raise SolverError("Jacobi preconditioner needs a positive diagonal")
        inv_diag = (1.0 / diag)[:, None]
    elif preconditioner is None:
        inv_diag = None
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    target = rel_tol * _colnorm(B)
    iters = 0
    # the outer loop restarts from the true residual if the recursion drifted
    for _ in range(3):
        R = B - A @ X
        rn = _colnorm(R)
        if np.any(np.isnan(rn)):
            raise SolverError("NaN residual in conjugate gradients", residual=float("nan"), iterations=iters)
        if np.all(rn <= target):
            return (X[:, 0] if vec else X), iters
        Z = R if inv_diag is None else inv_diag * R
        P = Z.copy()
        rz = np.einsum("ij,ij->j", R, Z)
        active = rn > target
        while iters < max_iters:
            iters += 1
            AP = A @ P
            pap = np.einsum("ij,ij->j", P, AP)
            alpha = np.divide(rz, pap, out=np.zeros_like(rz), where=active & (pap != 0))
            X += alpha * P
            R -= alpha * AP
            rn = _colnorm(R)
            if np.any(np.isnan(rn)):
                raise SolverError("NaN residual in conjugate gradients",
                                  residual=float("nan"), iterations=iters)
            active = rn > target
            if not np.any(active):
                break
            Z = R if inv_diag is None else inv_diag * R
            rz_new = np.einsum("ij,ij->j", R, Z)
            beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=active & (rz != 0))
            P = Z + beta * P
            rz = rz_new
        else:
            worst = float(np.max(rn / np.where(target > 0, target / rel_tol, 1.0)))
            raise SolverError(
                f"conjugate gradients did not converge in {max_iters} iterations "
                f"(relative residual {worst:.3e})",
                residual=worst, iterations=iters,
            )
    R = B - A @ X
    worst = float(np.max(_colnorm(R) / np.where(target > 0, target / rel_tol, 1.0)))
    raise SolverError(f"conjugate gradients stagnated at relative residual {worst:.3e}",
                      residual=worst, iterations=iters)


@dataclass(frozen=True)
class FlowConfig:
    tau: float = 1e-3
    stop_tol: float = 1e-5
    max_steps: int = 1_000_000
    cg_rel_tol: float = 1e-10
    cg_max_iters: int | None = None
    target: object = "sphere"
    scheme: str = "sphere_specialized"
    deterministic: bool = True
    preconditioner: str | None = None
    quadrature_degree: int = 5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class MonitorRecord:
    t: float
    max_distance: float
    energy: float
    max_velocity: float
    cg_iters: int

    def as_row(self):
        return {k: getattr(self, k) for k in MONITOR_COLUMNS}


@dataclass(frozen=True)
class FlowState:
    """Map ``f^m`` after ``m`` steps; time is ``m * tau`` (no accumulation drift)."""

    f: VertexField
    m: int
    tau: float
    monitors: tuple = field(default_factory=tuple)

    @property
    def t(self) -> float:
        return self.m * self.tau


def _resolve_target(config, n_components):
    return make_target(config.target, n=n_components - 1)


def _monitor(mesh, f, target, config):
    dist = float(np.max(target.monitor_distance(f)))
    energy = general_energy(mesh, f, target, config.quadrature_degree)
    return dist, energy


def _assemble(mesh, fv, config, target):
    if config.scheme == "sphere_specialized":
        if not isinstance(target, SphereTarget):
            raise ValueError("the sphere-specialised scheme needs a SphereTarget")
        return assemble_step_system(mesh, fv, config.tau, target, config.quadrature_degree)
    return assemble_general_system(mesh, fv, config.tau, target, config.quadrature_degree)


def _solve(system, x0, config):
    A = system.matrix
    if system.coupled:
        x, iters = cg_solve(A, system.rhs.ravel(), x0.ravel(), config.cg_rel_tol,
                            config.cg_max_iters, config.preconditioner)
        return x.reshape(x0.shape), iters
    return cg_solve(A, system.rhs, x0, config.cg_rel_tol, config.cg_max_iters,
                    config.preconditioner)


def step(state: FlowState, mesh, config: FlowConfig, target=None) -> FlowState:
    """Advance one semi-implicit time step and append its monitor record."""
    if target is None:
        target = _resolve_target(config, state.f.n_components)
    fv = np.asarray(state.f.values)
    try:
        system = _assemble(mesh, fv, config, target)
        new, iters = _solve(system, fv, config)
    except GeoflowError as exc:
        raise FlowError(f"step {state.m + 1}: {exc}", step=state.m + 1,
                        history=list(state.monitors)) from exc
    velocity = float(np.max(np.linalg.norm(new - fv, axis=1))) / config.tau
    f_new = state.f.with_values(new)
    dist, energy = _monitor(mesh, new, target, config)
    m = state.m + 1
    rec = MonitorRecord(t=m * config.tau, max_distance=dist, energy=energy,
                        max_velocity=velocity, cg_iters=int(iters))
    return FlowState(f=f_new, m=m, tau=config.tau, monitors=state.monitors + (rec,))


def _check_initial(f0, target):
    vals = np.asarray(f0.values)
    if isinstance(target, SphereTarget):
        if np.any(np.abs(np.linalg.norm(vals, axis=1) - 1.0) >= 1.0):
            raise ValueError("initial map must satisfy ||f0| - 1| < 1 at every vertex")
    elif isinstance(target, HypersurfaceTarget):
        if not np.all(target.admitted(vals)):
            raise ValueError("initial map leaves the tubular neighbourhood of the target")


def run_flow(mesh, f0: VertexField, config: FlowConfig = FlowConfig(), callback=None):
    """Iterate :func:`step` until ``max_velocity <= stop_tol``.

    Parameters
    ----------
    callback : callable, optional
        Called as ``callback(state)`` after the initial state and every step.

    Returns
    -------
    state : FlowState
        Final state; ``state.monitors[0]`` describes the initial map (its
        velocity and iteration count are reported as zero).
    rows : list of dict
        Monitor history with the CSV columns ``t, max_distance, energy,
        max_velocity, cg_iters``.

    Raises
    ------
    FlowNotConverged
        If ``max_steps`` is reached; ``exc.history`` holds the records.
    """
    target = _resolve_target(config, f0.n_components)
    _check_initial(f0, target)
    dist, energy = _monitor(mesh, np.asarray(f0.values), target, config)
    first = MonitorRecord(t=0.0, max_distance=dist, energy=energy, max_velocity=0.0, cg_iters=0)
    state = FlowState(f=f0, m=0, tau=config.tau, monitors=(first,))
    if callback is not None:
        callback(state)
    while state.m < config.max_steps:
        state = step(state, mesh, config, target)
        if callback is not None:
            callback(state)
        rec = state.monitors[-1]
        if state.m % 500 == 0:
            logger.info("t=%.3f dist=%.3e E=%.6f v=%.3e", rec.t, rec.max_distance,
                        rec.energy, rec.max_velocity)
        if rec.max_velocity <= config.stop_tol:
            return state, monitor_rows(state)
    raise FlowNotConverged(
        f"flow did not reach stationarity within {config.max_steps} steps "
        f"(last velocity {state.monitors[-1].max_velocity:.3e})",
        step=state.m, history=list(state.monitors),
    )


def monitor_rows(state):
    return [rec.as_row() for rec in state.monitors]


@dataclass(frozen=True)
class StationaryResult:
    """Discrete stationary map with its residual certificate.

    ``residual`` is the largest component of the discrete first variation
    (the residual of the stationary equation) at ``f``; ``residual_bound`` is
    what the velocity stopping rule guarantees for it.
    """

    f: VertexField
    residual: float
    residual_bound: float
    state: FlowState

    @property
    def certified(self) -> bool:
        return self.residual <= self.residual_bound


def solve_stationary(mesh, f0: VertexField, config: FlowConfig = FlowConfig()) -> StationaryResult:
    """Approximate a discrete harmonic map by running the flow to stationarity.

    The stopping rule bounds ``|f^{m+1} - f^m| <= tau * stop_tol`` per vertex, so
    the residual of the stationary equation at the final map is bounded by
    ``2 stop_tol max_i sum_j (|M_ij| + tau |S_ij|)``; the factor two covers the
    last step and the linear solver tolerance.
    """
    target = _resolve_target(config, f0.n_components)
    state, _ = run_flow(mesh, f0, config)
    fv = np.asarray(state.f.values)
    system = _assemble(mesh, fv, config, target)
    if system.coupled:
        res = system.matrix @ fv.ravel() - system.rhs.ravel()
    else:
        res = (system.matrix @ fv - system.rhs).ravel()
    rowsum = np.asarray(abs(system.mass).sum(axis=1)).ravel() + config.tau * np.asarray(
        abs(system.stiffness).sum(axis=1)).ravel()
    bound = 2.0 * config.stop_tol * float(rowsum.max())
    return StationaryResult(f=state.f, residual=float(np.max(np.abs(res))),
                            residual_bound=bound, state=state)


# -- reference ODEs -----------------------------------------------------------------
def _rk4(rhs, y0, t_end, dt, blowup=None):
    nsteps = max(1, math.ceil(t_end / dt - 1e-12)) if t_end > 0 else 0
    h = t_end / nsteps if nsteps else 0.0
    y = float(y0)
    for _ in range(nsteps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if blowup is not None and (not math.isfinite(y) or abs(y) > blowup):
            return y, True
    return y, False


def scaling_ode_reference(r0, n, t_end, dt=1e-3):
    """Radius ``r(t_end)`` of ``r' = n r (1 - r^4) / (1 + r^4)`` by classical RK4.

    ``r(t) x`` is the extended flow of the identity of ``S^n`` scaled by ``r``.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    r, _ = _rk4(lambda r: n * r * (1.0 - r ** 4) / (1.0 + r ** 4), r0, t_end, dt)
    return r


def unstable_extension_ode(r0, n, t_end, dt=1e-3, blowup=1e6):
    """RK4 of ``r' = -n r + n r^2``, the radius ODE of the naive extension.

    Returns ``(r, blew_up)``; integration stops early once ``|r| > blowup``.
    """
    return _rk4(lambda r: -n * r + n * r ** 2, r0, t_end, dt, blowup=blowup)
