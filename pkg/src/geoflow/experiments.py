"""Experiment presets, the circle convergence study and the scaling test.

These return plain result objects; writing artifacts and judging the
results is left to :mod:`geoflow.cli` and the tests.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import h1_error
from .flow import (
    FlowConfig,
    FlowState,
    MonitorRecord,
    monitor_rows,
    run_flow,
    scaling_ode_reference,
    solve_stationary,
    step,
)
from .flow import _monitor, _resolve_target
from .mesh import (
    MeshStats,
    VertexField,
    deform,
    experiment_deformation,
    mesh_stats,
    polygonal_circle,
    sphere_mesh,
)

__all__ = [
    "LevelRun",
    "CircleRow",
    "ScalingRun",
    "experiment_setup",
    "experiment1",
    "experiment2",
    "experiment3",
    "converge_circle",
    "scaling_test",
    "beta_scaling",
    "PRESETS",
]

# alpha(x1) = a x1^2 + b for the deformed domain
PRESETS = {
    "experiment1": (0.6, 0.4),
    "experiment2": (0.6, 0.4),
    "experiment3": (0.75, 0.25),
}


@dataclass
class LevelRun:
    """One flow run on one refinement level."""

    name: str
    level: int
    mesh: object
    f0: VertexField
    state: FlowState
    rows: list
    stats: MeshStats
    snapshots: list = field(default_factory=list)  # (m, t, VertexField)
    wall_time: float = 0.0

    @property
    def tag(self) -> str:
        return f"{self.name}_L{self.level}"

    @property
    def sup_max_distance(self) -> float:
        return max(r["max_distance"] for r in self.rows)

    @property
    def final_time(self) -> float:
        return self.state.t

    def first_time_below(self, threshold: float):
        for r in self.rows:
            if r["max_distance"] < threshold:
                return r["t"]
        return None


def beta_scaling(y):
    """``y -> (0.5 + y1^2 y3^2) y``, the radial perturbation of the second preset."""
    y = np.asarray(y, dtype=np.float64)
    beta = 0.5 + y[:, 0] ** 2 * y[:, 2] ** 2
    return beta[:, None] * y


def experiment_setup(name: str, level: int, variant: str = "corrected"):
    """Deformed sphere mesh and initial map for a preset.

    The initial map is the identity interpolant on the undeformed sphere
    mesh; deforming the mesh keeps these vertex values.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    a, b = PRESETS[name]
    sphere = sphere_mesh(level)
    values = np.array(sphere.vertices)
    if name == "experiment2":
        values = beta_scaling(values)
    mesh = deform(sphere, experiment_deformation(a, b, variant))
    return mesh, VertexField(mesh, values, name="f")


def _snapshot_callback(store, every):
    def cb(state):
        if state.m == 0 or (every and state.m % every == 0):
            store.append((state.m, state.t, state.f))
    return cb


def _run_preset(name, level, config, variant, snapshot_every):
    mesh, f0 = experiment_setup(name, level, variant)
    snaps = []
    t0 = time.perf_counter()
    state, rows = run_flow(mesh, f0, config, callback=_snapshot_callback(snaps, snapshot_every))
    if snaps[-1][0] != state.m:
        snaps.append((state.m, state.t, state.f))
    return LevelRun(name=name, level=level, mesh=mesh, f0=f0, state=state, rows=rows,
                    stats=mesh_stats(mesh), snapshots=snaps,
                    wall_time=time.perf_counter() - t0)


def experiment1(levels=(4, 5, 6), config: FlowConfig | None = None, variant="corrected",
                snapshot_every=None):
    """Flow of the identity on ellipsoid-like domains, one run per level."""
    config = config or FlowConfig()
    return [_run_preset("experiment1", lv, config, variant, snapshot_every) for lv in levels]


def experiment2(level=5, config: FlowConfig | None = None, variant="corrected",
                snapshot_every=None):
    """As :func:`experiment1`, starting from an initial map off the sphere."""
    return _run_preset("experiment2", level, config or FlowConfig(), variant, snapshot_every)


def experiment3(level=5, config: FlowConfig | None = None, variant="corrected",
                snapshot_every=None):
    """As :func:`experiment1` with the stronger deformation ``alpha = 0.75 x1^2 + 0.25``."""
    return _run_preset("experiment3", level, config or FlowConfig(), variant, snapshot_every)


# -- circle convergence -----------------------------------------------------------
@dataclass(frozen=True)
class CircleRow:
    k: int
    n_segments: int
    h: float
    error: float
    eoc: float  # NaN on the coarsest level
    residual: float
    residual_bound: float
    steps: int


def converge_circle(levels=(0, 1, 2, 3), config: FlowConfig | None = None):
    """Stationary maps from ``8 * 2^k``-gons into the circle and their H1 errors.

    The exact harmonic map is the identity; the error is measured against it
    through the radial lift.
    """
    config = config or FlowConfig()
    rows = []
    prev = None
    for k in levels:
        mesh = polygonal_circle(8 * 2 ** k)
        f0 = VertexField(mesh, np.array(mesh.vertices))
        res = solve_stationary(mesh, f0, config)
        err = h1_error(mesh, res.f, lambda x: x)
        h = mesh_stats(mesh).h_max
        eoc = math.nan if prev is None else math.log(prev[1] / err) / math.log(prev[0] / h)
        rows.append(CircleRow(k=k, n_segments=mesh.n_simplices, h=h, error=err, eoc=eoc,
                              residual=res.residual, residual_bound=res.residual_bound,
                              steps=res.state.m))
        prev = (h, err)
    return rows


# -- scaling test -----------------------------------------------------------------
@dataclass
class ScalingRun:
    r0: float
    times: np.ndarray
    mean_norm: np.ndarray
    reference: np.ndarray
    rows: list

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.mean_norm - self.reference)))


def _scaling_trajectory(r0, n, nsteps, tau):
    """Scaling-ODE values at ``m * tau`` for ``m = 0..nsteps`` (one RK4 step per interval)."""
    out = np.empty(nsteps + 1)
    out[0] = float(r0)
    for m in range(1, nsteps + 1):
        out[m] = scaling_ode_reference(out[m - 1], n, tau, dt=tau)
    return out


def scaling_test(level=5, r0s=(0.9, 1.1), t_end=1.0, config: FlowConfig | None = None):
    """Flow of ``r0 * identity`` on the sphere compared with the scaling ODE.

    Runs exactly ``round(t_end / tau)`` steps (no stopping rule) and records the
    mean vertex norm after each step.
    """
    config = config or FlowConfig()
    mesh = sphere_mesh(level)
    n = mesh.dim_surface
    nsteps = int(round(t_end / config.tau))
    out = []
    for r0 in r0s:
        f0 = VertexField(mesh, r0 * np.array(mesh.vertices))
        target = _resolve_target(config, f0.n_components)
        dist, energy = _monitor(mesh, np.asarray(f0.values), target, config)
        state = FlowState(f=f0, m=0, tau=config.tau,
                          monitors=(MonitorRecord(0.0, dist, energy, 0.0, 0),))
        norms = [float(np.mean(np.linalg.norm(f0.values, axis=1)))]
        for _ in range(nsteps):
            state = step(state, mesh, config, target)
            norms.append(float(np.mean(np.linalg.norm(state.f.values, axis=1))))
        times = np.arange(nsteps + 1) * config.tau
        ref = _scaling_trajectory(r0, n, nsteps, config.tau)
        out.append(ScalingRun(r0=r0, times=times, mean_norm=np.array(norms), reference=ref,
                              rows=monitor_rows(state)))
    return out
