import math

import numpy as np
import pytest

from geoflow.experiments import (
    PRESETS,
    beta_scaling,
    converge_circle,
    experiment1,
    experiment2,
    experiment_setup,
    scaling_test,
)
from geoflow.flow import FlowConfig

FAST = FlowConfig(tau=1e-2, stop_tol=1e-3)


def test_beta_scaling():
    y = np.array([[1.0, 0.0, 0.0], [0.6, 0.0, 0.8]])
    np.testing.assert_allclose(beta_scaling(y), [[0.5, 0, 0], [0.5 * 0.6 + 0.6 ** 3 * 0.64, 0,
                                                               0.5 * 0.8 + 0.8 * 0.36 * 0.64]])


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_setup_keeps_vertex_values(name):
    mesh, f0 = experiment_setup(name, 2)
    a, b = PRESETS[name]
    assert mesh.n_vertices == f0.values.shape[0]
    # the deformed domain is not the sphere, the initial map lives near it
    assert np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1)) > 0.1
    r = np.linalg.norm(f0.values, axis=1)
    if name == "experiment2":
        assert np.max(np.abs(r - 1)) == pytest.approx(0.5)
    else:
        np.testing.assert_allclose(r, 1.0, atol=1e-15)


def test_setup_rejects_unknown_preset():
    with pytest.raises(ValueError):
        experiment_setup("experiment9", 2)


def test_experiment1_small_run():
    (run,) = experiment1(levels=(3,), config=FAST, snapshot_every=20)
    assert run.tag == "experiment1_L3"
    assert run.rows[0]["t"] == 0.0
    assert run.rows[-1]["max_velocity"] <= FAST.stop_tol
    assert run.final_time == pytest.approx(run.state.m * FAST.tau)
    assert run.snapshots[0][0] == 0 and run.snapshots[-1][0] == run.state.m
    assert all(s[0] % 20 == 0 for s in run.snapshots[:-1])
    assert run.sup_max_distance < 0.05
    energies = [r["energy"] for r in run.rows]
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))


def test_experiment2_distance_drops():
    run = experiment2(level=3, config=FAST)
    assert run.rows[0]["max_distance"] == pytest.approx(0.5)
    t = run.first_time_below(0.02)
    assert t is not None and 0 < t < run.final_time
    assert run.first_time_below(-1.0) is None


def test_converge_circle_small():
    rows = converge_circle(levels=(0, 1), config=FlowConfig(tau=1e-2, stop_tol=1e-4))
    assert [r.n_segments for r in rows] == [8, 16]
    assert math.isnan(rows[0].eoc)
    assert rows[1].error < rows[0].error
    assert rows[1].eoc > 1.5
    assert all(r.residual <= r.residual_bound for r in rows)


def test_scaling_test_small():
    runs = scaling_test(level=3, r0s=(0.9,), t_end=0.1, config=FlowConfig(tau=1e-2))
    (run,) = runs
    assert run.times.size == 11 and run.mean_norm.size == 11
    assert run.mean_norm[0] == pytest.approx(0.9)
    assert run.reference[0] == 0.9
    assert np.all(np.diff(run.mean_norm) > 0)
    assert run.max_deviation < 5e-2
    assert len(run.rows) == 11
