import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geoflow.checks import sample_tube_points
from geoflow.errors import GeometryError
from geoflow.targets import (
    HypersurfaceTarget,
    SphereTarget,
    christoffel,
    christoffel_from_metric,
    covariant_hessian_distance,
    ellipsoid,
    extended_metric,
    hypersurface_involution,
    make_target,
    project,
    signed_distance,
    sphere_as_hypersurface,
    sphere_drho,
    sphere_inversion,
    sphere_rho,
)

RNG = np.random.default_rng(12345)


def random_shell(n, lo=0.5, hi=2.0, dim=3):
    u = RNG.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * RNG.uniform(lo, hi, (n, 1))


# -- sphere inversion metric --------------------------------------------------------
def test_rho_on_unit_sphere():
    x = random_shell(20, 1.0, 1.0)
    np.testing.assert_allclose(sphere_rho(x), 1.0, atol=1e-15)
    np.testing.assert_allclose(sphere_drho(x), -2.0 * x, atol=1e-15)


def test_rho_at_two():
    assert sphere_rho(np.array([2.0, 0.0, 0.0])) == pytest.approx(17 / 32, abs=1e-16)


def test_drho_matches_finite_differences():
    x = random_shell(50)
    h = 1e-6
    fd = np.stack([(sphere_rho(x + h * e) - sphere_rho(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    np.testing.assert_allclose(sphere_drho(x), fd, rtol=1e-6, atol=1e-9)


def test_guard_radius():
    with pytest.raises(GeometryError, match="evaluation too close to origin"):
        sphere_rho(np.array([0.05, 0.0, 0.0]))
    with pytest.raises(GeometryError):
        SphereTarget().metric(np.array([[0.0, 0.0, 0.01]]))


def test_inversion_examples():
    np.testing.assert_allclose(sphere_inversion(np.array([2.0, 0.0, 0.0])), [0.5, 0, 0], atol=0)
    u = random_shell(20, 1.0, 1.0)
    np.testing.assert_allclose(sphere_inversion(u), u, atol=1e-15)


def test_inversion_is_involution():
    x = random_shell(1000)
    assert np.max(np.abs(sphere_inversion(sphere_inversion(x)) - x)) <= 1e-14


def test_sphere_metric_is_average_under_inversion():
    x = random_shell(30)
    tgt = SphereTarget()
    h = 1e-6
    for p in x:
        Di = np.column_stack([(tgt.inversion(p + h * e) - tgt.inversion(p - h * e)) / (2 * h)
                              for e in np.eye(3)])
        np.testing.assert_allclose(tgt.metric(p), 0.5 * (np.eye(3) + Di.T @ Di), atol=1e-6)


def test_sphere_metric_derivative_vs_fd():
    tgt = SphereTarget()
    x = random_shell(40)
    h = 1e-6
    fd = np.stack([(tgt.metric(x + h * e) - tgt.metric(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    dG = tgt.metric_derivative(x)
    assert np.max(np.abs(dG - fd)) <= 1e-5 * np.max(np.abs(dG))


def test_sphere_christoffel_on_unit_sphere():
    x = random_shell(10, 1.0, 1.0)
    gam = SphereTarget().christoffel(x)
    d = np.eye(3)
    expected = -(np.einsum("cb,ka->kcab", d, x) + np.einsum("ca,kb->kcab", d, x)
                 - np.einsum("ab,kc->kcab", d, x))
    np.testing.assert_allclose(gam, expected, atol=1e-14)


def test_sphere_covariant_hessian_on_unit_sphere():
    x = random_shell(10, 1.0, 1.0)
    np.testing.assert_allclose(SphereTarget().covariant_hessian_distance(x),
                               np.einsum("ka,kb->kab", x, x), atol=1e-14)


def test_sphere_covariant_hessian_closed_form_vs_christoffel():
    tgt = SphereTarget()
    x = random_shell(200)
    r = np.linalg.norm(x, axis=1)
    nu = x / r[:, None]
    hess = (np.eye(3) - np.einsum("ka,kb->kab", nu, nu)) / r[:, None, None]
    generic = hess - np.einsum("kcab,kc->kab", tgt.christoffel(x), nu)
    np.testing.assert_allclose(tgt.covariant_hessian_distance(x), generic, atol=1e-12)


# -- hypersurface metric ------------------------------------------------------------
HYPER = [sphere_as_hypersurface(), sphere_as_hypersurface(analytic_derivative=True), ellipsoid()]
IDS = ["sphere-fd", "sphere-analytic", "ellipsoid"]


def test_involution_examples():
    tgt = sphere_as_hypersurface()
    np.testing.assert_allclose(hypersurface_involution(tgt, np.array([1.2, 0, 0])), [0.8, 0, 0],
                               atol=1e-15)
    u = random_shell(10, 1.0, 1.0)
    np.testing.assert_allclose(tgt.involution(u), u, atol=1e-15)


@pytest.mark.parametrize("tgt", HYPER, ids=IDS)
def test_involution_flips_distance(tgt):
    x = sample_tube_points(tgt, np.random.default_rng(3), 300)
    d = tgt.signed_distance(x)
    np.testing.assert_allclose(tgt.signed_distance(tgt.involution(x)), -d, atol=1e-12)
    assert np.max(np.abs(tgt.involution(tgt.involution(x)) - x)) <= 1e-12


def test_outside_tube():
    tgt = sphere_as_hypersurface()
    with pytest.raises(GeometryError, match="point outside tubular neighbourhood"):
        tgt.involution(np.array([2.0, 0, 0]))
    with pytest.raises(GeometryError):
        tgt.project(np.array([0.3, 0, 0]))


@pytest.mark.parametrize("tgt", HYPER, ids=IDS)
def test_metric_identity_on_target(tgt):
    p = tgt.project(sample_tube_points(tgt, np.random.default_rng(4), 300))
    assert np.max(np.abs(extended_metric(tgt, p).G - np.eye(3))) <= 1e-12


def test_metric_preserves_normal_along_ray():
    tgt = sphere_as_hypersurface()
    for t in np.linspace(-0.35, 0.35, 15):
        x = np.array([1.0 + t, 0.0, 0.0])
        dd = tgt.distance_derivatives(x)[1]
        np.testing.assert_allclose(tgt.metric(x) @ dd, dd, atol=1e-10)


@pytest.mark.parametrize("tgt", HYPER, ids=IDS)
def test_distance_function_properties(tgt):
    x = sample_tube_points(tgt, np.random.default_rng(5), 500)
    d, dd, H = tgt.distance_derivatives(x)
    assert np.max(np.abs(np.linalg.norm(dd, axis=1) - 1.0)) <= 1e-10
    assert np.max(np.abs(np.einsum("kab,kb->ka", H, dd))) <= 1e-8
    np.testing.assert_allclose(H, np.swapaxes(H, 1, 2), atol=1e-12)
    a = tgt.project(x)
    assert np.max(np.abs(signed_distance(tgt, a))) <= 1e-12
    np.testing.assert_allclose(np.linalg.norm(x - a, axis=1), np.abs(d), atol=1e-12)


def test_ellipsoid_derivatives_vs_fd():
    tgt = ellipsoid()
    x = sample_tube_points(tgt, np.random.default_rng(6), 100)
    d, dd, H = tgt.distance_derivatives(x)
    h = 1e-6
    fd1 = np.stack([(tgt.signed_distance(x + h * e) - tgt.signed_distance(x - h * e)) / (2 * h)
                    for e in np.eye(3)], axis=1)
    fd2 = np.stack([(tgt.distance_derivatives(x + h * e)[1] - tgt.distance_derivatives(x - h * e)[1]) / (2 * h)
                    for e in np.eye(3)], axis=2)
    np.testing.assert_allclose(dd, fd1, atol=1e-8)
    np.testing.assert_allclose(H, fd2, atol=1e-6)


def test_ellipsoid_projection_is_closest_point():
    axes = np.array([1.0, 0.8, 0.6])
    tgt = ellipsoid(tuple(axes))
    x = sample_tube_points(tgt, np.random.default_rng(7), 200)
    a = tgt.project(x)
    np.testing.assert_allclose(np.sum((a / axes) ** 2, axis=1), 1.0, atol=1e-12)
    grad = a / axes ** 2
    grad /= np.linalg.norm(grad, axis=1, keepdims=True)
    r = x - a
    # x - a(x) is normal to the ellipsoid at a(x)
    assert np.max(np.linalg.norm(np.cross(r, grad), axis=1)) <= 1e-12


def test_unit_ellipsoid_is_sphere():
    e = ellipsoid((1.0, 1.0, 1.0), tube_halfwidth=0.4)
    s = sphere_as_hypersurface()
    x = sample_tube_points(s, np.random.default_rng(8), 200)
    for a, b in zip(e.distance_derivatives(x), s.distance_derivatives(x)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_metric_derivative_fd_matches_analytic():
    fd, an = sphere_as_hypersurface(), sphere_as_hypersurface(analytic_derivative=True)
    x = sample_tube_points(fd, np.random.default_rng(9), 300)
    a = an.metric_derivative(x)
    assert np.max(np.abs(fd.metric_derivative(x) - a)) <= 1e-5 * np.max(np.abs(a))
    np.testing.assert_allclose(a, np.swapaxes(a, -1, -2), atol=1e-14)


def test_metric_positive_over_tube():
    tgt = sphere_as_hypersurface(tube_halfwidth=0.3)
    x = sample_tube_points(tgt, np.random.default_rng(10), 1000, fraction=1.0)
    assert np.min(np.linalg.eigvalsh(tgt.metric(x))) > 0


def test_non_spd_metric_reported():
    def fake(x):
        d = np.full(x.shape[:-1], 0.3)
        dd = np.zeros(x.shape)
        dd[..., 0] = 1.0
        H = np.zeros(x.shape + (3,))
        H[..., 1, 2], H[..., 2, 1] = 5.0, -5.0
        return d, dd, H

    tgt = HypersurfaceTarget(fake, 2, 1.0)
    with pytest.raises(GeometryError, match="metric not positive definite"):
        tgt.metric(np.zeros((1, 3)))


def test_constant_metric_has_no_christoffel_symbols():
    G = np.broadcast_to(np.diag([1.0, 2.0, 3.0]), (5, 3, 3))
    assert np.all(christoffel_from_metric(G, np.zeros((5, 3, 3, 3))) == 0.0)


@pytest.mark.parametrize("tgt", HYPER + [SphereTarget()], ids=IDS + ["sphere-inversion"])
def test_christoffel_symmetric(tgt):
    x = sample_tube_points(tgt, np.random.default_rng(11), 50)
    g = christoffel(tgt, x)
    assert np.array_equal(g, np.swapaxes(g, -1, -2))


@pytest.mark.parametrize("tgt", HYPER, ids=IDS)
def test_covariant_hessian_vanishes_on_target(tgt):
    p = tgt.project(sample_tube_points(tgt, np.random.default_rng(12), 100))
    assert np.max(np.abs(covariant_hessian_distance(tgt, p))) <= 1e-8


@pytest.mark.parametrize("tgt", HYPER, ids=IDS)
def test_covariant_hessian_identity(tgt):
    x = sample_tube_points(tgt, np.random.default_rng(13), 1000)
    err = np.max(np.abs(tgt.covariant_hessian_distance(x) - tgt.hessian_identity_rhs(x)))
    assert err <= 1e-8


def test_sphere_signed_distance_and_projection():
    tgt = SphereTarget()
    assert tgt.signed_distance(np.array([2.0, 0, 0])) == 1.0
    np.testing.assert_array_equal(project(tgt, np.array([2.0, 0, 0])), [1.0, 0, 0])


def test_make_target():
    assert isinstance(make_target("sphere"), SphereTarget)
    assert make_target("sphere", n=1).ambient_dim == 2
    e = make_target({"name": "ellipsoid", "axes": [1.0, 0.9, 0.7]})
    assert e.name == "ellipsoid"
    assert make_target(e) is e
    with pytest.raises(ValueError):
        make_target("torus")


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0, 2 * np.pi), st.floats(0, np.pi))
def test_sphere_metric_scalar_multiple(r, phi, theta):
    x = r * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    G = SphereTarget().metric(x)
    np.testing.assert_allclose(G, sphere_rho(x) * np.eye(3), rtol=1e-15)
    assert sphere_rho(x) == pytest.approx(0.5 + 0.5 / r ** 4, rel=1e-14)
