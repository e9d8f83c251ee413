import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cupreg import DegenerateFitError, InvalidArgumentError, NotAnEllipseError, Pose
from cupreg.ellipse import (
    EllipseParams,
    ImplicitConic,
    fit_ellipse,
    fit_ellipse_jacobian,
    fit_implicit,
    implicit_to_standard,
    sample_ellipse,
)
from cupreg.errors import DegenerateConicError
from cupreg.geometry import wrap_half_turn

from conftest import projected_ring

REF = EllipseParams(1.0, -2.0, 4.0, 2.0, 30.0)


def random_ellipse(rng, max_ratio=20.0):
    a = rng.uniform(1.0, 200.0)
    b = a / rng.uniform(1.0, max_ratio)
    return EllipseParams(rng.uniform(-300, 300), rng.uniform(-300, 300), a, b, rng.uniform(-89.999, 90.0))


def param_errors(fit: EllipseParams, truth: EllipseParams) -> np.ndarray:
    d = fit.as_array() - truth.as_array()
    d[4] = wrap_half_turn(d[4])
    return np.abs(d)


def center_from_gradient(c: ImplicitConic) -> np.ndarray:
    # independent oracle: the center is where the conic gradient vanishes
    return np.linalg.solve([[2 * c.A, c.B], [c.B, 2 * c.C]], [-c.D, -c.E])


def test_unit_circle_coefficients():
    t = 2 * np.pi * np.arange(8) / 8
    conic = fit_implicit(np.column_stack([np.cos(t), np.sin(t)]))
    np.testing.assert_allclose(conic.as_array(), np.array([1, 0, 1, 0, 0, -1]) / math.sqrt(3), atol=1e-12)


def test_collinear_points_are_degenerate():
    pts = np.column_stack([np.arange(6.0), np.zeros(6)])
    with pytest.raises(DegenerateFitError):
        fit_implicit(pts)
    with pytest.raises(DegenerateFitError):
        fit_ellipse(pts)


def test_hyperbola_is_not_an_ellipse():
    x = np.linspace(1, 4, 10)
    pts = np.column_stack([np.r_[x, -x], np.r_[1 / x, -1 / x]])
    with pytest.raises(NotAnEllipseError):
        fit_implicit(pts)


def test_sampled_points_lie_on_fitted_conic():
    pts = sample_ellipse(REF, 32)
    conic = fit_implicit(pts)
    assert np.abs(conic.evaluate(pts)).max() < 1e-9
    assert conic.discriminant < 0
    assert abs(np.linalg.norm(conic.as_array()) - 1.0) < 1e-12
    assert conic.A + conic.C > 0


def test_unit_circle_standard_form():
    e = implicit_to_standard(ImplicitConic.from_array(np.array([1, 0, 1, 0, 0, -1]) / math.sqrt(3)))
    np.testing.assert_allclose(e.as_array(), [0, 0, 1, 1, 0], atol=1e-12)


def test_radius_two_circle_uses_square_root():
    t = 2 * np.pi * np.arange(40) / 40
    e = implicit_to_standard(fit_implicit(2 * np.column_stack([np.cos(t), np.sin(t)])))
    assert e.a == pytest.approx(2.0, abs=1e-9) and e.b == pytest.approx(2.0, abs=1e-9)


def test_reference_ellipse_round_trip():
    conic = fit_implicit(sample_ellipse(REF, 64))
    e = implicit_to_standard(conic)
    assert param_errors(e, REF).max() < 1e-9
    np.testing.assert_allclose([e.x, e.y], center_from_gradient(conic), atol=1e-9)


def test_non_ellipse_conics_are_rejected():
    with pytest.raises(NotAnEllipseError):
        implicit_to_standard(ImplicitConic.from_array([1, 0, -1, 0, 0, -1]))
    with pytest.raises(DegenerateConicError):
        # empty ellipse x^2 + y^2 + 1 = 0
        implicit_to_standard(ImplicitConic.from_array([1, 0, 1, 0, 0, 1]))


def test_circle_fit():
    t = 2 * np.pi * np.arange(100) / 100
    e = fit_ellipse(np.column_stack([2 + 5 * np.cos(t), 3 + 5 * np.sin(t)]))
    np.testing.assert_allclose(e.as_array(), [2, 3, 5, 5, 0], atol=1e-9)


def test_projected_ring_is_an_ellipse():
    pts = projected_ring(Pose(30, 40, 50, 50, 400))
    e = fit_ellipse(pts)
    conic = fit_implicit(pts)
    assert np.abs(conic.evaluate(pts)).max() < 1e-9
    # re-sample the standard form and check it sits on the conic too
    assert np.abs(conic.evaluate(sample_ellipse(e, 50))).max() < 1e-6


@pytest.mark.parametrize("bad", [np.zeros((5, 2)), np.zeros((10, 3)), np.zeros(12)])
def test_input_shape_checks(bad):
    with pytest.raises(InvalidArgumentError):
        fit_ellipse(bad)


def test_non_finite_input():
    pts = sample_ellipse(REF, 10)
    pts[3, 0] = np.nan
    with pytest.raises(InvalidArgumentError):
        fit_ellipse(pts)


def test_sample_ellipse_examples():
    pts = sample_ellipse(EllipseParams(0, 0, 1, 1, 0), 4)
    np.testing.assert_allclose(pts, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)
    pts = sample_ellipse(EllipseParams(2, 3, 5, 5, 0), 100)
    np.testing.assert_allclose(np.hypot(pts[:, 0] - 2, pts[:, 1] - 3), 5.0, rtol=1e-14)
    with pytest.raises(InvalidArgumentError):
        sample_ellipse(REF, 1)


def test_round_trip_many(rng):
    for _ in range(1000):
        truth = random_ellipse(rng)
        err = param_errors(fit_ellipse(sample_ellipse(truth, 64)), truth)
        assert np.all(err <= 1e-6 * np.maximum(np.abs(truth.as_array()), 1.0))


def test_axis_ordering_and_angle_range(rng):
    for _ in range(200):
        pts = rng.normal(size=(20, 2)) * [30, 5] + rng.normal(size=2) * 10
        try:
            e = fit_ellipse(pts)
        except DegenerateFitError:
            continue
        assert e.a >= e.b > 0
        assert -90 < e.alpha <= 90


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2**31))
def test_scale_equivariance(s, seed):
    truth = random_ellipse(np.random.default_rng(seed), max_ratio=10)
    pts = sample_ellipse(truth, 40)
    e0, e1 = fit_ellipse(pts), fit_ellipse(s * pts)
    np.testing.assert_allclose(e1.as_array()[:4], s * e0.as_array()[:4], rtol=1e-9, atol=1e-9 * s)
    assert abs(wrap_half_turn(e1.alpha - e0.alpha)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(-180.0, 180.0), st.integers(0, 2**31))
def test_rotation_equivariance(rho, seed):
    truth = random_ellipse(np.random.default_rng(seed), max_ratio=10)
    pts = sample_ellipse(truth, 40)
    c, s = math.cos(math.radians(rho)), math.sin(math.radians(rho))
    rot = np.array([[c, -s], [s, c]])
    e0, e1 = fit_ellipse(pts), fit_ellipse(pts @ rot.T)
    scale = max(abs(e0.x), abs(e0.y), e0.a)
    np.testing.assert_allclose([e1.x, e1.y], rot @ [e0.x, e0.y], atol=1e-9 * scale)
    assert abs(wrap_half_turn(e1.alpha - e0.alpha - rho)) < 1e-7


def numeric_jacobian(pts, h=1e-5):
    n = pts.shape[0]
    out = np.zeros((5, n, 2))
    for i in range(n):
        for j in range(2):
            up, dn = pts.copy(), pts.copy()
            up[i, j] += h
            dn[i, j] -= h
            d = fit_ellipse(up).as_array() - fit_ellipse(dn).as_array()
            d[4] = wrap_half_turn(d[4])
            out[:, i, j] = d / (2 * h)
    return out


def test_point_jacobian_matches_finite_differences(rng):
    for _ in range(100):
        truth = random_ellipse(rng, max_ratio=5)
        truth = EllipseParams(truth.x / 10, truth.y / 10, truth.a / 10 + 2, truth.b / 10 + 1, truth.alpha)
        if truth.b > truth.a:
            truth = EllipseParams(truth.x, truth.y, truth.b, truth.a, truth.alpha)
        pts = sample_ellipse(truth, 12) + rng.normal(0, 0.05, size=(12, 2))
        _, jac = fit_ellipse_jacobian(pts)
        fd = numeric_jacobian(pts)
        for k in range(5):
            assert np.linalg.norm(jac[k] - fd[k]) <= 1e-4 * max(np.linalg.norm(fd[k]), 1e-8)


def test_circle_jacobian_pins_alpha():
    t = 2 * np.pi * np.arange(10) / 10
    e, jac = fit_ellipse_jacobian(np.column_stack([np.cos(t), np.sin(t)]) + 0.3)
    assert e.a == pytest.approx(1.0) and e.alpha == 0.0
    assert np.all(np.isfinite(jac))
    assert np.all(jac[4] == 0.0)
