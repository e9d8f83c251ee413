import math

import numpy as np
import pytest

from cupreg import (
    DegenerateFitError,
    DegenerateGradientError,
    ImplausibleGeometryError,
    InvalidArgumentError,
    Pose,
    ScannerGeometry,
)
from cupreg.ellipse import EllipseParams, fit_ellipse
from cupreg.metrics import pose_error
from cupreg.registration import (
    RegistrationConfig,
    ellipse_loss,
    forward_ellipse,
    initial_guess,
    pose_gradient,
    register,
)

from conftest import projected_ring, random_pose

GEOM = ScannerGeometry(1040.0)


def within_table_tolerance(err):
    return err.theta_err <= 0.5 and err.phi_err <= 1.0 and err.inplane_err <= 1.0 and err.h_err <= 3.0


def test_initial_guess_formula():
    p = initial_guess(EllipseParams(100, -40, 50, 30, 10), 25.0, GEOM)
    assert p == Pose(25.0, 40.0, 50.0, -20.0, 520.0)


def test_initial_guess_inclination_sign_follows_orientation():
    assert initial_guess(EllipseParams(0, 0, 50, 30, -10), 25.0, GEOM).phi == -40.0


@pytest.mark.parametrize("a", [25.0, 20.0])
def test_initial_guess_rejects_small_ellipses(a):
    with pytest.raises(ImplausibleGeometryError):
        initial_guess(EllipseParams(0, 0, a, a / 2, 0), 25.0, GEOM)


def test_loss_examples():
    e = EllipseParams(1, 2, 30, 20, 89.0)
    assert ellipse_loss(e, e) == 0.0
    assert ellipse_loss(e, EllipseParams(1, 2, 30, 20, -89.0)) == pytest.approx(0.8)
    assert ellipse_loss(EllipseParams(0, 0, 3, 2, 0), EllipseParams(5, 0, 3, 2, 0)) == pytest.approx(5.0)


def test_loss_periodicity_matches_min_form(rng):
    for a1, a2 in rng.uniform(-89.99, 90, size=(200, 2)):
        d = abs(a1 - a2)
        expected = min(d * d, (180 - d) ** 2) / 5
        got = ellipse_loss(EllipseParams(0, 0, 2, 1, a1), EllipseParams(0, 0, 2, 1, a2))
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_forward_face_on_ring_at_half_height():
    e = forward_ellipse(Pose(90, 0, 0, 0, 520), 25.0, 100, GEOM)
    np.testing.assert_allclose([e.x, e.y, e.a, e.b], [0, 0, 50, 50], atol=1e-9)


def test_forward_matches_fit_of_projected_landmarks():
    pose = Pose(30, 40, 50, 50, 400)
    e = forward_ellipse(pose, 25.0, 100, GEOM)
    np.testing.assert_allclose(e.as_array(), fit_ellipse(projected_ring(pose)).as_array(), atol=1e-9)


def test_forward_collapse_is_degenerate():
    with pytest.raises(DegenerateFitError):
        forward_ellipse(Pose(0.001, 0, 0, 0, 520), 25.0, 100, GEOM)
    obs = forward_ellipse(Pose(20, 0, 0, 0, 520), 25.0, 100, GEOM)
    with pytest.raises(DegenerateGradientError):
        pose_gradient(Pose(0.001, 0, 0, 0, 520), obs, 25.0, 100, GEOM)


def test_forward_rejects_pose_outside_scanner():
    with pytest.raises(InvalidArgumentError):
        forward_ellipse(Pose(30, 0, 0, 0, 1040), 25.0, 100, GEOM)


def fd_gradient(pose, obs, h=1e-5):
    g = np.zeros(5)
    base = pose.as_array()
    for i in range(5):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        lu = ellipse_loss(obs, forward_ellipse(Pose.from_array(up), 25.0, 100, GEOM))
        ld = ellipse_loss(obs, forward_ellipse(Pose.from_array(dn), 25.0, 100, GEOM))
        g[i] = (lu - ld) / (2 * h)
    return g


def test_gradient_matches_finite_differences(rng):
    for _ in range(100):
        pose = random_pose(rng, theta=(5.0, 85.0))
        obs = forward_ellipse(random_pose(rng, theta=(5.0, 85.0)), 25.0, 100, GEOM)
        g = pose_gradient(pose, obs, 25.0, 100, GEOM)
        fd = fd_gradient(pose, obs)
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_gradient_vanishes_at_generating_pose(rng):
    for _ in range(20):
        pose = random_pose(rng)
        obs = fit_ellipse(projected_ring(pose))
        assert ellipse_loss(obs, forward_ellipse(pose, 25.0, 100, GEOM)) < 1e-12
        assert np.linalg.norm(pose_gradient(pose, obs, 25.0, 100, GEOM)) < 1e-8


@pytest.mark.parametrize(
    "truth", [Pose(30, 40, 50, 50, 400), Pose(45, -80, -100, 100, 500)], ids=["reference", "far-corner"]
)
@pytest.mark.parametrize("optimizer", ["gd", "lm"])
def test_register_recovers_pose(truth, optimizer):
    res = register(projected_ring(truth), 25.0, GEOM, RegistrationConfig(optimizer=optimizer))
    assert res.converged
    assert res.final_loss < 1e-6
    assert within_table_tolerance(pose_error(truth, res.pose))


def test_register_result_invariants():
    res = register(projected_ring(Pose(30, 40, 50, 50, 400)), 25.0, GEOM)
    assert res.loss_trace and res.final_loss == res.loss_trace[-1] >= 0
    assert all(b <= a for a, b in zip(res.loss_trace, res.loss_trace[1:]))
    assert len(res.loss_trace) == res.iterations + 1
    assert 0 <= res.pose.theta < 90 and -90 < res.pose.phi <= 90
    assert res.wall_time > 0


def test_register_from_the_optimum():
    truth = Pose(30, 40, 50, 50, 400)
    res = register(projected_ring(truth), 25.0, GEOM, initial_pose=truth)
    assert res.converged and res.iterations <= 3
    assert res.final_loss < 1e-10


def test_non_convergence_is_reported_not_raised():
    res = register(projected_ring(Pose(30, 40, 50, 50, 400)), 25.0, GEOM, RegistrationConfig(max_iterations=1))
    assert not res.converged
    assert res.stop_reason == "max_iterations"
    assert res.iterations == 1


def test_theta_stays_in_bounds():
    cfg = RegistrationConfig(theta_bounds=(10.0, 20.0))
    res = register(projected_ring(Pose(40, 10, 0, 0, 300)), 25.0, GEOM, cfg)
    assert 10.0 <= res.pose.theta <= 20.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_model_landmarks": 5},
        {"max_iterations": 0},
        {"step_sizes": (1, 1, 1, 1, 0)},
        {"step_sizes": (1, 1, 1)},
        {"weights": (1, 1, 1, 1, -1)},
        {"optimizer": "adam"},
        {"theta_bounds": (10, 5)},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        RegistrationConfig(**kwargs)


def test_config_round_trip():
    cfg = RegistrationConfig(optimizer="lm", step_sizes=(2, 2, 1, 1, 10), h_bounds=(5, 900))
    assert RegistrationConfig.from_dict(cfg.to_dict()) == cfg


def test_weights_change_the_loss():
    a, b = EllipseParams(0, 0, 3, 2, 0), EllipseParams(1, 0, 3, 2, 0)
    assert ellipse_loss(a, b, weights=(2, 1, 1, 1, 1)) == pytest.approx(0.4)
    assert math.isclose(ellipse_loss(a, b, weights=(0, 1, 1, 1, 1)), 0.0)
