"""Acceptance suite: one PASS/FAIL line per criterion.

The lines are printed in the pytest terminal summary (see conftest.py) and
also when this file is run as a script.
"""

import dataclasses
import json
import math

import numpy as np
import pytest

from cupreg import Pose, ScannerGeometry
from cupreg.config_io import load_spec_file
from cupreg.ellipse import EllipseParams, fit_ellipse, sample_ellipse
from cupreg.geometry import apply_pose, canonical_landmarks, project_orthographic, project_perspective, wrap_half_turn
from cupreg.harness import distance_sweep, run_batch, sample_pose, trial_rng
from cupreg.registration import ellipse_loss, forward_ellipse, pose_gradient

from conftest import projected_ring, random_pose

RESULTS: dict[int, tuple[str, bool, str]] = {}

pytestmark = pytest.mark.acceptance


def report(number: int, name: str, ok: bool, detail: str) -> None:
    RESULTS[number] = (name, bool(ok), detail)
    print(format_line(number))
    assert ok, detail


def format_line(number: int) -> str:
    name, ok, detail = RESULTS[number]
    return f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"


@pytest.fixture(scope="module")
def table_batch():
    spec, config, _ = load_spec_file("table1_sim.spec")
    summary, records = run_batch(spec, config)
    return spec, summary, records


def test_1_proposed_table_accuracy(table_batch):
    spec, summary, _ = table_batch
    ms = summary.methods["proposed"]
    ok = (
        ms["mae_theta"] <= 0.5
        and ms["mae_phi"] <= 1.0
        and ms["mae_inplane"] <= 1.0
        and ms["mae_h"] <= 3.0
        and summary.mean_time_s <= 2.0
    )
    detail = (
        f"{spec.trials} trials, MAE theta {ms['mae_theta']:.3f} deg (<=0.5), phi {ms['mae_phi']:.3f} deg (<=1.0), "
        f"in-plane {ms['mae_inplane']:.3f} mm (<=1.0), h {ms['mae_h']:.3f} mm (<=3.0), "
        f"mean time {summary.mean_time_s:.4f} s (<=2), convergence {summary.convergence_rate:.3f}"
    )
    report(1, "proposed method, noise-free batch", ok, detail)


def test_2_orthographic_baseline(table_batch):
    _, summary, _ = table_batch
    ortho, prop = summary.methods["orthographic"], summary.methods["proposed"]
    ratio = ortho["mae_theta"] / prop["mae_theta"]
    ok = 3.0 < ortho["mae_theta"] < 9.0 and 1.0 < ortho["mae_phi"] < 4.0 and ratio >= 5.0
    detail = (
        f"MAE theta {ortho['mae_theta']:.3f} deg in (3, 9), phi {ortho['mae_phi']:.3f} deg in (1, 4), "
        f"{ratio:.1f}x proposed (>=5)"
    )
    report(2, "orthographic baseline, same batch", ok, detail)


def test_3_distance_sweep_trend():
    spec, config, distances = load_spec_file("fig2_sweep.spec")
    rows = distance_sweep(distances, spec, config, sweeps=("theta",))
    ortho = [r.mae_theta_deg for r in rows if r.method == "orthographic"]
    prop = [r.mae_theta_deg for r in rows if r.method == "proposed"]
    increasing = all(b > a for a, b in zip(ortho, ortho[1:]))
    spread = max(prop) - min(prop)
    ok = increasing and spread < 0.5 and all(r.n_failed == 0 for r in rows)
    detail = (
        f"distances {distances}: orthographic MAE theta {', '.join(f'{v:.3f}' for v in ortho)} "
        f"(strictly increasing: {increasing}); proposed {', '.join(f'{v:.3f}' for v in prop)} "
        f"(spread {spread:.3f} < 0.5)"
    )
    report(3, "distance sweep trend", ok, detail)


def _fd_gradient(pose, observed, geom, h=1e-5):
    base = pose.as_array()
    g = np.zeros(5)
    for i in range(5):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (
            ellipse_loss(observed, forward_ellipse(Pose.from_array(up), 25.0, 100, geom))
            - ellipse_loss(observed, forward_ellipse(Pose.from_array(dn), 25.0, 100, geom))
        ) / (2 * h)
    return g


def test_4_gradient_matches_finite_differences():
    geom = ScannerGeometry(1040.0)
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        pose = random_pose(rng, theta=(5.0, 85.0))
        observed = forward_ellipse(random_pose(rng, theta=(5.0, 85.0)), 25.0, 100, geom)
        g = pose_gradient(pose, observed, 25.0, 100, geom)
        fd = _fd_gradient(pose, observed, geom)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    report(4, "exact gradient vs central differences", worst <= 1e-4,
           f"100 configurations, worst relative error {worst:.2e} (<=1e-4)")


def test_5_ellipse_round_trip():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        a = rng.uniform(1.0, 200.0)
        b = a / rng.uniform(1.0, 20.0)
        truth = EllipseParams(rng.uniform(-300, 300), rng.uniform(-300, 300), a, b, rng.uniform(-89.999, 90.0))
        fit = fit_ellipse(sample_ellipse(truth, 64))
        d = fit.as_array() - truth.as_array()
        d[4] = wrap_half_turn(d[4])
        # relative error; parameters near zero are compared against unit scale
        worst = max(worst, float(np.max(np.abs(d) / np.maximum(np.abs(truth.as_array()), 1.0))))
    report(5, "ellipse fit round trip", worst <= 1e-6,
           f"1000 ellipses, axis ratio <= 20, worst relative error {worst:.2e} (<=1e-6)")


def test_6_projection_limit():
    geom = ScannerGeometry(1e9)
    spec, _, _ = load_spec_file("table1_sim.spec")
    ring = canonical_landmarks(25.0, 100)
    worst = 0.0
    for i in range(1000):
        pts = apply_pose(ring, sample_pose(trial_rng(6, i), spec))
        worst = max(worst, float(np.abs(project_perspective(pts, geom) - project_orthographic(pts)).max()))
    report(6, "perspective to orthographic limit", worst < 1e-3,
           f"H = 1e9 mm, 1000 poses, worst coordinate difference {worst:.2e} mm (<1e-3)")


def test_7_loss_optimality():
    geom = ScannerGeometry(1040.0)
    spec, _, _ = load_spec_file("table1_sim.spec")
    worst_loss = worst_grad = 0.0
    for i in range(200):
        pose = sample_pose(trial_rng(7, i), spec)
        observed = fit_ellipse(projected_ring(pose))
        worst_loss = max(worst_loss, ellipse_loss(observed, forward_ellipse(pose, 25.0, 100, geom)))
        worst_grad = max(worst_grad, float(np.linalg.norm(pose_gradient(pose, observed, 25.0, 100, geom))))
    ok = worst_loss < 1e-12 and worst_grad < 1e-8
    report(7, "loss optimality at the generating pose", ok,
           f"200 poses, worst loss {worst_loss:.2e} (<1e-12), worst gradient norm {worst_grad:.2e} (<1e-8)")


def test_8_noise_robustness():
    spec, config, _ = load_spec_file("robustness_noise.spec")
    summary, _ = run_batch(spec, config)
    mae = summary.methods["proposed"]["mae_theta"]
    ok = spec.noise_sigma == 0.5 and spec.n_landmarks == 64 and summary.convergence_rate >= 0.95 and mae <= 5.0
    detail = (
        f"sigma {spec.noise_sigma} mm, {spec.n_landmarks} landmarks, {spec.trials} trials: "
        f"convergence {summary.convergence_rate:.3f} (>=0.95), MAE theta {mae:.3f} deg (<=5)"
    )
    report(8, "detector noise robustness", ok, detail)


def _records_without_time(records):
    lines = []
    for r in records:
        d = json.loads(r.to_json())
        d.pop("time_s")
        lines.append(json.dumps(d, sort_keys=True))
    return "\n".join(lines).encode()


def test_9_determinism(tmp_path):
    spec, config, _ = load_spec_file("robustness_noise.spec")
    spec = dataclasses.replace(spec, trials=50)
    _, first = run_batch(spec, config, records_path=tmp_path / "a.jsonl")
    _, second = run_batch(spec, config, records_path=tmp_path / "b.jsonl")
    _, parallel = run_batch(spec, config, workers=2)
    a, b, c = (_records_without_time(r) for r in (first, second, parallel))
    ok = a == b == c
    report(9, "deterministic trial records", ok,
           f"{spec.trials} noisy trials run 3 times (one in parallel): identical bytes excluding time_s: {ok}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
