"""Numerical-simulation experiments: pose sampling, trials, batches and sweeps.

Every trial draws from its own generator seeded by ``(spec.seed, index)``,
so results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baseline import estimate_orientation_orthographic
from .ellipse import fit_ellipse
from .errors import CupRegError, InvalidArgumentError
from .geometry import (
    Pose,
    ScannerGeometry,
    apply_pose,
    canonical_landmarks,
    project_perspective,
)
from .metrics import hausdorff_distance, pose_error
from .registration import RegistrationConfig, register

__all__ = [
    "METHODS",
    "ExperimentSpec",
    "TrialRecord",
    "MethodSummary",
    "BatchSummary",
    "SweepRow",
    "sample_pose",
    "perturb_landmarks",
    "simulate_landmarks",
    "trial_rng",
    "run_trial",
    "run_batch",
    "summarize",
    "distance_sweep",
    "write_records",
    "read_records",
    "write_summary",
    "write_sweep",
]

METHODS = ("proposed", "orthographic")
_RANGE_FIELDS = ("theta_range", "phi_range", "k_range", "l_range", "h_range")


@dataclass
class ExperimentSpec:
    """One simulated experiment.

    The ``*_fixed`` values hold the parameters that a distance sweep keeps
    constant while the other angle is swept.
    """

    trials: int = 200
    theta_range: tuple[float, float] = (1.0, 50.0)
    phi_range: tuple[float, float] = (-90.0, 90.0)
    k_range: tuple[float, float] = (-100.0, 100.0)
    l_range: tuple[float, float] = (-100.0, 100.0)
    h_range: tuple[float, float] = (100.0, 520.0)
    H: float = 1040.0
    r: float = 25.0
    n_landmarks: int = 100
    noise_sigma: float = 0.0
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    pixel_pitch: float | None = None
    theta_fixed: float = 25.0
    phi_fixed: float = 40.0
    h_fixed: float = 310.0

    def __post_init__(self) -> None:
        for name in _RANGE_FIELDS:
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.methods = tuple(self.methods)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.trials < 1:
            problems.append("trials: must be >= 1")
        for name in _RANGE_FIELDS:
            rng = getattr(self, name)
            if len(rng) != 2 or not rng[0] <= rng[1]:
                problems.append(f"{name}: must be an interval lo <= hi")
        if not self.H > 0:
            problems.append("H: must be positive")
        if not self.r > 0:
            problems.append("r: must be positive")
        if len(self.h_range) == 2 and not (0 < self.h_range[0] and self.h_range[1] < self.H):
            problems.append("h_range: must lie strictly inside (0, H)")
        if not 0 < self.h_fixed < self.H:
            problems.append("h_fixed: must lie strictly inside (0, H)")
        if self.n_landmarks < 6:
            problems.append("n_landmarks: must be >= 6")
        if self.noise_sigma < 0:
            problems.append("noise_sigma: must be >= 0")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            problems.append(f"methods: must be a non-empty subset of {METHODS}")
        if self.pixel_pitch is not None and not self.pixel_pitch > 0:
            problems.append("pixel_pitch: must be positive")
        if problems:
            raise InvalidArgumentError("; ".join(problems))

    @property
    def geometry(self) -> ScannerGeometry:
        return ScannerGeometry(self.H, self.pixel_pitch or 1.0)

    def to_dict(self) -> dict:
        return asdict(self)


def _pose_dict(pose: Pose | None) -> dict | None:
    if pose is None:
        return None
    return {"theta_deg": pose.theta, "phi_deg": pose.phi, "k_mm": pose.k, "l_mm": pose.l, "h_mm": pose.h}


def _pose_from_dict(d: dict) -> Pose:
    return Pose(d["theta_deg"], d["phi_deg"], d["k_mm"], d["l_mm"], d["h_mm"])


@dataclass
class TrialRecord:
    """Outcome of one simulated trial.

    ``estimates`` and ``errors`` are keyed by method; a method that failed has
    ``None`` for both. Orthographic estimates carry only the angles.
    """

    index: int
    seed: int
    truth: dict
    estimates: dict
    errors: dict
    hd_mm: float | None
    time_s: float | None
    converged: bool
    final_loss: float | None = None
    iterations: int | None = None
    failure: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        return cls(**json.loads(line))


def sample_pose(rng: np.random.Generator, spec: ExperimentSpec) -> Pose:
    """Uniform draw from the spec's parameter intervals."""
    return Pose(*(float(rng.uniform(*getattr(spec, name))) for name in _RANGE_FIELDS))


def perturb_landmarks(points, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Gaussian noise of standard deviation ``sigma`` to each coordinate."""
    pts = np.asarray(points, dtype=float)
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if sigma == 0:
        return pts.copy()
    return pts + rng.normal(0.0, sigma, size=pts.shape)


def simulate_landmarks(truth: Pose, spec: ExperimentSpec, rng: np.random.Generator | None = None):
    """Detector-plane rim landmarks for ``truth``, noisy if ``spec.noise_sigma > 0``."""
    ring = canonical_landmarks(spec.r, spec.n_landmarks)
    pts = project_perspective(apply_pose(ring, truth), spec.geometry)
    if spec.noise_sigma > 0:
        if rng is None:
            raise InvalidArgumentError("a random generator is required for noisy landmarks")
        pts = perturb_landmarks(pts, spec.noise_sigma, rng)
    return pts


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def run_trial(
    truth: Pose,
    spec: ExperimentSpec,
    config: RegistrationConfig,
    *,
    rng: np.random.Generator | None = None,
    index: int = 0,
) -> TrialRecord:
    """Simulate one observation of ``truth`` and run every requested method."""
    if rng is None:
        rng = trial_rng(spec.seed, index)
    record = TrialRecord(
        index=index,
        seed=spec.seed,
        truth=_pose_dict(truth),
        estimates={m: None for m in spec.methods},
        errors={m: None for m in spec.methods},
        hd_mm=None,
        time_s=None,
        converged=False,
    )
    failures = []
    try:
        landmarks = simulate_landmarks(truth, spec, rng)
    except CupRegError as exc:
        record.failure = f"simulation: {type(exc).__name__}: {exc}"
        return record

    if "proposed" in spec.methods:
        try:
            result = register(landmarks, spec.r, spec.geometry, config)
        except CupRegError as exc:
            failures.append(f"proposed: {type(exc).__name__}: {exc}")
        else:
            record.estimates["proposed"] = _pose_dict(result.pose)
            record.errors["proposed"] = pose_error(truth, result.pose).to_dict()
            record.hd_mm = hausdorff_distance(result.observed_ellipse, result.fitted_ellipse)
            record.time_s = result.wall_time
            record.converged = result.converged
            record.final_loss = result.final_loss
            record.iterations = result.iterations

    if "orthographic" in spec.methods:
        try:
            theta, phi = estimate_orientation_orthographic(fit_ellipse(landmarks))
        except CupRegError as exc:
            failures.append(f"orthographic: {type(exc).__name__}: {exc}")
        else:
            record.estimates["orthographic"] = {"theta_deg": theta, "phi_deg": phi}
            err = pose_error(truth, Pose(theta, phi, truth.k, truth.l, truth.h))
            record.errors["orthographic"] = {
                "theta_err": err.theta_err,
                "phi_err": err.phi_err,
                "inplane_err": None,
                "h_err": None,
            }
            if "proposed" not in spec.methods:
                record.converged = True

    if failures:
        record.failure = "; ".join(failures)
    return record


@dataclass
class MethodSummary:
    method: str
    n_estimates: int
    mae_theta: float | None
    mae_phi: float | None
    mae_inplane: float | None
    mae_h: float | None
    converged_mae_theta: float | None = None
    converged_mae_phi: float | None = None
    converged_mae_inplane: float | None = None
    converged_mae_h: float | None = None


@dataclass
class BatchSummary:
    n_trials: int
    convergence_rate: float
    n_failed: int
    mean_hd_mm: float | None
    mean_hd_px: float | None
    mean_time_s: float | None
    methods: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(math.fsum(vals) / len(vals)) if vals else None


def _method_summary(method: str, records: list[TrialRecord]) -> MethodSummary:
    errs = [r.errors.get(method) for r in records]
    ok = [e for e in errs if e is not None]
    conv = [r.errors[method] for r in records if r.converged and r.errors.get(method) is not None]
    cols = ("theta_err", "phi_err", "inplane_err", "h_err")
    return MethodSummary(
        method,
        len(ok),
        *(_mean(e[c] for e in ok) for c in cols),
        *(_mean(e[c] for e in conv) for c in cols),
    )


def summarize(records: list[TrialRecord], methods=METHODS, pixel_pitch: float | None = None) -> BatchSummary:
    """Aggregate trial records; MAE over all trials with an estimate and over converged ones."""
    records = sorted(records, key=lambda r: r.index)
    n = len(records)
    mean_hd = _mean(r.hd_mm for r in records)
    return BatchSummary(
        n_trials=n,
        convergence_rate=sum(r.converged for r in records) / n if n else 0.0,
        n_failed=sum(r.failure is not None for r in records),
        mean_hd_mm=mean_hd,
        mean_hd_px=(mean_hd / pixel_pitch) if (mean_hd is not None and pixel_pitch) else None,
        mean_time_s=_mean(r.time_s for r in records),
        methods={m: asdict(_method_summary(m, records)) for m in methods},
    )


def _batch_worker(args) -> TrialRecord:
    spec, config, index = args
    rng = trial_rng(spec.seed, index)
    truth = sample_pose(rng, spec)
    return run_trial(truth, spec, config, rng=rng, index=index)


def run_batch(
    spec: ExperimentSpec,
    config: RegistrationConfig | None = None,
    *,
    workers: int = 1,
    records_path: str | os.PathLike | None = None,
) -> tuple[BatchSummary, list[TrialRecord]]:
    """Run ``spec.trials`` independent trials and aggregate them."""
    config = config or RegistrationConfig()
    jobs = [(spec, config, i) for i in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_batch_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_batch_worker(job) for job in jobs]
    records.sort(key=lambda r: r.index)
    if records_path is not None:
        write_records(records_path, records)
    return summarize(records, spec.methods, spec.pixel_pitch), records


@dataclass
class SweepRow:
    distance: float
    method: str
    sweep: str
    mae_theta_deg: float | None
    mae_phi_deg: float | None
    n_trials: int
    n_failed: int


def _sweep_values(lo: float, hi: float, count: int) -> np.ndarray:
    # interior grid: the sampled intervals are open
    return lo + (hi - lo) * (np.arange(count) + 0.5) / count


def distance_sweep(
    distances,
    spec: ExperimentSpec,
    config: RegistrationConfig | None = None,
    *,
    sweeps=("theta", "phi"),
) -> list[SweepRow]:
    """Angle errors versus in-plane distance of the implant from the image center.

    For each distance d, ``spec.trials`` poses are placed at (k, l) on the
    circle of radius d (random direction per trial). In the ``theta`` sweep
    theta runs over a grid on ``theta_range`` with phi and h fixed; the
    ``phi`` sweep does the converse.
    """
    config = config or RegistrationConfig()
    rows = []
    for di, d in enumerate(distances):
        d = float(d)
        for si, sweep in enumerate(sweeps):
            if sweep == "theta":
                grid = _sweep_values(*spec.theta_range, spec.trials)
            elif sweep == "phi":
                grid = _sweep_values(*spec.phi_range, spec.trials)
            else:
                raise InvalidArgumentError(f"unknown sweep {sweep!r}")
            records = []
            for j, value in enumerate(grid):
                rng = np.random.default_rng(np.random.SeedSequence([spec.seed, di, si, j]))
                psi = rng.uniform(0.0, 2.0 * math.pi)
                theta = float(value) if sweep == "theta" else spec.theta_fixed
                phi = float(value) if sweep == "phi" else spec.phi_fixed
                truth = Pose(theta, phi, d * math.cos(psi), d * math.sin(psi), spec.h_fixed)
                records.append(run_trial(truth, spec, config, rng=rng, index=j))
            for method in spec.methods:
                ms = _method_summary(method, records)
                rows.append(
                    SweepRow(d, method, sweep, ms.mae_theta, ms.mae_phi, len(records), len(records) - ms.n_estimates)
                )
    return rows


def _atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records(path, records: list[TrialRecord]) -> None:
    """One JSON object per line, ordered by trial index."""
    lines = [r.to_json() for r in sorted(records, key=lambda r: r.index)]
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def read_records(path) -> list[TrialRecord]:
    with open(path) as fh:
        return [TrialRecord.from_json(line) for line in fh if line.strip()]


SUMMARY_COLUMNS = ("Method", "HD (mm)", "Time (s)", "theta err (deg)", "phi err (deg)", "k, l err (mm)", "h err (mm)")


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def summary_rows(summary: BatchSummary) -> list[list[str]]:
    rows = []
    for method, ms in summary.methods.items():
        proposed = method == "proposed"
        rows.append([
            method,
            _fmt(summary.mean_hd_mm if proposed else None),
            _fmt(summary.mean_time_s if proposed else None),
            _fmt(ms["mae_theta"]),
            _fmt(ms["mae_phi"]),
            _fmt(ms["mae_inplane"]),
            _fmt(ms["mae_h"]),
        ])
    return rows


def write_summary(directory, summary: BatchSummary, spec: ExperimentSpec, config: RegistrationConfig) -> None:
    """``summary.json`` (with spec and config echo) and ``summary.csv`` (one row per method)."""
    directory = Path(directory)
    doc = {"spec": spec.to_dict(), "config": config.to_dict(), "summary": summary.to_dict()}
    _atomic_write(directory / "summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _atomic_write(directory / "summary.csv", _csv_text([SUMMARY_COLUMNS, *summary_rows(summary)]))


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))


def write_sweep(path, rows: list[SweepRow]) -> None:
    body = [[getattr(r, c) if getattr(r, c) is not None else "" for c in SWEEP_COLUMNS] for r in rows]
    _atomic_write(path, _csv_text([SWEEP_COLUMNS, *body]))


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()
