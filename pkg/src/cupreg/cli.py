"""Command-line interface: ``cupreg {fit,project,register,simulate,sweep}``.

Exit codes: 0 ok, 2 input error, 3 degenerate geometry or fit,
4 registration did not converge (the result document is still written).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config_io import SpecFileError, load_spec_file, parse_fields
from .ellipse import fit_ellipse, fit_implicit
from .errors import (
    CupRegError,
    DegenerateFitError,
    DegenerateProjectionError,
    ImplausibleGeometryError,
    InvalidArgumentError,
)
from .geometry import (
    Pose,
    ScannerGeometry,
    apply_pose,
    canonical_landmarks,
    project_orthographic,
    project_perspective,
)
from .harness import SUMMARY_COLUMNS, distance_sweep, run_batch, summary_rows, write_summary, write_sweep
from .metrics import hausdorff_distance
from .registration import RegistrationConfig, register

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_NOT_CONVERGED = 4

RUN_DIR_ENV = "CUPREG_RUN_DIR"
DEFAULT_RADIUS = 25.0
DEFAULT_SOURCE_DISTANCE = 1040.0

log = logging.getLogger("cupreg")


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def read_landmark_file(path, pixel_pitch: float | None = None) -> np.ndarray:
    """Read an ``x,y`` CSV of detector-plane landmarks (mm, or px with a pitch)."""
    try:
        fh = open(path, newline="") if str(path) != "-" else sys.stdin
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: line 1: empty file, expected header 'x,y'")
        if [h.strip().lower() for h in header] != ["x", "y"]:
            raise InputError(f"{path}: line 1: expected header 'x,y', got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InputError(f"{path}: line {line}: expected 2 columns, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise InputError(f"{path}: line {line}: non-numeric value in {','.join(row)!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InputError(f"{path}: line {line}: non-finite value")
            rows.append((x, y))
    if len(rows) < 6:
        raise InputError(f"{path}: need at least 6 landmark rows, got {len(rows)}")
    pts = np.array(rows, dtype=float)
    if pixel_pitch is not None:
        if not pixel_pitch > 0:
            raise InputError("--pixel-pitch must be positive")
        pts *= pixel_pitch
    return pts


def landmark_csv(points: np.ndarray) -> str:
    lines = ["x,y"] + [f"{x!r},{y!r}" for x, y in np.asarray(points, dtype=float).tolist()]
    return "\n".join(lines) + "\n"


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(f".{target.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, target)


def _num(v: float) -> str:
    return format(v + 0.0, ".10g")


def cmd_fit(args) -> int:
    pts = read_landmark_file(args.landmark_file, args.pixel_pitch)
    ellipse = fit_ellipse(pts)
    conic = fit_implicit(pts)
    if args.json:
        doc = {"ellipse": dataclasses.asdict(ellipse), "conic": dataclasses.asdict(conic)}
        print(json.dumps(doc, indent=2))
    else:
        print(" ".join(_num(v) for v in ellipse.as_array()))
        print(" ".join(_num(v) for v in conic.as_array()))
    return EXIT_OK


def cmd_project(args) -> int:
    geom = ScannerGeometry(args.source_distance)
    pose = Pose(args.theta, args.phi, args.k, args.l, args.h)
    if not args.orthographic:
        try:
            pose.validate(geom)
        except InvalidArgumentError as exc:
            raise InputError(str(exc)) from exc
    try:
        ring = canonical_landmarks(args.radius, args.landmarks)
    except InvalidArgumentError as exc:
        raise InputError(str(exc)) from exc
    posed = apply_pose(ring, pose)
    pts = project_orthographic(posed) if args.orthographic else project_perspective(posed, geom)
    _write_text(args.output, landmark_csv(pts))
    return EXIT_OK


def _pose_doc(pose: Pose) -> dict:
    return {"theta_deg": pose.theta, "phi_deg": pose.phi, "k_mm": pose.k, "l_mm": pose.l, "h_mm": pose.h}


_REGISTRATION_FLAGS = {
    "optimizer": "optimizer",
    "max_iterations": "max_iterations",
    "loss_tolerance": "loss_tolerance",
    "step_tolerance": "step_tolerance",
    "step_sizes": "step_sizes",
    "weights": "weights",
    "n_model_landmarks": "n_model_landmarks",
    "theta_bounds": "theta_bounds",
}


def _load_register_config(path: str) -> dict:
    """Config echo of a previous result document, or a key-value file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if doc is not None:
        return doc.get("config", doc)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (H vs h)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from exc
    out: dict = {}
    if parser.has_section("registration"):
        out["registration"] = parse_fields(RegistrationConfig, dict(parser["registration"]), "registration")
    if parser.has_section("scanner"):
        sec = parser["scanner"]
        for key in ("radius_mm", "source_distance_mm", "pixel_pitch"):
            if key in sec:
                out[key] = float(sec[key])
        if "landmark_file" in sec:
            out["landmark_file"] = sec["landmark_file"]
    return out


def cmd_register(args) -> int:
    base = _load_register_config(args.config) if args.config else {}
    reg = dict(base.get("registration", {}))
    for flag, key in _REGISTRATION_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            reg[key] = value
    try:
        config = RegistrationConfig(**reg)
    except (TypeError, InvalidArgumentError) as exc:
        raise InputError(f"registration config: {exc}") from exc

    landmark_file = args.landmark_file or base.get("landmark_file")
    if landmark_file is None:
        raise InputError("no landmark file given")
    radius = args.radius if args.radius is not None else base.get("radius_mm", DEFAULT_RADIUS)
    source = args.source_distance if args.source_distance is not None else base.get("source_distance_mm", DEFAULT_SOURCE_DISTANCE)
    pitch = args.pixel_pitch if args.pixel_pitch is not None else base.get("pixel_pitch")
    try:
        geom = ScannerGeometry(source)
    except InvalidArgumentError as exc:
        raise InputError(str(exc)) from exc
    if not radius > 0:
        raise InputError("--radius must be positive")

    pts = read_landmark_file(landmark_file, pitch)
    result = register(pts, radius, geom, config)
    doc = {
        "tool": "cupreg",
        "version": __version__,
        "backend": BACKEND,
        "config": {
            "landmark_file": str(landmark_file),
            "radius_mm": radius,
            "source_distance_mm": source,
            "pixel_pitch": pitch,
            "registration": config.to_dict(),
        },
        "pose": _pose_doc(result.pose),
        "final_loss": result.final_loss,
        "iterations": result.iterations,
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "observed_ellipse": dataclasses.asdict(result.observed_ellipse),
        "fitted_ellipse": dataclasses.asdict(result.fitted_ellipse),
        "hd_mm": hausdorff_distance(result.observed_ellipse, result.fitted_ellipse),
        "time_s": result.wall_time,
    }
    _write_text(args.output, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _run_dir(args, stem: str) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    root = Path(os.environ.get(RUN_DIR_ENV, "runs"))
    return root / f"{stem}-{time.strftime('%Y%m%d-%H%M%S')}"


def _apply_overrides(spec, args):
    changes = {}
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if not changes:
        return spec
    try:
        return dataclasses.replace(spec, **changes)
    except InvalidArgumentError as exc:
        raise SpecFileError(str(exc)) from exc


def _format_table(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def cmd_simulate(args) -> int:
    spec, config, _ = load_spec_file(args.spec)
    spec = _apply_overrides(spec, args)
    out = _run_dir(args, Path(args.spec).stem)
    summary, _ = run_batch(spec, config, workers=args.workers, records_path=out / "records.jsonl")
    write_summary(out, summary, spec, config)
    print(_format_table([SUMMARY_COLUMNS, *summary_rows(summary)]))
    print(f"trials={summary.n_trials} convergence_rate={summary.convergence_rate:.3f} failed={summary.n_failed}")
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec, config, distances = load_spec_file(args.spec)
    spec = _apply_overrides(spec, args)
    if args.distances:
        distances = [float(v) for v in args.distances.split(",")]
    if not distances:
        raise SpecFileError("[sweep] distances: no distances given")
    out = _run_dir(args, Path(args.spec).stem)
    rows = distance_sweep(distances, spec, config)
    write_sweep(out / "sweep.csv", rows)
    table = [("distance", "method", "sweep", "mae_theta_deg", "mae_phi_deg")]
    for r in rows:
        table.append((f"{r.distance:g}", r.method, r.sweep, _opt(r.mae_theta_deg), _opt(r.mae_phi_deg)))
    print(_format_table(table))
    print(f"run directory: {out}")
    return EXIT_OK


def _opt(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cupreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an ellipse to a landmark file")
    p.add_argument("landmark_file", help="CSV with header 'x,y' ('-' for stdin)")
    p.add_argument("--pixel-pitch", type=float, help="input is in pixels; mm per pixel")
    p.add_argument("--json", action="store_true", help="emit JSON instead of two text lines")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", help="write the projected rim landmarks of a pose")
    p.add_argument("--theta", type=float, required=True, help="anteversion, degrees")
    p.add_argument("--phi", type=float, required=True, help="inclination, degrees")
    p.add_argument("--k", type=float, default=0.0, help="in-plane x translation, mm")
    p.add_argument("--l", type=float, default=0.0, help="in-plane y translation, mm")
    p.add_argument("--h", type=float, required=True, help="rim center height above detector, mm")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="implant rim radius, mm")
    p.add_argument("--source-distance", type=float, default=DEFAULT_SOURCE_DISTANCE, help="H, mm")
    p.add_argument("--landmarks", type=int, default=100, help="number of rim landmarks")
    p.add_argument("--orthographic", action="store_true", help="parallel projection")
    p.add_argument("-o", "--output", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("register", help="estimate the pose from a landmark file")
    p.add_argument("landmark_file", nargs="?", help="CSV with header 'x,y'")
    p.add_argument("--config", help="key-value config file or a previous result document")
    p.add_argument("--radius", type=float, help=f"implant rim radius, mm (default {DEFAULT_RADIUS:g})")
    p.add_argument("--source-distance", type=float, help=f"H, mm (default {DEFAULT_SOURCE_DISTANCE:g})")
    p.add_argument("--pixel-pitch", type=float, help="input is in pixels; mm per pixel")
    p.add_argument("--optimizer", choices=("gd", "lm"))
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--loss-tolerance", type=float)
    p.add_argument("--step-tolerance", type=float)
    p.add_argument("--step-sizes", type=_floats, help="5 comma-separated per-parameter step sizes")
    p.add_argument("--weights", type=_floats, help="5 comma-separated loss weights")
    p.add_argument("--theta-bounds", type=_floats, help="lo,hi clamp for theta in degrees")
    p.add_argument("--n-model-landmarks", type=int)
    p.add_argument("-o", "--output", help="result document path (default stdout)")
    p.set_defaults(func=cmd_register)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "run a simulated batch from a spec file"),
        ("sweep", cmd_sweep, "run a distance sweep from a spec file"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("spec", help="spec file path or bundled spec name (e.g. table1_sim.spec)")
        p.add_argument("--run-dir", help=f"output directory (default ${RUN_DIR_ENV}/<spec>-<timestamp>)")
        p.add_argument("--trials", type=int, help="override the spec's trial count")
        p.add_argument("--seed", type=int, help="override the spec's seed")
        if name == "simulate":
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        else:
            p.add_argument("--distances", help="comma-separated distances in mm")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, SpecFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateFitError, DegenerateProjectionError, ImplausibleGeometryError) as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CupRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
