"""Flat key-value experiment/config files.

Files are INI-style with an ``[experiment]`` section (``ExperimentSpec``
fields), an optional ``[registration]`` section (``RegistrationConfig``
fields) and an optional ``[sweep]`` section with ``distances``. Intervals and
vectors are comma separated; ``none`` clears an optional value::

    [experiment]
    trials = 200
    theta_range = 1, 50
    methods = proposed, orthographic

    [registration]
    step_sizes = 1, 1, 0.5, 0.5, 20
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from importlib import resources
from pathlib import Path

from .errors import InvalidArgumentError
from .harness import ExperimentSpec
from .registration import RegistrationConfig

__all__ = ["SpecFileError", "load_spec_file", "resolve_spec_path", "parse_fields", "bundled_specs"]


class SpecFileError(InvalidArgumentError):
    """A spec/config file is unreadable or has invalid fields."""


def _is_optional(tp) -> tuple[bool, typing.Any]:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return True, args[0]
    return False, tp


def _convert(raw: str, tp):
    optional, tp = _is_optional(tp)
    text = raw.strip()
    if optional and text.lower() in ("", "none", "null"):
        return None
    origin = typing.get_origin(tp)
    if origin is tuple:
        args = typing.get_args(tp)
        item = args[0] if args else str
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_convert(p, item) for p in parts)
    if tp is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def parse_fields(cls, items: dict[str, str], section: str) -> dict:
    """Convert string values to the dataclass field types; errors name the field."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out, problems = {}, []
    for key, raw in items.items():
        if key not in names:
            problems.append(f"[{section}] {key}: unknown field")
            continue
        try:
            out[key] = _convert(raw, hints[key])
        except ValueError as exc:
            problems.append(f"[{section}] {key}: {exc}")
    if problems:
        raise SpecFileError("; ".join(problems))
    return out


def bundled_specs() -> list[str]:
    return sorted(p.name for p in resources.files("cupreg").joinpath("data").iterdir() if p.name.endswith(".spec"))


def resolve_spec_path(name: str | Path) -> Path:
    """A filesystem path, or the name of a spec bundled with the package."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("cupreg").joinpath("data", path.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise SpecFileError(f"spec file not found: {name}")


def load_spec_file(path) -> tuple[ExperimentSpec, RegistrationConfig, list[float] | None]:
    """Parse an experiment spec file into (spec, config, sweep distances)."""
    path = resolve_spec_path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (H vs h)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise SpecFileError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - {"experiment", "registration", "sweep"}
    if unknown:
        raise SpecFileError(f"unknown section(s): {', '.join(sorted(unknown))}")
    exp = parse_fields(ExperimentSpec, dict(parser["experiment"]) if parser.has_section("experiment") else {}, "experiment")
    reg = parse_fields(RegistrationConfig, dict(parser["registration"]) if parser.has_section("registration") else {}, "registration")
    distances = None
    if parser.has_section("sweep"):
        try:
            distances = [float(v) for v in parser["sweep"].get("distances", "").split(",") if v.strip()]
        except ValueError as exc:
            raise SpecFileError(f"[sweep] distances: {exc}") from exc
    try:
        spec = ExperimentSpec(**exp)
    except InvalidArgumentError as exc:
        raise SpecFileError(f"[experiment] {exc}") from exc
    try:
        config = RegistrationConfig(**reg)
    except InvalidArgumentError as exc:
        raise SpecFileError(f"[registration] {exc}") from exc
    return spec, config, distances
