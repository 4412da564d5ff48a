"""Experiment configuration files: flat typed key=value sections.

The format is INI-style so presets stay diffable.  Sections are validated
against the chosen algorithm (missing required sections and unknown
sections or keys are errors), values are parsed with their expected types,
and every error names the offending ``section.key``.

Example::

    [experiment]
    algorithm = csgd_asss
    horizon = 2000
    seeds = 0..19
    output_dir = out/run

    [objective]
    kind = interpolated_regression
    n = 2000
    d = 256
    feature_std = 3.1622776601683795
    seed = 93

    [armijo]
    sigma = 0.1
    rho = 0.8
    omega = 1.5
    scale_a = 0.3
    alpha_max_init = 0.1

    [compression]
    k = 3
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError, InvalidSpecError
from .linesearch import ArmijoConfig
from .objectives import ObjectiveSpec

ALGORITHMS = ("csgd_asss", "scaled_gd", "nonadaptive_csgd", "sgd_armijo", "dcsgd_asss")

_SECTIONS_BY_ALGORITHM = {
    "csgd_asss": {"experiment", "objective", "armijo", "compression"},
    "sgd_armijo": {"experiment", "objective", "armijo"},
    "scaled_gd": {"experiment", "objective", "armijo"},
    "nonadaptive_csgd": {"experiment", "objective", "compression", "nonadaptive"},
    "dcsgd_asss": {"experiment", "objective", "armijo", "compression", "distributed"},
}
_OPTIONAL_SECTIONS = {"sweep"}

_KNOWN_KEYS = {
    "experiment": {
        "algorithm", "horizon", "seeds", "output_dir", "x0",
        "stop_loss_ratio", "divergence_ratio", "track_perturbed",
    },
    "objective": {"kind", "n", "d", "seed", "curvatures", "pow2_count", "feature_std", "mu_floor"},
    "armijo": {
        "sigma", "rho", "omega", "scale_a", "alpha_max_init",
        "max_backtracks", "alpha_max_cap",
    },
    "compression": {"k"},
    "distributed": {"workers"},
    "nonadaptive": {"eta"},
    "sweep": {"param", "values"},
}

X0_KINDS = ("zeros", "ones", "normal")


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    objective: ObjectiveSpec
    armijo: ArmijoConfig | None
    compression_k: int | None
    workers: int | None
    eta_fixed: float | None
    horizon: int
    seeds: tuple[int, ...]
    output_dir: Path
    x0_kind: str
    stop_loss_ratio: float | None
    divergence_ratio: float | None
    track_perturbed: bool
    sweep_param: str | None
    sweep_values: tuple[str, ...] | None
    raw: dict  # parsed sections, kept so sweeps can re-derive variants

    def with_override(self, param: str, value: str) -> "ExperimentConfig":
        """A new config with one ``section.key`` replaced and re-validated."""
        if "." not in param:
            raise ConfigError(f"override {param!r} must look like section.key")
        section, key = param.split(".", 1)
        raw = {name: dict(values) for name, values in self.raw.items()}
        if section not in raw:
            raise ConfigError(f"override targets unknown section [{section}]")
        if key not in _KNOWN_KEYS.get(section, set()):
            raise ConfigError(f"override targets unknown key {section}.{key}")
        raw[section][key] = value
        raw.pop("sweep", None)
        updated = _build(raw)
        return replace(updated, output_dir=self.output_dir)


def _parse_seeds(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo_text, hi_text = text.split("..", 1)
        lo, hi = int(lo_text), int(hi_text)
        if hi < lo:
            raise ValueError("seed range is empty")
        return tuple(range(lo, hi + 1))
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


class _Section:
    """Typed accessors that blame ``section.key`` on failure."""

    def __init__(self, name: str, values: dict[str, str]):
        self.name = name
        self.values = values

    def _get(self, key, parse, required, default):
        if key not in self.values:
            if required:
                raise ConfigError(f"missing required key {self.name}.{key}")
            return default
        text = self.values[key].strip()
        if text.lower() == "none":
            return None
        try:
            return parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {self.name}.{key}: {text!r} ({exc})") from exc

    def string(self, key, required=True, default=None):
        return self._get(key, str, required, default)

    def integer(self, key, required=True, default=None):
        return self._get(key, int, required, default)

    def real(self, key, required=True, default=None):
        return self._get(key, float, required, default)

    def boolean(self, key, required=True, default=None):
        def parse(text):
            lowered = text.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError("expected true/false")

        return self._get(key, parse, required, default)

    def reals(self, key, required=True, default=None):
        return self._get(
            key, lambda t: tuple(float(p.strip()) for p in t.split(",") if p.strip()),
            required, default,
        )


def _objective_spec(section: _Section) -> ObjectiveSpec:
    kind = section.string("kind")
    try:
        if kind == "diag_quadratic":
            return ObjectiveSpec(
                kind=kind,
                curvatures=section.reals("curvatures", required=False),
                pow2_count=section.integer("pow2_count", required=False),
            )
        return ObjectiveSpec(
            kind=kind,
            n=section.integer("n"),
            d=section.integer("d"),
            seed=section.integer("seed", required=False, default=0),
            feature_std=section.real("feature_std", required=False, default=1.0),
            mu_floor=section.real("mu_floor", required=False, default=0.0),
        )
    except InvalidSpecError as exc:
        raise ConfigError(f"invalid [objective]: {exc}") from exc


def _armijo(section: _Section) -> ArmijoConfig:
    try:
        return ArmijoConfig(
            sigma=section.real("sigma", required=False, default=0.1),
            rho=section.real("rho", required=False, default=0.8),
            omega=section.real("omega", required=False, default=1.2),
            scale_a=section.real("scale_a", required=False, default=0.3),
            alpha_max_init=section.real("alpha_max_init", required=False, default=0.1),
            max_backtracks=section.integer("max_backtracks", required=False, default=200),
            alpha_max_cap=section.real("alpha_max_cap", required=False, default=None),
        )
    except InvalidSpecError as exc:
        raise ConfigError(f"invalid [armijo]: {exc}") from exc


def _build(raw: dict) -> ExperimentConfig:
    if "experiment" not in raw:
        raise ConfigError("missing required section [experiment]")
    experiment = _Section("experiment", raw["experiment"])
    algorithm = experiment.string("algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    required = _SECTIONS_BY_ALGORITHM[algorithm]
    present = set(raw)
    missing = required - present
    if missing:
        raise ConfigError(f"algorithm {algorithm} needs sections: {sorted(missing)}")
    extra = present - required - _OPTIONAL_SECTIONS
    if extra:
        raise ConfigError(f"sections not used by {algorithm}: {sorted(extra)}")
    for name, values in raw.items():
        unknown = set(values) - _KNOWN_KEYS.get(name, set())
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")

    try:
        seeds = _parse_seeds(raw["experiment"].get("seeds", "0"))
    except ValueError as exc:
        raise ConfigError(f"bad value for experiment.seeds ({exc})") from exc
    x0_kind = experiment.string("x0", required=False, default="normal")
    if x0_kind not in X0_KINDS:
        raise ConfigError(f"experiment.x0 must be one of {X0_KINDS}, got {x0_kind!r}")
    horizon = experiment.integer("horizon")
    if horizon < 1:
        raise ConfigError("experiment.horizon must be at least 1")

    objective = _objective_spec(_Section("objective", raw["objective"]))
    armijo = _armijo(_Section("armijo", raw["armijo"])) if "armijo" in raw else None
    compression_k = (
        _Section("compression", raw["compression"]).integer("k")
        if "compression" in raw
        else None
    )
    workers = (
        _Section("distributed", raw["distributed"]).integer("workers")
        if "distributed" in raw
        else None
    )
    eta_fixed = (
        _Section("nonadaptive", raw["nonadaptive"]).real("eta")
        if "nonadaptive" in raw
        else None
    )
    sweep_param = sweep_values = None
    if "sweep" in raw:
        sweep = _Section("sweep", raw["sweep"])
        sweep_param = sweep.string("param")
        sweep_values = tuple(
            part.strip() for part in sweep.string("values").split(",") if part.strip()
        )
        if not sweep_values:
            raise ConfigError("sweep.values must list at least one value")

    return ExperimentConfig(
        algorithm=algorithm,
        objective=objective,
        armijo=armijo,
        compression_k=compression_k,
        workers=workers,
        eta_fixed=eta_fixed,
        horizon=horizon,
        seeds=seeds,
        output_dir=Path(experiment.string("output_dir", required=False, default="out")),
        x0_kind=x0_kind,
        stop_loss_ratio=experiment.real("stop_loss_ratio", required=False, default=None),
        divergence_ratio=experiment.real("divergence_ratio", required=False, default=None),
        track_perturbed=experiment.boolean("track_perturbed", required=False, default=True),
        sweep_param=sweep_param,
        sweep_values=sweep_values,
        raw=raw,
    )


def with_sweep(config: ExperimentConfig, param: str, values: str) -> ExperimentConfig:
    """A copy of ``config`` carrying a sweep over ``param`` (comma list)."""
    raw = {name: dict(vals) for name, vals in config.raw.items()}
    raw["sweep"] = {"param": param, "values": values}
    return _build(raw)


def load_config(path: Path | str) -> ExperimentConfig:
    """Parse and validate one experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    raw = {name: dict(parser.items(name)) for name in parser.sections()}
    return _build(raw)
