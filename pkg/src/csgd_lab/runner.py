"""Execute configured experiments across seeds and write their traces.

Seed-level parallelism is capped by the ``CSGD_LAB_THREADS`` environment
variable (default 1).  Each seed's run is sequential and isolated; files
are written per seed and the aggregate is computed afterwards in sorted
seed order, so results are independent of scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compression import CompressionSpec
from .config import ExperimentConfig
from .distributed import run_dcsgd
from .errors import ConfigError, RunHaltedError
from .objectives import FiniteSumObjective, build_objective
from .optimizers import (
    RunTrace,
    run_csgd_asss,
    run_nonadaptive_csgd,
    run_scaled_gd,
    run_sgd_armijo_uncompressed,
)
from .traceio import aggregate_csv_text, write_trace


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    status: str
    final_loss: float
    initial_loss: float
    rows: int
    csv_path: Path
    halt_reason: str | None = None


@dataclass(frozen=True)
class VariantOutcome:
    label: str
    outcomes: tuple[SeedOutcome, ...]
    aggregate_path: Path

    @property
    def mean_final_loss(self) -> float:
        return float(np.mean([o.final_loss for o in self.outcomes]))


def thread_budget() -> int:
    raw = os.environ.get("CSGD_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _x0_for(config: ExperimentConfig, obj: FiniteSumObjective):
    if config.x0_kind == "zeros":
        return np.zeros(obj.dim)
    if config.x0_kind == "ones":
        return np.ones(obj.dim)
    return None  # seeded normal draw inside the run


def _compression(config: ExperimentConfig, obj: FiniteSumObjective) -> CompressionSpec:
    assert config.compression_k is not None
    return CompressionSpec(k=config.compression_k, d=obj.dim)


def run_single_seed(config: ExperimentConfig, obj: FiniteSumObjective, seed: int) -> RunTrace:
    """Dispatch one seed of the configured algorithm."""
    common = dict(
        x0=_x0_for(config, obj),
        divergence_ratio=config.divergence_ratio,
        stop_loss_ratio=config.stop_loss_ratio,
        header_extra={"objective_kind": config.objective.kind,
                      "objective_seed": config.objective.seed,
                      "x0_kind": config.x0_kind},
    )
    if config.algorithm == "csgd_asss":
        return run_csgd_asss(
            obj, config.armijo, _compression(config, obj), config.horizon, seed,
            track_perturbed=config.track_perturbed, **common,
        )
    if config.algorithm == "sgd_armijo":
        return run_sgd_armijo_uncompressed(
            obj, config.armijo, config.horizon, seed,
            track_perturbed=config.track_perturbed, **common,
        )
    if config.algorithm == "scaled_gd":
        return run_scaled_gd(obj, config.armijo, config.horizon, seed=seed, **common)
    if config.algorithm == "nonadaptive_csgd":
        return run_nonadaptive_csgd(
            obj, config.eta_fixed, _compression(config, obj), config.horizon, seed,
            track_perturbed=config.track_perturbed, **common,
        )
    if config.algorithm == "dcsgd_asss":
        return run_dcsgd(
            obj, config.workers, config.armijo, _compression(config, obj),
            config.horizon, seed,
            track_perturbed=config.track_perturbed, **common,
        )
    raise ConfigError(f"unknown algorithm {config.algorithm!r}")


def run_variant(config: ExperimentConfig, out_dir: Path, label: str) -> VariantOutcome:
    """All seeds of one configuration; per-seed CSVs plus an aggregate CSV.

    A :class:`RunHaltedError` still produces files for its partial trace
    before propagating (with the partial outcome attached).
    """
    obj = build_objective(config.objective)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(seed: int) -> tuple[int, RunTrace, RunHaltedError | None]:
        try:
            return seed, run_single_seed(config, obj, seed), None
        except RunHaltedError as exc:
            return seed, exc.trace, exc

    threads = min(thread_budget(), len(config.seeds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, config.seeds))
    else:
        results = [one(seed) for seed in config.seeds]

    outcomes = []
    traces = []
    failure: RunHaltedError | None = None
    for seed, trace, error in sorted(results, key=lambda item: item[0]):
        csv_path = out_dir / f"{config.algorithm}_seed{seed:04d}.csv"
        write_trace(trace, csv_path)
        loss = trace.column("f_full")
        outcomes.append(SeedOutcome(
            seed=seed,
            status=trace.status,
            final_loss=float(loss[-1]) if len(loss) else float("nan"),
            initial_loss=float(loss[0]) if len(loss) else float("nan"),
            rows=len(trace),
            csv_path=csv_path,
            halt_reason=trace.halt_reason,
        ))
        traces.append(trace)
        if error is not None and failure is None:
            failure = error
    aggregate_path = out_dir / f"{config.algorithm}_mean.csv"
    aggregate_path.write_text(aggregate_csv_text(traces))
    outcome = VariantOutcome(label=label, outcomes=tuple(outcomes), aggregate_path=aggregate_path)
    if failure is not None:
        failure.partial_outcome = outcome  # diagnostics survive the failure
        raise failure
    return outcome


def run_experiment(config: ExperimentConfig) -> list[VariantOutcome]:
    """Run the config, expanding its sweep section when present."""
    if config.sweep_param is None:
        return [run_variant(config, config.output_dir, label="run")]
    variants = []
    for value in config.sweep_values:
        label = f"{config.sweep_param}={value}"
        sub = config.with_override(config.sweep_param, value)
        variants.append(run_variant(sub, config.output_dir / label, label=label))
    return variants
