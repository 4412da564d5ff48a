"""Single-node optimization loops with per-iteration traces.

All loops share one trace schema (``TRACE_COLUMNS``) and the same
bookkeeping: an incremental full-loss tracker, optional verification of
the compressed-versus-virtual iterate identity, divergence and
convergence stopping rules, and a header sufficient to reproduce the run.

Iteration records describe the state *before* the step: row t holds
f(x_t), the sampled component, the accepted step-size, and the memory
norm entering the step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .compression import CompressionSpec, ErrorMemory, compress_with_feedback
from .errors import RunHaltedError, SearchFailedError, VerificationError
from .linesearch import ArmijoConfig, armijo_search, next_alpha_max
from .objectives import FiniteSumObjective, as_vector
from .prng import IndexSampler, RandomStream

Vector = NDArray[np.float64]

TRACE_COLUMNS = (
    "t", "i_t", "f_full", "f_i", "grad_sq", "alpha", "eta",
    "mem_sq", "dist_sq", "backtracks", "evals",
)
DISTRIBUTED_COLUMNS = TRACE_COLUMNS + (
    "bytes_up", "bytes_down", "worker_alpha_min", "worker_alpha_max",
)
_INT_COLUMNS = {"t", "i_t", "backtracks", "evals", "bytes_up", "bytes_down"}

DIVERGENCE_ABS_LIMIT = 1e12

_X0_STREAM = 0xB0
_SAMPLER_STREAM_BASE = 0xC000


@dataclass
class RunTrace:
    """Per-iteration records plus everything needed to rerun them.

    ``identity_residual_max`` is the largest scaled gap between the
    memory and the compressed-minus-virtual iterate seen during the run
    (NaN when the check was disabled).  ``iterates`` optionally stores
    x_t row-per-record for averaged-iterate analysis.
    """

    header: dict
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    status: str = "COMPLETED"
    halt_reason: str | None = None
    identity_residual_max: float = float("nan")
    iterates: np.ndarray | None = None
    final_x: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        dtype = np.int64 if name in _INT_COLUMNS else np.float64
        return np.array([row[idx] for row in self.rows], dtype=dtype)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class PerturbedTracker:
    """Virtual uncompressed trajectory x_hat and its identity check.

    x_hat starts at x_0 and subtracts every scaled stochastic gradient
    *before* compression; the compression memory must equal x - x_hat at
    every step, up to floating-point accumulation.
    """

    x_hat: Vector
    residual_max: float = 0.0

    def advance(self, update: Vector) -> None:
        self.x_hat = self.x_hat - update

    def check(self, x: Vector, mem: Vector, scale: float, tolerance: float = 1e-9) -> None:
        residual = float(np.linalg.norm((x - self.x_hat) - mem))
        scaled = residual / scale
        if scaled > self.residual_max:
            self.residual_max = scaled
        if scaled > tolerance:
            raise VerificationError(
                f"memory identity violated: residual {residual:.3e} at scale {scale:.3e}"
            )


@dataclass
class OptimizerState:
    """Evolving loop state; ``alpha_prev`` starts at alpha_max_init/omega so
    the first reset lands exactly on the configured initial cap."""

    x: Vector
    mem: ErrorMemory
    alpha_prev: float
    t: int
    sampler: IndexSampler


@dataclass(frozen=True)
class StepRecord:
    i_t: int
    f_i: float
    grad_sq: float
    alpha: float
    eta: float
    backtracks: int
    evals: int
    mem_sq: float
    update: Vector = field(repr=False)       # scaled gradient fed to the memory
    step_indices: NDArray[np.int64] = field(repr=False)
    step_values: Vector = field(repr=False)  # transmitted coordinates of x_t - x_{t+1}


def initial_state(
    obj: FiniteSumObjective, cfg: ArmijoConfig, seed: int, x0: Vector | None, worker: int = 0
) -> OptimizerState:
    if x0 is None:
        x0 = RandomStream(seed, _X0_STREAM).normal(obj.dim)
    else:
        x0 = as_vector(x0, obj.dim).copy()
    sampler = IndexSampler(RandomStream(seed, _SAMPLER_STREAM_BASE + worker), obj.n)
    return OptimizerState(
        x=x0,
        mem=ErrorMemory.zeros(obj.dim),
        alpha_prev=cfg.alpha_max_init / cfg.omega,
        t=0,
        sampler=sampler,
    )


def csgd_asss_step(
    obj: FiniteSumObjective,
    state: OptimizerState,
    cfg: ArmijoConfig,
    comp: CompressionSpec,
    batch_size: int = 1,
) -> tuple[OptimizerState, StepRecord]:
    """One compressed adaptive step: sample, search, scale, compress, move.

    A zero sampled gradient skips the search and reuses the previous
    step-size; the memory still passes through the compressor so queued
    coordinates keep draining.  ``batch_size`` > 1 samples that many
    components with replacement and averages their values and gradients
    (the search then runs on the batch mean); the trace records the first
    sampled index.
    """
    if batch_size == 1:
        i_t = state.sampler.next_index()
        f_i = obj.component_value(i_t, state.x)
        grad = obj.component_grad(i_t, state.x)

        def value_fn(p):
            return obj.component_value(i_t, p)

    else:
        batch = [state.sampler.next_index() for _ in range(batch_size)]
        i_t = batch[0]
        f_i = float(np.mean([obj.component_value(i, state.x) for i in batch]))
        grad = np.mean([obj.component_grad(i, state.x) for i in batch], axis=0)

        def value_fn(p):
            return float(np.mean([obj.component_value(i, p) for i in batch]))

    grad_sq = float(grad @ grad)
    if grad_sq == 0.0:
        alpha, backtracks, evals = state.alpha_prev, 0, 0
        eta = cfg.scale_a * alpha
    else:
        alpha_max = next_alpha_max(state.alpha_prev, cfg)
        result = armijo_search(value_fn, state.x, grad, f_i, alpha_max, cfg)
        alpha, eta = result.alpha, result.eta
        backtracks, evals = result.backtracks, result.evals
    update = eta * grad
    mem_sq = float(state.mem.m @ state.mem.m)
    feedback = compress_with_feedback(state.mem, update, comp)
    new_x = state.x - feedback.transmitted
    record = StepRecord(
        i_t=i_t,
        f_i=f_i,
        grad_sq=grad_sq,
        alpha=alpha,
        eta=eta,
        backtracks=backtracks,
        evals=evals,
        mem_sq=mem_sq,
        update=update,
        step_indices=feedback.indices,
        step_values=feedback.transmitted[feedback.indices],
    )
    new_state = OptimizerState(
        x=new_x,
        mem=feedback.memory,
        alpha_prev=alpha,
        t=state.t + 1,
        sampler=state.sampler,
    )
    return new_state, record


def _nonadaptive_step(
    obj: FiniteSumObjective,
    state: OptimizerState,
    eta_fixed: float,
    comp: CompressionSpec,
) -> tuple[OptimizerState, StepRecord]:
    i_t = state.sampler.next_index()
    f_i = obj.component_value(i_t, state.x)
    grad = obj.component_grad(i_t, state.x)
    grad_sq = float(grad @ grad)
    update = eta_fixed * grad
    mem_sq = float(state.mem.m @ state.mem.m)
    feedback = compress_with_feedback(state.mem, update, comp)
    record = StepRecord(
        i_t=i_t, f_i=f_i, grad_sq=grad_sq, alpha=eta_fixed, eta=eta_fixed,
        backtracks=0, evals=0, mem_sq=mem_sq, update=update,
        step_indices=feedback.indices,
        step_values=feedback.transmitted[feedback.indices],
    )
    new_state = OptimizerState(
        x=state.x - feedback.transmitted,
        mem=feedback.memory,
        alpha_prev=state.alpha_prev,
        t=state.t + 1,
        sampler=state.sampler,
    )
    return new_state, record


def _dist_sq(x: Vector, obj: FiniteSumObjective) -> float:
    if obj.minimizer is None:
        return float("nan")
    diff = x - obj.minimizer
    return float(diff @ diff)


class _StopRules:
    """Divergence and early-convergence detection against the initial loss."""

    def __init__(self, divergence_ratio: float | None, stop_loss_ratio: float | None):
        self.divergence_ratio = divergence_ratio
        self.stop_loss_ratio = stop_loss_ratio
        self.f_initial: float | None = None

    def classify(self, f_full: float) -> str | None:
        if self.f_initial is None:
            self.f_initial = f_full
        if not np.isfinite(f_full) or f_full > DIVERGENCE_ABS_LIMIT:
            return "DIVERGED"
        if self.divergence_ratio is not None and f_full > self.divergence_ratio * self.f_initial:
            return "DIVERGED"
        if self.stop_loss_ratio is not None and f_full <= self.stop_loss_ratio * self.f_initial:
            return "CONVERGED"
        return None


def _run_compressed_loop(
    obj: FiniteSumObjective,
    comp: CompressionSpec,
    horizon: int,
    header: dict,
    step_fn: Callable[[OptimizerState], tuple[OptimizerState, StepRecord]],
    state: OptimizerState,
    *,
    track_perturbed: bool,
    collect_iterates: bool,
    divergence_ratio: float | None,
    stop_loss_ratio: float | None,
) -> RunTrace:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    trace = RunTrace(header=header, columns=TRACE_COLUMNS)
    tracker = obj.loss_tracker(state.x)
    perturbed = PerturbedTracker(x_hat=state.x.copy()) if track_perturbed else None
    stop = _StopRules(divergence_ratio, stop_loss_ratio)
    evals_total = 0
    iterates: list[Vector] = []

    def finalize(status: str, reason: str | None) -> RunTrace:
        trace.status = status
        trace.halt_reason = reason
        trace.identity_residual_max = (
            perturbed.residual_max if perturbed is not None else float("nan")
        )
        if collect_iterates:
            trace.iterates = np.array(iterates)
        trace.final_x = state.x.copy()
        return trace

    for t in range(horizon):
        f_full = tracker.value()
        verdict = stop.classify(f_full)
        if verdict is not None:
            if collect_iterates:
                iterates.append(state.x.copy())
            trace.rows.append((
                t, -1, f_full, float("nan"), float("nan"), float("nan"), float("nan"),
                float(state.mem.m @ state.mem.m), _dist_sq(state.x, obj), 0, evals_total,
            ))
            return finalize(verdict, f"loss {f_full:.6e} at iteration {t}")
        x_before = state.x
        try:
            state, record = step_fn(state)
        except SearchFailedError as exc:
            finalize("HALTED", str(exc))
            raise RunHaltedError(f"iteration {t}: {exc}", trace=trace) from exc
        evals_total += record.evals
        if collect_iterates:
            iterates.append(x_before.copy())
        trace.rows.append((
            t, record.i_t, f_full, record.f_i, record.grad_sq, record.alpha,
            record.eta, record.mem_sq, _dist_sq(x_before, obj),
            record.backtracks, evals_total,
        ))
        tracker.apply(record.step_indices, record.step_values)
        if perturbed is not None:
            perturbed.advance(record.update)
            perturbed.check(
                state.x, state.mem.m, scale=1.0 + float(np.linalg.norm(state.mem.m))
            )
    return finalize("COMPLETED", None)


def run_csgd_asss(
    obj: FiniteSumObjective,
    cfg: ArmijoConfig,
    comp: CompressionSpec,
    horizon: int,
    seed: int,
    *,
    x0: Vector | None = None,
    track_perturbed: bool = True,
    collect_iterates: bool = False,
    divergence_ratio: float | None = None,
    stop_loss_ratio: float | None = None,
    header_extra: dict | None = None,
    batch_size: int = 1,
) -> RunTrace:
    """Compressed SGD with per-iteration Armijo search, reset, and scaling.

    Deterministic given (objective, cfg, comp, horizon, seed, x0).  Raises
    :class:`RunHaltedError` (with the partial trace attached) if a search
    exhausts its backtracking budget.
    """
    if comp.d != obj.dim:
        raise ValueError(f"compression dimension {comp.d} does not match objective {obj.dim}")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    state = initial_state(obj, cfg, seed, x0)
    header = _header("csgd_asss", obj, horizon, seed, cfg=cfg, comp=comp, extra=header_extra)
    header["batch_size"] = batch_size
    return _run_compressed_loop(
        obj, comp, horizon, header,
        lambda s: csgd_asss_step(obj, s, cfg, comp, batch_size=batch_size), state,
        track_perturbed=track_perturbed,
        collect_iterates=collect_iterates,
        divergence_ratio=divergence_ratio,
        stop_loss_ratio=stop_loss_ratio,
    )


def run_sgd_armijo_uncompressed(
    obj: FiniteSumObjective,
    cfg: ArmijoConfig,
    horizon: int,
    seed: int,
    **kwargs,
) -> RunTrace:
    """Adaptive SGD without compression: the k = d special case."""
    comp = CompressionSpec(k=obj.dim, d=obj.dim)
    trace = run_csgd_asss(obj, cfg, comp, horizon, seed, **kwargs)
    trace.header["algorithm"] = "sgd_armijo"
    return trace


def run_nonadaptive_csgd(
    obj: FiniteSumObjective,
    eta_fixed: float,
    comp: CompressionSpec,
    horizon: int,
    seed: int,
    *,
    x0: Vector | None = None,
    track_perturbed: bool = True,
    collect_iterates: bool = False,
    divergence_ratio: float | None = None,
    stop_loss_ratio: float | None = None,
    header_extra: dict | None = None,
) -> RunTrace:
    """Compressed SGD with a constant step-size (no search, no scaling)."""
    if eta_fixed < 0.0:
        raise ValueError("eta_fixed must be nonnegative")
    if comp.d != obj.dim:
        raise ValueError(f"compression dimension {comp.d} does not match objective {obj.dim}")
    cfg = ArmijoConfig()  # only used for x0/sampler initialization defaults
    state = initial_state(obj, cfg, seed, x0)
    header = _header("nonadaptive_csgd", obj, horizon, seed, comp=comp, extra=header_extra)
    header["eta_fixed"] = eta_fixed
    return _run_compressed_loop(
        obj, comp, horizon, header,
        lambda s: _nonadaptive_step(obj, s, eta_fixed, comp), state,
        track_perturbed=track_perturbed,
        collect_iterates=collect_iterates,
        divergence_ratio=divergence_ratio,
        stop_loss_ratio=stop_loss_ratio,
    )


def run_scaled_gd(
    obj: FiniteSumObjective,
    cfg: ArmijoConfig,
    horizon: int,
    *,
    x0: Vector | None = None,
    seed: int = 0,
    collect_iterates: bool = False,
    divergence_ratio: float | None = None,
    stop_loss_ratio: float | None = None,
    header_extra: dict | None = None,
) -> RunTrace:
    """Deterministic gradient descent with Armijo search and scaled steps.

    Full gradients, no compression, no memory.  The search is the classical
    one: every iteration backtracks from the same cap ``cfg.alpha_max_init``
    (the growth reset belongs to the stochastic compressed loop).  The
    O(1/T) guarantee needs scale_a < 2*sigma; larger values still run but
    carry no bound, so they only warn.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if cfg.scale_a >= 2.0 * cfg.sigma:
        warnings.warn(
            f"scale_a={cfg.scale_a} is not below 2*sigma={2 * cfg.sigma}: "
            "the deterministic rate bound is vacuous",
            stacklevel=2,
        )
    if x0 is None:
        x0 = RandomStream(seed, _X0_STREAM).normal(obj.dim)
    else:
        x0 = as_vector(x0, obj.dim).copy()
    x = x0
    trace = RunTrace(
        header=_header("scaled_gd", obj, horizon, seed, cfg=cfg, extra=header_extra),
        columns=TRACE_COLUMNS,
    )
    stop = _StopRules(divergence_ratio, stop_loss_ratio)
    evals_total = 0
    iterates: list[Vector] = []
    status, reason = "COMPLETED", None
    for t in range(horizon):
        f_full = obj.full_value(x)
        verdict = stop.classify(f_full)
        if collect_iterates:
            iterates.append(x.copy())
        if verdict is not None:
            trace.rows.append((
                t, -1, f_full, float("nan"), float("nan"), float("nan"), float("nan"),
                0.0, _dist_sq(x, obj), 0, evals_total,
            ))
            status, reason = verdict, f"loss {f_full:.6e} at iteration {t}"
            break
        grad = obj.full_grad(x)
        grad_sq = float(grad @ grad)
        if grad_sq == 0.0:
            alpha, backtracks, evals = 0.0, 0, 0
        else:
            try:
                result = armijo_search(
                    lambda p: obj.full_value(p), x, grad, f_full, cfg.alpha_max_init, cfg
                )
            except SearchFailedError as exc:
                trace.status, trace.halt_reason = "HALTED", str(exc)
                trace.final_x = x.copy()
                raise RunHaltedError(f"iteration {t}: {exc}", trace=trace) from exc
            alpha, backtracks, evals = result.alpha, result.backtracks, result.evals
        eta = cfg.scale_a * alpha
        evals_total += evals
        trace.rows.append((
            t, -1, f_full, f_full, grad_sq, alpha, eta, 0.0, _dist_sq(x, obj),
            backtracks, evals_total,
        ))
        x = x - eta * grad
    trace.status = status
    trace.halt_reason = reason
    if collect_iterates:
        trace.iterates = np.array(iterates)
    trace.final_x = x.copy()
    return trace


def _header(
    algorithm: str,
    obj: FiniteSumObjective,
    horizon: int,
    seed: int,
    cfg: ArmijoConfig | None = None,
    comp: CompressionSpec | None = None,
    extra: dict | None = None,
) -> dict:
    header = {
        "algorithm": algorithm,
        "objective_class": type(obj).__name__,
        "n": obj.n,
        "dim": obj.dim,
        "l_max": obj.l_max,
        "mu_bar": obj.mu_bar,
        "horizon": horizon,
        "seed": seed,
    }
    if cfg is not None:
        header.update(
            sigma=cfg.sigma, rho=cfg.rho, omega=cfg.omega, scale_a=cfg.scale_a,
            alpha_max_init=cfg.alpha_max_init, max_backtracks=cfg.max_backtracks,
            alpha_max_cap=cfg.alpha_max_cap,
        )
    if comp is not None:
        header.update(k=comp.k, gamma=comp.gamma)
    if extra:
        header.update(extra)
    return header
