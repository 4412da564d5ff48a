"""Synchronous multi-worker simulator with sparse update messages.

N workers own contiguous equal shards of the components.  Each round every
worker samples inside its shard, runs its own Armijo search with its own
step-size reset, compresses the scaled gradient plus its private memory,
and sends the k surviving coordinates; the central node averages the
incoming updates in worker-id order.  Rounds are sequential; worker steps
within a round are pure functions of (worker state, broadcast iterate) and
may execute in any order without changing the result.

Messages carry an explicit little-endian binary codec (header: sender u32,
iteration u64, count u32; entries: index u32 + value f64) so bytes on the
wire can be counted even though transport is in-process.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .compression import CompressionSpec, ErrorMemory, compress_with_feedback
from .errors import ProtocolError, RunHaltedError, SearchFailedError
from .linesearch import ArmijoConfig, armijo_search, next_alpha_max
from .objectives import FiniteSumObjective
from .optimizers import (
    DISTRIBUTED_COLUMNS,
    PerturbedTracker,
    RunTrace,
    _SAMPLER_STREAM_BASE,
    _X0_STREAM,
    _StopRules,
    _dist_sq,
)
from .prng import IndexSampler, RandomStream

Vector = NDArray[np.float64]

_HEADER = struct.Struct("<IQI")
_ENTRY = struct.Struct("<Id")

# Payload accounting per the wire format: one (u32 index, f64 value) pair
# per transmitted coordinate up, one f64 per coordinate broadcast down.
ENTRY_BYTES = 12
BROADCAST_BYTES_PER_COORD = 8


@dataclass(frozen=True)
class SparseMessage:
    """The k surviving coordinates of one worker's compressed update."""

    sender: int
    iteration: int
    indices: NDArray[np.uint32]
    values: NDArray[np.float64]

    def __post_init__(self):
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ProtocolError("indices and values must be 1-D and aligned")
        if self.indices.size and np.any(np.diff(self.indices.astype(np.int64)) <= 0):
            raise ProtocolError("indices must be strictly increasing")

    def encode(self) -> bytes:
        out = bytearray(_HEADER.pack(self.sender, self.iteration, self.indices.size))
        for idx, val in zip(self.indices, self.values):
            out += _ENTRY.pack(int(idx), float(val))
        return bytes(out)

    @staticmethod
    def decode(blob: bytes) -> "SparseMessage":
        if len(blob) < _HEADER.size:
            raise ProtocolError("message shorter than its header")
        sender, iteration, count = _HEADER.unpack_from(blob, 0)
        expected = _HEADER.size + count * _ENTRY.size
        if len(blob) != expected:
            raise ProtocolError(f"message length {len(blob)} != expected {expected}")
        indices = np.empty(count, dtype=np.uint32)
        values = np.empty(count, dtype=np.float64)
        for j in range(count):
            idx, val = _ENTRY.unpack_from(blob, _HEADER.size + j * _ENTRY.size)
            indices[j] = idx
            values[j] = val
        return SparseMessage(sender, iteration, indices, values)

    def densify(self, dim: int) -> Vector:
        out = np.zeros(dim)
        out[self.indices.astype(np.int64)] = self.values
        return out


@dataclass
class WorkerState:
    """One worker's private shard, memory, step-size state, and sampler."""

    worker_id: int
    shard_start: int
    shard_size: int
    mem: ErrorMemory
    alpha_prev: float
    sampler: IndexSampler


@dataclass(frozen=True)
class WorkerStepInfo:
    """Round diagnostics the runner needs beyond the wire message."""

    component: int
    f_i: float
    grad_sq: float
    alpha: float
    backtracks: int
    evals: int
    mem_sq: float
    update: Vector = field(repr=False)  # scaled gradient before compression


def make_workers(
    obj: FiniteSumObjective, workers: int, cfg: ArmijoConfig, seed: int
) -> list[WorkerState]:
    if workers < 1:
        raise ProtocolError("need at least one worker")
    if obj.n % workers != 0:
        raise ProtocolError(f"{obj.n} components do not split evenly over {workers} workers")
    shard = obj.n // workers
    return [
        WorkerState(
            worker_id=k,
            shard_start=k * shard,
            shard_size=shard,
            mem=ErrorMemory.zeros(obj.dim),
            alpha_prev=cfg.alpha_max_init / cfg.omega,
            sampler=IndexSampler(RandomStream(seed, _SAMPLER_STREAM_BASE + k), shard),
        )
        for k in range(workers)
    ]


def worker_step(
    worker: WorkerState,
    obj: FiniteSumObjective,
    x: Vector,
    iteration: int,
    cfg: ArmijoConfig,
    comp: CompressionSpec,
) -> tuple[WorkerState, SparseMessage, WorkerStepInfo]:
    """One worker's round: sample, search, scale inside the memory, transmit.

    Line-search failures are re-raised tagged with the worker id.
    """
    local = worker.sampler.next_index()
    component = worker.shard_start + local
    f_i = obj.component_value(component, x)
    grad = obj.component_grad(component, x)
    grad_sq = float(grad @ grad)
    if grad_sq == 0.0:
        alpha, backtracks, evals = worker.alpha_prev, 0, 0
    else:
        alpha_max = next_alpha_max(worker.alpha_prev, cfg)
        try:
            result = armijo_search(
                lambda p: obj.component_value(component, p), x, grad, f_i, alpha_max, cfg
            )
        except SearchFailedError as exc:
            raise SearchFailedError(
                f"worker {worker.worker_id}: {exc}", exc.last_alpha, exc.backtracks
            ) from exc
        alpha, backtracks, evals = result.alpha, result.backtracks, result.evals
    update = (cfg.scale_a * alpha) * grad
    mem_sq = float(worker.mem.m @ worker.mem.m)
    feedback = compress_with_feedback(worker.mem, update, comp)
    message = SparseMessage(
        sender=worker.worker_id,
        iteration=iteration,
        indices=feedback.indices.astype(np.uint32),
        values=feedback.transmitted[feedback.indices],
    )
    new_worker = WorkerState(
        worker_id=worker.worker_id,
        shard_start=worker.shard_start,
        shard_size=worker.shard_size,
        mem=feedback.memory,
        alpha_prev=alpha,
        sampler=worker.sampler,
    )
    info = WorkerStepInfo(
        component=component,
        f_i=f_i,
        grad_sq=grad_sq,
        alpha=alpha,
        backtracks=backtracks,
        evals=evals,
        mem_sq=mem_sq,
        update=update,
    )
    return new_worker, message, info


def aggregate_delta(
    messages: list[SparseMessage], dim: int, workers: int, iteration: int
) -> tuple[Vector, NDArray[np.int64]]:
    """Mean of the densified messages and its support, in worker-id order."""
    seen = sorted(message.sender for message in messages)
    if seen != list(range(workers)):
        raise ProtocolError(f"expected one message per worker 0..{workers - 1}, got {seen}")
    for message in messages:
        if message.iteration != iteration:
            raise ProtocolError(
                f"worker {message.sender} sent iteration {message.iteration}, expected {iteration}"
            )
        if message.indices.size and int(message.indices[-1]) >= dim:
            raise ProtocolError(f"worker {message.sender} indices exceed dimension {dim}")
    total = np.zeros(dim)
    for message in sorted(messages, key=lambda m: m.sender):
        total[message.indices.astype(np.int64)] += message.values
    support = np.unique(np.concatenate([m.indices.astype(np.int64) for m in messages]))
    return total / workers, support


def central_aggregate(
    messages: list[SparseMessage], x: Vector, workers: int, iteration: int
) -> Vector:
    """x - (1/N) * sum of densified updates, summed in worker-id order."""
    delta, _ = aggregate_delta(messages, x.size, workers, iteration)
    return x - delta


def distributed_rate_constant(
    obj: FiniteSumObjective, comp: CompressionSpec, cfg: ArmijoConfig, epsilon: float | None = None
):
    """O(1/T) constant for the distributed run: the single-node convex
    constant evaluated with the smoothness maximum over every worker's
    components (the global maximum, since shards partition the components).
    """
    from . import theory  # local import keeps module load cycle-free

    inputs = theory.TheoryInputs(
        sigma=cfg.sigma, gamma=comp.gamma, rho=cfg.rho, epsilon=epsilon,
        a=cfg.scale_a, l_max=obj.l_max,
    )
    return theory.convex_rate_constants(inputs)


def run_dcsgd(
    obj: FiniteSumObjective,
    workers: int,
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
) -> RunTrace:
    """T synchronous rounds of distributed compressed SGD with scaling.

    The trace keeps the single-node schema (aggregated across workers:
    ``i_t`` is worker 0's sample, ``f_i``/``grad_sq``/``alpha`` are worker
    means, ``mem_sq`` is the squared norm of the mean memory) and appends
    payload byte counts plus the min/max accepted step across workers.
    With one worker the shared columns reproduce the single-node run
    bit for bit.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if comp.d != obj.dim:
        raise ValueError(f"compression dimension {comp.d} does not match objective {obj.dim}")
    if x0 is None:
        x0 = RandomStream(seed, _X0_STREAM).normal(obj.dim)
    else:
        x0 = np.asarray(x0, dtype=float).copy()
    states = make_workers(obj, workers, cfg, seed)
    x = x0
    header = {
        "algorithm": "dcsgd_asss",
        "objective_class": type(obj).__name__,
        "n": obj.n, "dim": obj.dim, "l_max": obj.l_max, "mu_bar": obj.mu_bar,
        "horizon": horizon, "seed": seed, "workers": workers,
        "sigma": cfg.sigma, "rho": cfg.rho, "omega": cfg.omega, "scale_a": cfg.scale_a,
        "alpha_max_init": cfg.alpha_max_init, "alpha_max_cap": cfg.alpha_max_cap,
        "k": comp.k, "gamma": comp.gamma,
    }
    if header_extra:
        header.update(header_extra)
    trace = RunTrace(header=header, columns=DISTRIBUTED_COLUMNS)
    tracker = obj.loss_tracker(x)
    perturbed = PerturbedTracker(x_hat=x.copy()) if track_perturbed else None
    stop = _StopRules(divergence_ratio, stop_loss_ratio)
    evals_total = 0
    bytes_up = workers * comp.k * ENTRY_BYTES
    bytes_down = obj.dim * BROADCAST_BYTES_PER_COORD
    iterates: list[Vector] = []

    def mean_memory() -> Vector:
        total = np.zeros(obj.dim)
        for state in states:
            total += state.mem.m
        return total / workers

    def finalize(status: str, reason: str | None) -> RunTrace:
        trace.status = status
        trace.halt_reason = reason
        trace.identity_residual_max = (
            perturbed.residual_max if perturbed is not None else float("nan")
        )
        if collect_iterates:
            trace.iterates = np.array(iterates)
        trace.final_x = x.copy()
        return trace

    for t in range(horizon):
        f_full = tracker.value()
        verdict = stop.classify(f_full)
        if verdict is not None:
            if collect_iterates:
                iterates.append(x.copy())
            mem_bar = mean_memory()
            trace.rows.append((
                t, -1, f_full, float("nan"), float("nan"), float("nan"), float("nan"),
                float(mem_bar @ mem_bar), _dist_sq(x, obj), 0, evals_total,
                bytes_up, bytes_down, float("nan"), float("nan"),
            ))
            return finalize(verdict, f"loss {f_full:.6e} at round {t}")
        mem_bar = mean_memory()
        messages: list[SparseMessage] = []
        infos: list[WorkerStepInfo] = []
        try:
            for k, state in enumerate(states):
                states[k], message, info = worker_step(state, obj, x, t, cfg, comp)
                messages.append(message)
                infos.append(info)
        except SearchFailedError as exc:
            finalize("HALTED", str(exc))
            raise RunHaltedError(f"round {t}: {exc}", trace=trace) from exc
        delta, support = aggregate_delta(messages, obj.dim, workers, t)
        mean_update = np.zeros(obj.dim)
        for info in infos:  # worker-id order
            mean_update += info.update
        mean_update /= workers
        alphas = [info.alpha for info in infos]
        evals_total += sum(info.evals for info in infos)
        if collect_iterates:
            iterates.append(x.copy())
        trace.rows.append((
            t,
            infos[0].component,
            f_full,
            sum(info.f_i for info in infos) / workers,
            sum(info.grad_sq for info in infos) / workers,
            sum(alphas) / workers,
            cfg.scale_a * (sum(alphas) / workers),
            float(mem_bar @ mem_bar),
            _dist_sq(x, obj),
            sum(info.backtracks for info in infos),
            evals_total,
            bytes_up,
            bytes_down,
            min(alphas),
            max(alphas),
        ))
        tracker.apply(support, delta[support])
        x = x - delta
        if perturbed is not None:
            perturbed.advance(mean_update)
            perturbed.check(x, mean_memory(), scale=1.0 + float(np.linalg.norm(x)))
    return finalize("COMPLETED", None)
