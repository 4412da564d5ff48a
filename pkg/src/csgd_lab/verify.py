"""Runtime invariant suite: every checkable identity, one verdict per item.

Each check returns a :class:`CheckResult`; :func:`run_all` collects them.
The checks are deliberately independent re-derivations (grid searches,
enumerations, trace-level assertions), not calls back into the formulas
they validate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .compression import CompressionSpec, contraction_check
from .errors import CsgdLabError
from .linesearch import ArmijoConfig, armijo_search
from .objectives import (
    make_diag_quadratic,
    make_interpolated_regression,
    make_strongly_convex_mix,
)
from .prng import RandomStream
from . import theory


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


# ---------------------------------------------------------------------
# Brute-force oracle for the split program (independent of the closed form).
# ---------------------------------------------------------------------


def split_program_grid_minimum(psi: float) -> tuple[float, float, float]:
    """Constrained grid minimum of 1/s + psi/z with local refinement.

    Scans s, z over (0, 1] at 1e-3 resolution, then refines a window
    around the incumbent through 1e-4 and 1e-5 down to 1e-6.  The window
    spans 80 previous-stage steps per side: the minimum sits on the budget
    boundary where the objective is almost flat along the constraint, so
    a coarse argmin can sit several steps away from the true optimizer.
    Returns (s, z, value).
    """

    def scan(s_lo, s_hi, z_lo, z_hi, step):
        s = np.arange(max(s_lo, step), s_hi + step / 2, step)
        z = np.arange(max(z_lo, step), z_hi + step / 2, step)
        if s.size == 0 or z.size == 0:
            return None
        ss, zz = np.meshgrid(s, z, indexing="ij")
        feasible = ss + psi * (1.0 + zz) <= 1.0
        if not feasible.any():
            return None
        values = 1.0 / ss + psi / zz
        values[~feasible] = np.inf
        flat = int(np.argmin(values))
        i, j = np.unravel_index(flat, values.shape)
        return float(ss[i, j]), float(zz[i, j]), float(values[i, j])

    steps = (1e-3, 1e-4, 1e-5, 1e-6)
    best = scan(0.0, 1.0, 0.0, 1.0, steps[0])
    if best is None:
        raise CsgdLabError(f"grid found no feasible point for psi={psi}")
    for previous, step in zip(steps, steps[1:]):
        s0, z0, _ = best
        window = 80.0 * previous
        refined = scan(s0 - window, s0 + window, z0 - window, z0 + window, step)
        if refined is not None and refined[2] <= best[2]:
            best = refined
    return best


def _timed(name: str, body: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.monotonic()
    try:
        passed, detail = body()
    except CsgdLabError as exc:
        passed, detail = False, f"error: {exc}"
    return CheckResult(name, passed, detail, time.monotonic() - start)


# ---------------------------------------------------------------------
# Individual checks.
# ---------------------------------------------------------------------


def check_split_program_oracle(quick: bool = False) -> CheckResult:
    def body():
        worst = 0.0
        psis = [0.0, 0.3, 0.9] if quick else [round(0.1 * i, 1) for i in range(10)]
        for psi in psis:
            closed = theory.solve_split_program(psi)
            _, _, grid_value = split_program_grid_minimum(psi)
            rel = abs(closed.value - grid_value) / closed.value
            worst = max(worst, rel)
            if rel > 1e-4:
                return False, f"psi={psi}: closed {closed.value} vs grid {grid_value}"
        return True, f"max relative gap {worst:.2e} over {len(psis)} psi values"

    return _timed("split-program-oracle", body)


def check_split_consistency(quick: bool = False) -> CheckResult:
    def body():
        stream = RandomStream(101)
        count = 10 if quick else 50
        worst = 0.0
        for _ in range(count):
            sigma = 0.02 + 0.96 * float(stream.uniform(1)[0])
            gamma = 0.02 + 0.98 * float(stream.uniform(1)[0])
            p, r = theory.optimal_error_split(gamma)
            at_opt = theory.admissible_scale(p, r, sigma, gamma)
            zeta = theory.scale_limit(sigma, gamma)
            rel = abs(at_opt - zeta) / zeta
            worst = max(worst, rel)
            if rel > 1e-12:
                return False, f"sigma={sigma}, gamma={gamma}: {at_opt} vs {zeta}"
        if theory.scale_limit(0.37, 1.0) != 0.37:
            return False, "scale limit at gamma=1 is not exactly sigma"
        return True, f"max relative gap {worst:.2e} over {count} draws"

    return _timed("split-consistency", body)


def check_interior_split_predicates(quick: bool = False) -> CheckResult:
    def body():
        stream = RandomStream(102)
        count = 20 if quick else 100
        for _ in range(count):
            sigma = 0.05 + 0.9 * float(stream.uniform(1)[0])
            gamma = 0.02 + 0.98 * float(stream.uniform(1)[0])
            zeta = theory.scale_limit(sigma, gamma)
            epsilon = zeta * (0.01 + 0.98 * float(stream.uniform(1)[0]))
            p, r = theory.interior_error_split(gamma, sigma, epsilon)
            if not theory.split_budget(p, r, gamma) < 1.0:
                return False, f"budget not interior at gamma={gamma}"
            if not theory.admissible_scale(p, r, sigma, gamma) > zeta - epsilon:
                return False, f"admissible scale too small at gamma={gamma}, sigma={sigma}"
        return True, f"both predicates strict on {count} draws"

    return _timed("interior-split-predicates", body)


def check_compression_contraction(quick: bool = False) -> CheckResult:
    def body():
        configs = [(128, 1), (128, 13), (1024, 10)]
        per_config = 300 if quick else 2000
        for d, k in configs:
            stream = RandomStream(103, stream=d * 2048 + k)
            spec = CompressionSpec(k=k, d=d)
            for _ in range(per_config):
                if not contraction_check(stream.normal(d), spec, slack=0.0):
                    return False, f"violation at d={d}, k={k}"
        return True, f"{per_config} vectors per config, zero violations"

    return _timed("compression-contraction", body)


def check_armijo_bounds(quick: bool = False) -> CheckResult:
    def body():
        stream = RandomStream(104)
        count = 200 if quick else 2000
        for _ in range(count):
            d = int(stream.integers(1, 6)[0]) + 1
            obj = make_diag_quadratic(0.05 + 2.0 * stream.uniform(d))
            sigma = 0.05 + 0.9 * float(stream.uniform(1)[0])
            rho = 0.4 + 0.55 * float(stream.uniform(1)[0])
            cfg = ArmijoConfig(sigma=sigma, rho=rho)
            x = stream.normal(d) + 0.05
            grad = obj.full_grad(x)
            if float(grad @ grad) == 0.0:
                continue
            free_point = 2.0 * (1.0 - sigma) / obj.l_max
            alpha_max = free_point * (1.0 + 20.0 * float(stream.uniform(1)[0]))
            f0 = obj.full_value(x)
            res = armijo_search(lambda v: obj.full_value(v), x, grad, f0, alpha_max, cfg)
            if not rho * free_point - 1e-12 <= res.alpha <= rho * alpha_max:
                return False, f"alpha {res.alpha} outside [{rho*free_point}, {rho*alpha_max}]"
            lhs = obj.full_value(x - res.alpha * grad)
            if lhs > f0 - sigma * res.alpha * float(grad @ grad):
                return False, "sufficient decrease violated at accepted step"
        return True, f"{count} searches within guaranteed bounds"

    return _timed("armijo-bounds", body)


def _late_imports():
    # run-based checks need optimizers/distributed; imported lazily to keep
    # module import light and cycle-free.
    from . import distributed, optimizers  # noqa: PLC0415

    return optimizers, distributed


def check_memory_identity(quick: bool = False) -> CheckResult:
    def body():
        optimizers, _ = _late_imports()
        horizon = 100 if quick else 400
        worst = 0.0
        runs = [
            (make_interpolated_regression(30, 12, 1.0, seed=5), CompressionSpec(2, 12)),
            (make_strongly_convex_mix(12, 8, 0.1, seed=6), CompressionSpec(1, 8)),
            (make_diag_quadratic([2.0 ** -(i + 1) for i in range(10)]), CompressionSpec(3, 10)),
        ]
        for run_seed, (obj, comp) in enumerate(runs):
            trace = optimizers.run_csgd_asss(
                obj, ArmijoConfig(), comp, horizon, seed=run_seed
            )
            worst = max(worst, trace.identity_residual_max)
        if worst > 1e-9:
            return False, f"max scaled residual {worst:.2e} exceeds 1e-9"
        return True, f"max scaled residual {worst:.2e} across {len(runs)} runs"

    return _timed("memory-identity-single", body)


def check_distributed_identity(quick: bool = False) -> CheckResult:
    def body():
        optimizers, distributed = _late_imports()
        horizon = 50 if quick else 200
        obj = make_interpolated_regression(24, 10, 1.0, seed=7)
        comp = CompressionSpec(2, 10)
        worst = 0.0
        for workers in (2, 4):
            trace = distributed.run_dcsgd(
                obj, workers, ArmijoConfig(), comp, horizon, seed=3
            )
            worst = max(worst, trace.identity_residual_max)
        if worst > 1e-9:
            return False, f"max scaled residual {worst:.2e} exceeds 1e-9"
        single = optimizers.run_csgd_asss(obj, ArmijoConfig(), comp, horizon, seed=3)
        solo = distributed.run_dcsgd(obj, 1, ArmijoConfig(), comp, horizon, seed=3)
        for name in single.columns:
            if not np.array_equal(single.column(name), solo.column(name)):
                return False, f"N=1 column {name} differs from the single-node run"
        return True, f"identity residual {worst:.2e}; N=1 bitwise equal"

    return _timed("memory-identity-distributed", body)


def check_scaling_necessity(quick: bool = False, fault: str | None = None) -> CheckResult:
    def body():
        optimizers, _ = _late_imports()
        n, d = (120, 48) if quick else (240, 64)
        obj = make_interpolated_regression(n, d, 10.0**0.5, seed=8)
        comp = CompressionSpec(1, d)
        horizon = 12 * n
        # omega*rho must exceed 1 so the reset can actually grow the cap;
        # the divergence phenomenon needs steps near the acceptance ceiling.
        profile = dict(sigma=0.1, rho=0.95, omega=1.5)
        scaled_a = 1.0 if fault == "disable_scaling" else 0.3
        diverged = 0
        collapsed = 0
        seeds = range(3)
        for seed in seeds:
            unscaled = optimizers.run_csgd_asss(
                obj,
                ArmijoConfig(scale_a=1.0, **profile),
                comp,
                horizon,
                seed=seed,
                track_perturbed=False,
                divergence_ratio=10.0,
            )
            if unscaled.status == "DIVERGED":
                diverged += 1
            scaled = optimizers.run_csgd_asss(
                obj,
                ArmijoConfig(scale_a=scaled_a, **profile),
                comp,
                horizon,
                seed=seed,
                track_perturbed=False,
                stop_loss_ratio=1e-2,
                divergence_ratio=10.0,
            )
            initial = scaled.column("f_full")[0]
            final = scaled.column("f_full")[-1]
            if scaled.status != "DIVERGED" and final <= 1e-2 * initial:
                collapsed += 1
        ok = diverged == len(list(seeds)) and collapsed == len(list(seeds))
        return ok, f"unscaled diverged {diverged}/3, scaled collapsed {collapsed}/3"

    return _timed("scaling-necessity", body)


def check_convex_rate_bound(quick: bool = False) -> CheckResult:
    def body():
        optimizers, _ = _late_imports()
        from .analysis import averaged_suboptimality  # noqa: PLC0415

        obj = make_interpolated_regression(40, 16, 1.0, seed=9)
        comp = CompressionSpec(2, 16)
        inputs = theory.TheoryInputs(
            sigma=0.1, gamma=comp.gamma, rho=0.8,
            epsilon=0.1 * theory.scale_limit(0.1, comp.gamma),
            a=0.9 * 0.9 * theory.scale_limit(0.1, comp.gamma),
            l_max=obj.l_max,
        )
        convex = theory.convex_rate_constants(inputs)
        horizon = 80 if quick else 200
        seeds = range(3 if quick else 6)
        gaps = []
        dist0 = []
        for seed in seeds:
            cfg = ArmijoConfig(sigma=0.1, rho=0.8, scale_a=inputs.a)
            trace = optimizers.run_csgd_asss(
                obj, cfg, comp, horizon, seed=seed, collect_iterates=True
            )
            gaps.append(averaged_suboptimality(trace, obj))
            x0 = trace.iterates[0]
            dist0.append(float(np.sum((x0 - obj.minimizer) ** 2)))
        mean_gap = np.mean(gaps, axis=0)
        bound = np.mean(dist0) / (convex.delta1 * np.arange(1, horizon + 1))
        violations = int(np.sum(mean_gap > bound))
        return violations == 0, f"{violations} horizon points violate the averaged bound"

    return _timed("convex-rate-bound", body)


def check_strongly_convex_rate_bound(quick: bool = False) -> CheckResult:
    def body():
        optimizers, _ = _late_imports()
        obj = make_strongly_convex_mix(10, 8, 0.1, seed=10)
        comp = CompressionSpec(2, 8)
        zeta = theory.scale_limit(0.1, comp.gamma)
        cap = 1.0
        inputs = theory.TheoryInputs(
            sigma=0.1, gamma=comp.gamma, rho=0.8, epsilon=0.1 * zeta,
            a=0.9 * 0.9 * zeta, alpha_max=cap, l_max=obj.l_max,
            mu_bar=obj.mu_bar,
        )
        strong = theory.strongly_convex_rate_constants(inputs)
        horizon = 80 if quick else 200
        dists = []
        for seed in range(3 if quick else 6):
            cfg = ArmijoConfig(sigma=0.1, rho=0.8, scale_a=inputs.a, alpha_max_cap=cap)
            trace = optimizers.run_csgd_asss(obj, cfg, comp, horizon, seed=seed)
            dists.append(trace.column("dist_sq"))
        mean_dist = np.mean(dists, axis=0)
        bound = 2.0 * strong.beta_hat ** np.arange(horizon) * mean_dist[0]
        violations = int(np.sum(mean_dist > bound))
        return (
            violations == 0 and strong.beta_hat < 1.0,
            f"beta_hat={strong.beta_hat:.12f}, {violations} violations",
        )

    return _timed("strongly-convex-rate-bound", body)


def check_nonconvex_constants(quick: bool = False) -> CheckResult:
    def body():
        stream = RandomStream(105)
        points = 100 if quick else 400
        for _ in range(points):
            sigma = 0.05 + 0.9 * float(stream.uniform(1)[0])
            gamma = 0.05 + 0.95 * float(stream.uniform(1)[0])
            epsilon_nc = gamma * (0.2 + 0.6 * float(stream.uniform(1)[0]))
            inputs = theory.TheoryInputs(
                sigma=sigma,
                gamma=gamma,
                rho=0.8,
                nu=1.0 + 9.0 * float(stream.uniform(1)[0]),
                theta=0.1 + 5.0 * float(stream.uniform(1)[0]),
                p_nc=0.1 + 5.0 * float(stream.uniform(1)[0]),
                epsilon_nc=epsilon_nc,
                r_nc=(gamma - epsilon_nc) * (0.2 + 0.8 * float(stream.uniform(1)[0])),
                l_max=0.5 + 5.0 * float(stream.uniform(1)[0]),
            )
            bundle = theory.nonconvex_rate_constants(inputs)
            for frac_a in (0.25, 1.0):
                for frac_cap in (0.5, 1.0):
                    probe = theory.TheoryInputs(
                        **{
                            **inputs.__dict__,
                            "a": frac_a * bundle.a_hat,
                            "alpha_max": frac_cap * bundle.alpha_hat,
                        }
                    )
                    if theory.nonconvex_delta(probe) <= 0.0:
                        return False, f"delta nonpositive inside the admissible box"
            grid = bundle.a_hat * np.linspace(0.2, 2.0, 8)
            ubs = [theory.ub_alpha_max(float(a), inputs) for a in grid]
            if not all(x > y for x, y in zip(ubs, ubs[1:])):
                return False, "cap bound not strictly decreasing in the scale"
        return True, f"{points} parameter points, margin positive on the box"

    return _timed("nonconvex-constants", body)


def check_trace_determinism(quick: bool = False) -> CheckResult:
    def body():
        optimizers, _ = _late_imports()
        from .traceio import trace_csv_text  # noqa: PLC0415

        obj = make_interpolated_regression(20, 8, 1.0, seed=11)
        comp = CompressionSpec(2, 8)
        runs = [
            optimizers.run_csgd_asss(obj, ArmijoConfig(), comp, 60, seed=4)
            for _ in range(2)
        ]
        a, b = (trace_csv_text(t) for t in runs)
        return a == b, "two identical runs serialize to identical bytes"

    return _timed("trace-determinism", body)


ALL_CHECKS: tuple[Callable[..., CheckResult], ...] = (
    check_split_program_oracle,
    check_split_consistency,
    check_interior_split_predicates,
    check_compression_contraction,
    check_armijo_bounds,
    check_memory_identity,
    check_distributed_identity,
    check_scaling_necessity,
    check_convex_rate_bound,
    check_strongly_convex_rate_bound,
    check_nonconvex_constants,
    check_trace_determinism,
)


def run_all(quick: bool = False, fault: str | None = None) -> list[CheckResult]:
    """Run every invariant check; ``fault`` flips a test-only failure mode."""
    results = []
    for check in ALL_CHECKS:
        if check is check_scaling_necessity:
            results.append(check(quick=quick, fault=fault))
        else:
            results.append(check(quick=quick))
    return results
