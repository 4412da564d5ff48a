"""Closed-form convergence constants for the scaled compressed-SGD analyses.

Everything here is a pure 64-bit floating point computation: the admissible
scaling limit, the split-parameter convex program and its interior
witnesses, the convex O(1/T) constant, the strongly convex geometric
factor, the non-convex stationarity constant with its scale and cap
bounds, and the scaled deterministic-GD constant.

Two forms of the geometric factor's curvature term circulate (with and
without the backtracking factor); both are computed, the proof-backed form
is the default, and a flag records when they differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConstructionFailedError, InfeasibleError, InvalidSpecError

_MARGIN = 1e-12


def scale_limit(sigma: float, gamma: float) -> float:
    """Supremum of admissible descent scalings: sigma * gamma / (2 - gamma)."""
    if not 0.0 < sigma < 1.0:
        raise InvalidSpecError(f"sigma must lie in (0,1), got {sigma}")
    if not 0.0 < gamma <= 1.0:
        raise InvalidSpecError(f"gamma must lie in (0,1], got {gamma}")
    return sigma * gamma / (2.0 - gamma)


@dataclass(frozen=True)
class SplitSolution:
    s: float
    z: float
    value: float


def solve_split_program(psi: float) -> SplitSolution:
    """Minimize 1/s + psi/z subject to s + psi*(1 + z) <= 1, s, z >= 0.

    The minimum is (1 + psi)^2 / (1 - psi), attained at
    s = z = (1 - psi) / (1 + psi).
    """
    if psi < 0.0:
        raise InvalidSpecError(f"psi must be nonnegative, got {psi}")
    if psi >= 1.0:
        raise InfeasibleError(f"program infeasible for psi >= 1, got {psi}")
    point = (1.0 - psi) / (1.0 + psi)
    value = (1.0 + psi) ** 2 / (1.0 - psi)
    return SplitSolution(s=point, z=point, value=value)


def optimal_error_split(gamma: float) -> tuple[float, float]:
    """Maximizing split parameters (p, r) = (gamma/(2-gamma), gamma/(2-gamma)).

    At this point the admissible scale equals ``scale_limit``; the budget
    constraint p + (1-gamma)(1+r) <= 1 is active.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidSpecError(f"gamma must lie in (0,1], got {gamma}")
    point = solve_split_program(1.0 - gamma).s
    return point, point


def admissible_scale(p: float, r: float, sigma: float, gamma: float) -> float:
    """Largest scaling with positive descent margin at split (p, r)."""
    if p <= 0.0 or r <= 0.0:
        raise InvalidSpecError("split parameters must be positive")
    return 2.0 * sigma / (1.0 + 1.0 / p + (1.0 - gamma) * (1.0 + 1.0 / r))


def descent_margin(a: float, p: float, r: float, sigma: float, gamma: float) -> float:
    """2a - (a^2/sigma) (1 + 1/p + (1-gamma)(1+1/r)); positive iff a below
    the admissible scale at (p, r)."""
    if p <= 0.0 or r <= 0.0:
        raise InvalidSpecError("split parameters must be positive")
    bracket = 1.0 / sigma + 1.0 / (sigma * p) + (1.0 - gamma) * (1.0 + 1.0 / r) / sigma
    return 2.0 * a - a * a * bracket


def split_budget(p: float, r: float, gamma: float) -> float:
    """Value of the budget constraint p + (1-gamma)(1+r)."""
    return p + (1.0 - gamma) * (1.0 + r)


def interior_error_split(
    gamma: float, sigma: float, epsilon: float, margin: float = _MARGIN
) -> tuple[float, float]:
    """Reproducible interior witnesses for the epsilon-relaxed split.

    Scales the optimal split toward the origin by the largest factor
    (found by bisection) that keeps the budget strictly under 1 by
    ``margin``; the admissible scale at the result must stay above
    ``scale_limit - epsilon`` by the same margin.  Both predicates are
    re-verified before returning.
    """
    zeta = scale_limit(sigma, gamma)
    if not 0.0 < epsilon < zeta:
        raise InvalidSpecError(f"epsilon must lie in (0, {zeta}), got {epsilon}")
    p_star, r_star = optimal_error_split(gamma)

    def budget_ok(lam: float) -> bool:
        return split_budget(lam * p_star, lam * r_star, gamma) <= 1.0 - margin

    lo, hi = 0.0, 1.0
    if not budget_ok(lo + 1e-6):
        raise ConstructionFailedError("no interior split satisfies the budget margin")
    lo = 1e-6
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if budget_ok(mid):
            lo = mid
        else:
            hi = mid
    p, r = lo * p_star, lo * r_star
    if not (
        split_budget(p, r, gamma) < 1.0
        and admissible_scale(p, r, sigma, gamma) >= zeta - epsilon + margin
    ):
        raise ConstructionFailedError(
            f"no split with both margins for gamma={gamma}, sigma={sigma}, epsilon={epsilon}"
        )
    return p, r


# ---------------------------------------------------------------------
# Input bundle and report.
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class TheoryInputs:
    """Validated parameters shared by the rate-constant computations.

    ``epsilon`` is the convex analyses' slack inside (0, scale_limit);
    ``epsilon_nc`` is the non-convex memory-telescoping slack inside
    (0, gamma), defaulting to gamma/2.  ``p``/``r`` override the convex
    interior split when both are given; ``p_nc``/``r_nc`` override the
    non-convex free parameters (default p_nc=1, r_nc=gamma-epsilon_nc).
    ``l_mean`` is the smoothness constant of the full objective (mean of
    the component constants); it defaults to ``l_max``, a valid upper
    bound.  ``mu_max`` caps the per-component strong convexity used in the
    geometric factor; any cap is admissible, and the default follows
    the interior-split slack (see ``strongly_convex_rate_constants``).
    """

    sigma: float
    gamma: float
    rho: float = 0.8
    epsilon: float | None = None
    a: float = 0.3
    alpha_max: float = 0.1
    l_max: float = 1.0
    mu_bar: float = 0.0
    mu_max: float | None = None
    nu: float = 1.0
    theta: float = 1.0
    p: float | None = None
    r: float | None = None
    l_mean: float | None = None
    epsilon_nc: float | None = None
    p_nc: float | None = None
    r_nc: float | None = None

    def __post_init__(self):
        zeta = scale_limit(self.sigma, self.gamma)  # validates sigma, gamma
        if not 0.0 < self.rho < 1.0:
            raise InvalidSpecError(f"rho must lie in (0,1), got {self.rho}")
        if self.epsilon is not None and not 0.0 < self.epsilon < zeta:
            raise InvalidSpecError(f"epsilon must lie in (0, {zeta}), got {self.epsilon}")
        if self.a <= 0.0:
            raise InvalidSpecError(f"a must be positive, got {self.a}")
        if self.alpha_max <= 0.0:
            raise InvalidSpecError(f"alpha_max must be positive, got {self.alpha_max}")
        if self.l_max <= 0.0:
            raise InvalidSpecError(f"l_max must be positive, got {self.l_max}")
        if self.mu_bar < 0.0:
            raise InvalidSpecError(f"mu_bar must be nonnegative, got {self.mu_bar}")
        if self.mu_max is not None and self.mu_max <= 0.0:
            raise InvalidSpecError("mu_max must be positive when set")
        if self.nu < 1.0:
            raise InvalidSpecError(f"nu must be at least 1, got {self.nu}")
        if self.theta <= 0.0:
            raise InvalidSpecError(f"theta must be positive, got {self.theta}")
        if (self.p is None) != (self.r is None):
            raise InvalidSpecError("p and r overrides must be given together")
        if self.p is not None and (self.p <= 0.0 or self.r <= 0.0):
            raise InvalidSpecError("p and r overrides must be positive")
        if self.l_mean is not None and self.l_mean <= 0.0:
            raise InvalidSpecError("l_mean must be positive when set")
        if self.epsilon_nc is not None and not 0.0 < self.epsilon_nc < self.gamma:
            raise InvalidSpecError("epsilon_nc must lie in (0, gamma)")
        if self.p_nc is not None and self.p_nc <= 0.0:
            raise InvalidSpecError("p_nc must be positive when set")
        if self.r_nc is not None and self.r_nc <= 0.0:
            raise InvalidSpecError("r_nc must be positive when set")

    @property
    def zeta(self) -> float:
        return scale_limit(self.sigma, self.gamma)

    @property
    def epsilon_or_default(self) -> float:
        return self.epsilon if self.epsilon is not None else 0.1 * self.zeta

    @property
    def alpha_tilde_min(self) -> float:
        return 2.0 * (1.0 - self.sigma) / self.l_max

    def convex_split(self) -> tuple[float, float]:
        if self.p is not None and self.r is not None:
            return self.p, self.r
        return interior_error_split(self.gamma, self.sigma, self.epsilon_or_default)


@dataclass(frozen=True)
class ConvexRate:
    delta1: float
    a_hat: float
    p: float
    r: float
    a1_tilde: float
    a2_tilde: float
    flags: tuple[str, ...]


def convex_rate_constants(inputs: TheoryInputs) -> ConvexRate:
    """O(1/T) constant: suboptimality of the averaged iterate is bounded by
    ||x0 - x*||^2 / (delta1 * T) when a <= a_hat."""
    p, r = inputs.convex_split()
    margin = descent_margin(inputs.a, p, r, inputs.sigma, inputs.gamma)
    delta1 = inputs.rho * inputs.alpha_tilde_min * margin
    a_hat = inputs.zeta - inputs.epsilon_or_default
    flags = []
    if inputs.a > a_hat:
        flags.append("scale-exceeds-admissible")
    if delta1 <= 0.0:
        flags.append("vacuous-convex-bound")
    return ConvexRate(
        delta1=delta1,
        a_hat=a_hat,
        p=p,
        r=r,
        a1_tilde=admissible_scale(p, r, inputs.sigma, inputs.gamma),
        a2_tilde=margin,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class StronglyConvexRate:
    beta1: float
    beta2: float            # proof-backed: 1 - mu_bar * a * alpha_tilde_min * rho / 2
    beta2_unscaled: float   # headline form without the backtracking factor
    beta_hat: float
    mu_max_used: float
    slack: float            # distance of the split budget below 1
    p: float
    r: float
    flags: tuple[str, ...]


def strongly_convex_rate_constants(inputs: TheoryInputs) -> StronglyConvexRate:
    """Geometric factor: E||x_t - x*||^2 <= 2 * beta_hat^t ||x0 - x*||^2.

    ``beta1`` needs a cap on the per-component strong convexity; since any
    function that is m-strongly convex is also m'-strongly convex for
    m' < m, the cap may be chosen freely.  The default is
    slack / (2 * alpha_max * scale_limit), half the budget slack of the
    interior split spread over the largest step, which keeps beta1 <= 1 -
    slack/2 whenever a <= scale_limit.
    """
    p, r = inputs.convex_split()
    slack = 1.0 - split_budget(p, r, inputs.gamma)
    if inputs.mu_max is not None:
        mu_max = inputs.mu_max
    else:
        mu_max = 0.5 * slack / (inputs.alpha_max * inputs.zeta)
    beta1 = mu_max * inputs.a * inputs.alpha_max + split_budget(p, r, inputs.gamma)
    contraction = inputs.mu_bar * inputs.a * inputs.alpha_tilde_min / 2.0
    beta2 = 1.0 - contraction * inputs.rho
    beta2_unscaled = 1.0 - contraction
    beta_hat = max(beta1, beta2)
    flags = []
    if inputs.mu_bar <= 0.0:
        flags.append("strong-convexity-missing")
    if beta_hat >= 1.0:
        flags.append("beta-hat-not-contractive")
    if beta2 != beta2_unscaled:
        flags.append("beta2-forms-differ")
    return StronglyConvexRate(
        beta1=beta1,
        beta2=beta2,
        beta2_unscaled=beta2_unscaled,
        beta_hat=beta_hat,
        mu_max_used=mu_max,
        slack=slack,
        p=p,
        r=r,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------
# Non-convex constants.
# ---------------------------------------------------------------------


def _nonconvex_params(inputs: TheoryInputs) -> tuple[float, float, float, float]:
    epsilon_nc = inputs.epsilon_nc if inputs.epsilon_nc is not None else 0.5 * inputs.gamma
    p = inputs.p_nc if inputs.p_nc is not None else 1.0
    r = inputs.r_nc if inputs.r_nc is not None else inputs.gamma - epsilon_nc
    if r > inputs.gamma - epsilon_nc + _MARGIN:
        raise InvalidSpecError(
            f"r_nc={r} violates the telescoping constraint r <= gamma - epsilon_nc"
            f" = {inputs.gamma - epsilon_nc}"
        )
    l_mean = inputs.l_mean if inputs.l_mean is not None else inputs.l_max
    return epsilon_nc, p, r, l_mean


def step_interval(inputs: TheoryInputs) -> tuple[float, float]:
    """Scaled step-size bounds realized by the search.

    Candidates start at rho * alpha_max, so eta_max = a * rho * alpha_max;
    when alpha_max exceeds the guaranteed-acceptance point 2(1-sigma)/l_max
    the floor is a * rho * that point, otherwise the interval collapses.
    """
    ceiling = inputs.a * inputs.rho * inputs.alpha_max
    floor = inputs.a * inputs.rho * min(inputs.alpha_max, inputs.alpha_tilde_min)
    return floor, ceiling


@dataclass(frozen=True)
class NonConvexRate:
    g_factor: float
    delta: float
    a_hat: float
    alpha_hat: float
    eta_min: float
    eta_max: float
    p: float
    r: float
    epsilon_nc: float
    flags: tuple[str, ...]


def nonconvex_delta(inputs: TheoryInputs) -> float:
    """Stationarity margin delta at the configured (a, alpha_max).

    delta = eta_max + eta_min * p/(1+p)
            - nu * (eta_max - eta_min) - nu * L * eta_max^2
            - nu * eta_max^2 * theta * (1-gamma) * (1 + 1/r)
    with the realized step bounds from ``step_interval``.
    """
    _, p, r, l_mean = _nonconvex_params(inputs)
    eta_min, eta_max = step_interval(inputs)
    comp = inputs.theta * (1.0 - inputs.gamma) * (1.0 + 1.0 / r)
    return (
        eta_max
        + eta_min * p / (1.0 + p)
        - inputs.nu * (eta_max - eta_min)
        - inputs.nu * l_mean * eta_max**2
        - inputs.nu * eta_max**2 * comp
    )


def nonconvex_scale_bound(inputs: TheoryInputs) -> float:
    """Largest admissible scaling: min of the stationarity-margin bound and
    the memory-telescoping bound theta*eps / (alpha_max L^2 + alpha_min p L^2)."""
    epsilon_nc, p, r, l_mean = _nonconvex_params(inputs)
    comp = inputs.theta * (1.0 - inputs.gamma) * (1.0 + 1.0 / r)
    margin_bound = (1.0 + p / (1.0 + p)) / (
        inputs.alpha_tilde_min * inputs.nu * (l_mean + comp)
    )
    telescope_bound = (inputs.theta * epsilon_nc) / (
        inputs.alpha_max * l_mean**2 + inputs.alpha_tilde_min * p * l_mean**2
    )
    return min(margin_bound, telescope_bound)


def ub_alpha_max(a: float, inputs: TheoryInputs) -> float:
    """Largest step cap keeping the stationarity margin positive at scale a.

    Positive root of the quadratic delta(alpha_max) = 0 in the regime where
    the cap exceeds the guaranteed-acceptance point; strictly decreasing
    in a.
    """
    if a <= 0.0:
        raise InvalidSpecError(f"a must be positive, got {a}")
    _, p, r, l_mean = _nonconvex_params(inputs)
    comp = inputs.theta * (1.0 - inputs.gamma) * (1.0 + 1.0 / r)
    curvature = inputs.nu * (l_mean + comp)
    drift = inputs.nu - 1.0
    pull = 4.0 * curvature * a * (inputs.nu + p / (1.0 + p)) * inputs.alpha_tilde_min * inputs.rho
    return (-drift + math.sqrt(drift * drift + pull)) / (2.0 * a * curvature)


def nonconvex_rate_constants(inputs: TheoryInputs) -> NonConvexRate:
    epsilon_nc, p, r, _ = _nonconvex_params(inputs)
    comp = inputs.theta * (1.0 - inputs.gamma) * (1.0 + 1.0 / r)
    delta = nonconvex_delta(inputs)
    a_hat = nonconvex_scale_bound(inputs)
    alpha_hat = ub_alpha_max(a_hat, inputs)
    eta_min, eta_max = step_interval(inputs)
    flags = []
    if delta <= 0.0:
        flags.append("nonconvex-delta-nonpositive")
    if alpha_hat < inputs.alpha_tilde_min * (1.0 - 1e-12):
        flags.append("nonconvex-cap-below-free-range")
    return NonConvexRate(
        g_factor=comp,
        delta=delta,
        a_hat=a_hat,
        alpha_hat=alpha_hat,
        eta_min=eta_min,
        eta_max=eta_max,
        p=p,
        r=r,
        epsilon_nc=epsilon_nc,
        flags=tuple(flags),
    )


def scaled_gd_rate_constant(sigma: float, rho: float, a: float, l: float) -> float:
    """Deterministic scaled-GD bound constant 1/(alpha_tilde_min*rho*(2a - a^2/sigma)).

    Returns inf when a >= 2*sigma (the bracket is nonpositive and the bound
    is vacuous); the scaling removes the classical sigma >= 1/2 restriction.
    """
    if not 0.0 < sigma < 1.0:
        raise InvalidSpecError(f"sigma must lie in (0,1), got {sigma}")
    if not 0.0 < rho <= 1.0:
        raise InvalidSpecError(f"rho must lie in (0,1], got {rho}")
    if a <= 0.0 or l <= 0.0:
        raise InvalidSpecError("a and l must be positive")
    bracket = 2.0 * a - a * a / sigma
    if bracket <= 0.0:
        return math.inf
    alpha_tilde_min = 2.0 * (1.0 - sigma) / l
    return 1.0 / (alpha_tilde_min * rho * bracket)


# ---------------------------------------------------------------------
# Assembled report.
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class TheoryReport:
    """Every closed-form constant for one parameter set, plus status flags."""

    zeta: float
    p_star: float
    r_star: float
    p_eps: float
    r_eps: float
    a_hat: float
    a1_tilde: float
    a2_tilde: float
    delta1: float
    beta1: float
    beta2: float
    beta2_unscaled: float
    beta_hat: float
    mu_max_used: float
    alpha_tilde_min: float
    eta_min: float
    eta_max: float
    g_factor: float
    delta_nc: float
    a_hat_nc: float
    alpha_hat_nc: float
    scaled_gd_constant: float
    flags: tuple[str, ...] = field(default=())

    def rows(self) -> list[tuple[str, float]]:
        """(name, value) pairs in a stable order for printing."""
        ordered = [
            "zeta", "p_star", "r_star", "p_eps", "r_eps", "a_hat",
            "a1_tilde", "a2_tilde", "delta1", "beta1", "beta2",
            "beta2_unscaled", "beta_hat", "mu_max_used", "alpha_tilde_min",
            "eta_min", "eta_max", "g_factor", "delta_nc", "a_hat_nc",
            "alpha_hat_nc", "scaled_gd_constant",
        ]
        return [(name, getattr(self, name)) for name in ordered]


def full_report(inputs: TheoryInputs) -> TheoryReport:
    """Evaluate all constants for one input bundle."""
    p_star, r_star = optimal_error_split(inputs.gamma)
    convex = convex_rate_constants(inputs)
    strong = strongly_convex_rate_constants(inputs)
    nonconvex = nonconvex_rate_constants(inputs)
    eta_min, eta_max = step_interval(inputs)
    l_mean = inputs.l_mean if inputs.l_mean is not None else inputs.l_max
    gd_constant = scaled_gd_rate_constant(inputs.sigma, inputs.rho, inputs.a, l_mean)
    flags = list(dict.fromkeys(convex.flags + strong.flags + nonconvex.flags))
    if math.isinf(gd_constant):
        flags.append("vacuous-scaled-gd-bound")
    return TheoryReport(
        zeta=inputs.zeta,
        p_star=p_star,
        r_star=r_star,
        p_eps=convex.p,
        r_eps=convex.r,
        a_hat=convex.a_hat,
        a1_tilde=convex.a1_tilde,
        a2_tilde=convex.a2_tilde,
        delta1=convex.delta1,
        beta1=strong.beta1,
        beta2=strong.beta2,
        beta2_unscaled=strong.beta2_unscaled,
        beta_hat=strong.beta_hat,
        mu_max_used=strong.mu_max_used,
        alpha_tilde_min=inputs.alpha_tilde_min,
        eta_min=eta_min,
        eta_max=eta_max,
        g_factor=nonconvex.g_factor,
        delta_nc=nonconvex.delta,
        a_hat_nc=nonconvex.a_hat,
        alpha_hat_nc=nonconvex.alpha_hat,
        scaled_gd_constant=gd_constant,
        flags=tuple(flags),
    )
