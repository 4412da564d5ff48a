"""Armijo backtracking with step-size reset and descent scaling.

The search multiplies by the backtracking factor before the first test, so
the initial cap itself is never tried and the accepted step is at most
``rho * alpha_max``.  The acceptance test always scales the gradient by the
candidate step, never by the scaled step used in the descent direction;
scaling happens after acceptance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateInputError, InvalidSpecError, SearchFailedError

Vector = NDArray[np.float64]


@dataclass(frozen=True)
class ArmijoConfig:
    """Step-search and loop parameters.

    Defaults follow the reference profile: sufficient decrease sigma=0.1,
    backtracking factor rho=0.8, reset growth omega=1.2, initial cap 0.1,
    and scale_a = 3 * sigma.  ``alpha_max_cap`` optionally bounds the cap
    over a run (otherwise it can grow without bound when omega > 1).
    ``max_backtracks`` turns a non-terminating search into an error;
    0.8**200 underflows any practical curvature scale.
    """

    sigma: float = 0.1
    rho: float = 0.8
    omega: float = 1.2
    scale_a: float = 0.3
    alpha_max_init: float = 0.1
    max_backtracks: int = 200
    alpha_max_cap: float | None = None

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise InvalidSpecError(f"sigma must lie in (0,1), got {self.sigma}")
        if not 0.0 < self.rho < 1.0:
            raise InvalidSpecError(f"rho must lie in (0,1), got {self.rho}")
        if self.omega < 1.0:
            raise InvalidSpecError(f"omega must be >= 1, got {self.omega}")
        if self.scale_a <= 0.0:
            raise InvalidSpecError(f"scale_a must be positive, got {self.scale_a}")
        if self.alpha_max_init <= 0.0:
            raise InvalidSpecError(f"alpha_max_init must be positive, got {self.alpha_max_init}")
        if self.max_backtracks < 1:
            raise InvalidSpecError("max_backtracks must be at least 1")
        if self.alpha_max_cap is not None and self.alpha_max_cap <= 0.0:
            raise InvalidSpecError("alpha_max_cap must be positive when set")


@dataclass(frozen=True)
class LineSearchResult:
    """Accepted step, its scaled counterpart, and the search cost.

    ``eta == scale_a * alpha`` exactly; ``evals`` counts objective
    evaluations inside the search, which equals ``backtracks`` because the
    gradient is computed once outside and never re-evaluated.
    """

    alpha: float
    eta: float
    backtracks: int
    evals: int


def armijo_search(
    value_fn: Callable[[Vector], float],
    x: Vector,
    grad: Vector,
    f_at_x: float,
    alpha_max: float,
    cfg: ArmijoConfig,
) -> LineSearchResult:
    """Backtrack from ``alpha_max`` until sufficient decrease holds.

    Candidates are rho*alpha_max, rho^2*alpha_max, ...; the first alpha with
    value_fn(x - alpha*grad) <= f_at_x - sigma*alpha*||grad||^2 (non-strict)
    is accepted.

    Raises:
        DegenerateInputError: the gradient is exactly zero (callers skip
            the step instead of searching).
        SearchFailedError: the backtracking budget was exhausted, which
            signals a curvature scale far above ``alpha_max``'s reach or a
            non-smooth objective.
    """
    grad_sq = float(grad @ grad)
    if grad_sq == 0.0:
        raise DegenerateInputError("zero gradient: no descent direction to search along")
    if alpha_max <= 0.0:
        raise DegenerateInputError(f"alpha_max must be positive, got {alpha_max}")
    alpha = alpha_max
    for backtracks in range(1, cfg.max_backtracks + 1):
        alpha *= cfg.rho
        trial = value_fn(x - alpha * grad)
        if trial <= f_at_x - cfg.sigma * alpha * grad_sq:
            return LineSearchResult(
                alpha=alpha, eta=cfg.scale_a * alpha, backtracks=backtracks, evals=backtracks
            )
    raise SearchFailedError(
        f"no sufficient decrease after {cfg.max_backtracks} backtracks "
        f"(last candidate {alpha:.3e})",
        last_alpha=alpha,
        backtracks=cfg.max_backtracks,
    )


def next_alpha_max(alpha_prev: float, cfg: ArmijoConfig) -> float:
    """Step-size cap for the next iteration: omega * alpha_prev, then cap."""
    if alpha_prev <= 0.0:
        raise DegenerateInputError(f"alpha_prev must be positive, got {alpha_prev}")
    grown = cfg.omega * alpha_prev
    if cfg.alpha_max_cap is not None:
        return min(grown, cfg.alpha_max_cap)
    return grown
