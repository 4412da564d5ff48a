"""Post-run analysis: rate fitting and averaged-iterate curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .objectives import FiniteSumObjective
from .optimizers import RunTrace

FIT_MODELS = ("power_law", "geometric")


@dataclass(frozen=True)
class RateFit:
    """Least-squares decay fit over an explicit iteration window.

    ``power_law`` regresses log(y) on log(t) (slope -1 means O(1/T));
    ``geometric`` regresses log(y) on t (rate log(beta) for y ~ beta^t).
    """

    model: str
    rate: float
    intercept: float
    r_squared: float
    window: tuple[int, int]
    points: int


def fit_rate(
    trace: RunTrace | np.ndarray,
    model: str,
    window: tuple[int, int] | None = None,
    column: str = "f_full",
    baseline: float = 0.0,
) -> RateFit:
    """Fit a decay model to a positive trace column.

    Only strictly positive values (after subtracting ``baseline``) inside
    the window participate; at least 10 such points are required.
    ``trace`` may also be a plain array of per-iteration values.
    """
    if model not in FIT_MODELS:
        raise InvalidSpecError(f"unknown fit model {model!r}")
    if isinstance(trace, RunTrace):
        t = trace.column("t").astype(np.float64)
        y = trace.column(column) - baseline
    else:
        y = np.asarray(trace, dtype=np.float64) - baseline
        t = np.arange(y.size, dtype=np.float64)
    if window is None:
        window = (1, int(t[-1])) if t.size else (1, 0)
    lo, hi = window
    keep = (t >= lo) & (t <= hi) & (y > 0.0) & np.isfinite(y)
    if model == "power_law":
        keep &= t > 0.0
    t, y = t[keep], y[keep]
    if t.size < 10:
        raise InvalidSpecError(
            f"need at least 10 positive points in window {window}, found {t.size}"
        )
    abscissa = np.log(t) if model == "power_law" else t
    ordinate = np.log(y)
    slope, intercept = np.polyfit(abscissa, ordinate, 1)
    predicted = slope * abscissa + intercept
    ss_res = float(np.sum((ordinate - predicted) ** 2))
    ss_tot = float(np.sum((ordinate - ordinate.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(
        model=model,
        rate=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        window=(lo, hi),
        points=int(t.size),
    )


def averaged_suboptimality(trace: RunTrace, obj: FiniteSumObjective) -> np.ndarray:
    """f(mean of x_0..x_{T-1}) - f* for every horizon T in the trace.

    Requires the trace to have been collected with ``collect_iterates``.
    """
    if trace.iterates is None:
        raise InvalidSpecError("trace was not collected with iterates; rerun with collect_iterates")
    if obj.optimal_value is None:
        raise InvalidSpecError("objective does not expose an optimal value")
    sums = np.cumsum(trace.iterates, axis=0)
    counts = np.arange(1, len(trace.iterates) + 1)[:, None]
    means = sums / counts
    return np.array([obj.full_value(row) for row in means]) - obj.optimal_value
