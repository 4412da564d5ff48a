"""Synthetic finite-sum objectives with exact gradients and known constants.

Each generated problem carries per-component Lipschitz-gradient constants,
strong-convexity constants, and a point where every component gradient
vanishes, so convergence bounds can be evaluated rather than assumed.
Objectives are immutable after construction and evaluation is pure.

Vectors are 1-D float64 numpy arrays throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatchError, EstimationFailedError, InvalidSpecError
from .prng import RandomStream

Vector = NDArray[np.float64]

# Stream tags; a problem seed plus one of these identifies a draw.
_FEATURES_STREAM = 0xA1
_MINIMIZER_STREAM = 0xA2
_CURVATURE_STREAM = 0xA3
_SGC_STREAM = 0xA4


def as_vector(x, dim: int | None = None) -> Vector:
    """Validate an API-boundary vector: 1-D, float64, finite."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {np.shape(x)}")
    if dim is not None and v.size != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidSpecError("vector entries must be finite")
    return v


class LossTracker:
    """Running full-objective value under sparse iterate updates.

    ``apply(indices, delta_values)`` accounts for ``x <- x - delta`` where
    ``delta`` is zero outside ``indices``.  Used by optimization loops to
    log the full loss each iteration without an O(n*d) evaluation.
    """

    def apply(self, indices: NDArray[np.int64], delta_values: Vector) -> None:
        raise NotImplementedError

    def value(self) -> float:
        raise NotImplementedError


class FiniteSumObjective:
    """Mean of ``n`` differentiable components on R^d with curvature metadata.

    Attributes:
        n: component count.
        dim: ambient dimension d.
        lipschitz: per-component gradient Lipschitz constants, shape (n,).
        strong_convexity: per-component strong-convexity constants, shape (n,);
            zero for components that are merely convex.
        minimizer: a point where every component gradient vanishes, or None.
        optimal_value: full objective value at ``minimizer``.
    """

    n: int
    dim: int
    lipschitz: Vector
    strong_convexity: Vector
    minimizer: Vector | None
    optimal_value: float | None

    @property
    def l_max(self) -> float:
        return float(np.max(self.lipschitz))

    @property
    def mu_bar(self) -> float:
        return float(np.mean(self.strong_convexity))

    # -- evaluation ----------------------------------------------------

    def component_value(self, i: int, x: Vector) -> float:
        raise NotImplementedError

    def component_grad(self, i: int, x: Vector) -> Vector:
        raise NotImplementedError

    def full_value(self, x: Vector) -> float:
        raise NotImplementedError

    def full_grad(self, x: Vector) -> Vector:
        raise NotImplementedError

    def mean_component_grad_sq(self, x: Vector) -> float:
        """(1/n) sum_i ||grad f_i(x)||^2, vectorized where possible."""
        raise NotImplementedError

    def loss_tracker(self, x0: Vector) -> LossTracker:
        raise NotImplementedError

    def _check_component(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range [0, {self.n})")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Declarative problem description; identical spec gives bit-identical draws.

    ``curvatures`` applies to ``diag_quadratic`` only (alternatively
    ``pow2_count`` m selects coefficients 2^-1 .. 2^-m).  ``feature_std``
    scales the regression features, ``mu_floor`` the strongly convex mix.
    """

    kind: str
    n: int = 1
    d: int = 1
    seed: int = 0
    curvatures: tuple[float, ...] | None = None
    pow2_count: int | None = None
    feature_std: float = 1.0
    mu_floor: float = 0.0

    _KINDS = ("diag_quadratic", "interpolated_regression", "strongly_convex_mix")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise InvalidSpecError(f"unknown objective kind {self.kind!r}")
        if self.kind == "diag_quadratic":
            if (self.curvatures is None) == (self.pow2_count is None):
                raise InvalidSpecError(
                    "diag_quadratic needs exactly one of curvatures/pow2_count"
                )
        else:
            if self.n < 1 or self.d < 1:
                raise InvalidSpecError("component count and dimension must be positive")
            if self.feature_std <= 0:
                raise InvalidSpecError("feature_std must be positive")
            if self.mu_floor < 0:
                raise InvalidSpecError("mu_floor must be nonnegative")


def build_objective(spec: ObjectiveSpec) -> FiniteSumObjective:
    """Instantiate the problem described by ``spec`` (deterministic)."""
    if spec.kind == "diag_quadratic":
        if spec.pow2_count is not None:
            curvatures = [2.0 ** -(i + 1) for i in range(spec.pow2_count)]
        else:
            curvatures = list(spec.curvatures)  # type: ignore[arg-type]
        return make_diag_quadratic(curvatures)
    if spec.kind == "interpolated_regression":
        return make_interpolated_regression(spec.n, spec.d, spec.feature_std, spec.seed)
    return make_strongly_convex_mix(
        spec.n, spec.d, spec.mu_floor, spec.seed, feature_std=spec.feature_std
    )


# ---------------------------------------------------------------------
# Diagonal quadratic: one component, f(x) = sum_j c_j x_j^2.
# ---------------------------------------------------------------------


class _DiagQuadraticTracker(LossTracker):
    def __init__(self, obj: "DiagQuadratic", x0: Vector):
        self._c = obj.curvatures
        self._x = x0.copy()
        self._value = float(self._c @ (x0 * x0))

    def apply(self, indices, delta_values):
        xs = self._x[indices]
        new = xs - delta_values
        self._value += float(self._c[indices] @ (new * new - xs * xs))
        self._x[indices] = new

    def value(self) -> float:
        return self._value


class DiagQuadratic(FiniteSumObjective):
    """f(x) = sum_j c_j x_j^2 with positive coefficients; minimizer 0."""

    def __init__(self, curvatures: Vector):
        self.curvatures = curvatures
        self.n = 1
        self.dim = curvatures.size
        self.lipschitz = np.array([2.0 * float(np.max(curvatures))])
        self.strong_convexity = np.array([2.0 * float(np.min(curvatures))])
        self.minimizer = np.zeros(self.dim)
        self.optimal_value = 0.0

    def component_value(self, i, x):
        self._check_component(i)
        return float(self.curvatures @ (x * x))

    def component_grad(self, i, x):
        self._check_component(i)
        return 2.0 * self.curvatures * x

    def full_value(self, x):
        return float(self.curvatures @ (x * x))

    def full_grad(self, x):
        return 2.0 * self.curvatures * x

    def mean_component_grad_sq(self, x):
        g = self.full_grad(x)
        return float(g @ g)

    def loss_tracker(self, x0):
        return _DiagQuadraticTracker(self, x0)


def make_diag_quadratic(curvatures: Sequence[float]) -> DiagQuadratic:
    """Single-component diagonal quadratic with exact metadata.

    L = 2 max(c), strong convexity 2 min(c), minimizer at the origin.
    """
    c = as_vector(curvatures)
    if np.any(c <= 0):
        raise InvalidSpecError("curvatures must all be positive")
    return DiagQuadratic(c)


# ---------------------------------------------------------------------
# Interpolated linear regression: f_i(x) = (<a_i, x> - b_i)^2.
# ---------------------------------------------------------------------


class _ResidualTracker(LossTracker):
    """Maintains r = A x - b under sparse updates; loss = mean(r^2) (+ proximal)."""

    def __init__(self, features: Vector, residual0: Vector, mu_mean: float,
                 x0: Vector, minimizer: Vector | None):
        self._features = features
        self._residual = residual0
        self._mu_mean = mu_mean
        if mu_mean > 0.0:
            self._diff = x0 - minimizer
            self._dist_sq = float(self._diff @ self._diff)
        else:
            self._diff = None
            self._dist_sq = 0.0

    def apply(self, indices, delta_values):
        self._residual -= self._features[:, indices] @ delta_values
        if self._diff is not None:
            changed = self._diff[indices]
            moved = changed - delta_values
            self._dist_sq += float(moved @ moved - changed @ changed)
            self._diff[indices] = moved

    def value(self) -> float:
        loss = float(self._residual @ self._residual) / self._residual.size
        if self._mu_mean > 0.0:
            loss += 0.5 * self._mu_mean * self._dist_sq
        return loss


class LinearInterpolationObjective(FiniteSumObjective):
    """Shared implementation for the two regression-style families.

    f_i(x) = (<a_i, x> - b_i)^2 + (mu_i / 2) ||x - x*||^2 with b built so
    every component gradient vanishes at x*.
    """

    def __init__(self, features: Vector, minimizer: Vector, mu: Vector):
        n, d = features.shape
        self.features = np.asfortranarray(features)  # column slicing in trackers
        self.minimizer = minimizer
        self.targets = self.features @ minimizer
        self.mu = mu
        self.n = n
        self.dim = d
        self.row_sq = np.einsum("ij,ij->i", features, features)
        self.lipschitz = 2.0 * self.row_sq + mu
        self.strong_convexity = mu.copy()
        self.optimal_value = 0.0

    def _residual(self, i: int, x: Vector) -> float:
        return float(self.features[i] @ x - self.targets[i])

    def component_value(self, i, x):
        self._check_component(i)
        value = self._residual(i, x) ** 2
        if self.mu[i] > 0.0:
            diff = x - self.minimizer
            value += 0.5 * self.mu[i] * float(diff @ diff)
        return value

    def component_grad(self, i, x):
        self._check_component(i)
        grad = (2.0 * self._residual(i, x)) * self.features[i]
        if self.mu[i] > 0.0:
            grad = grad + self.mu[i] * (x - self.minimizer)
        return grad

    def full_value(self, x):
        r = self.features @ x - self.targets
        value = float(r @ r) / self.n
        mu_mean = self.mu_bar
        if mu_mean > 0.0:
            diff = x - self.minimizer
            value += 0.5 * mu_mean * float(diff @ diff)
        return value

    def full_grad(self, x):
        r = self.features @ x - self.targets
        grad = (2.0 / self.n) * (r @ self.features)
        mu_mean = self.mu_bar
        if mu_mean > 0.0:
            grad = grad + mu_mean * (x - self.minimizer)
        return grad

    def mean_component_grad_sq(self, x):
        r = self.features @ x - self.targets
        # ||2 r_i a_i + mu_i (x - x*)||^2 expanded per component.
        total = 4.0 * float((r * r) @ self.row_sq)
        if np.any(self.mu > 0.0):
            diff = x - self.minimizer
            dist_sq = float(diff @ diff)
            cross = self.features @ diff
            total += 4.0 * float((self.mu * r) @ cross)
            total += dist_sq * float(self.mu @ self.mu)
        return total / self.n

    def loss_tracker(self, x0):
        residual0 = self.features @ x0 - self.targets
        return _ResidualTracker(self.features, residual0, self.mu_bar, x0, self.minimizer)


def make_interpolated_regression(
    n: int,
    d: int,
    feature_std: float,
    seed: int,
    *,
    features: Vector | None = None,
    minimizer: Vector | None = None,
) -> LinearInterpolationObjective:
    """Least-squares components whose gradients all vanish at one point.

    Features are i.i.d. normal with the given standard deviation, the
    common root x* is standard normal, and targets are <a_i, x*> so the
    construction interpolates exactly.  L_i = 2 ||a_i||^2; components are
    recorded as not strongly convex (mu_i = 0) even when the design is
    incidentally full rank.

    ``features``/``minimizer`` override the sampled values (fixture hook).
    """
    if n < 1 or d < 1:
        raise InvalidSpecError("need n >= 1 and d >= 1")
    if feature_std <= 0:
        raise InvalidSpecError("feature_std must be positive")
    if features is None:
        features = RandomStream(seed, _FEATURES_STREAM).normal(n * d).reshape(n, d)
        features = features * feature_std
    else:
        features = np.asarray(features, dtype=float).reshape(n, d)
    if minimizer is None:
        minimizer = RandomStream(seed, _MINIMIZER_STREAM).normal(d)
    else:
        minimizer = as_vector(minimizer, d)
    return LinearInterpolationObjective(features, minimizer, np.zeros(n))


def make_strongly_convex_mix(
    n: int,
    d: int,
    mu_floor: float,
    seed: int,
    *,
    feature_std: float = 1.0,
    mu_values: Sequence[float] | None = None,
) -> LinearInterpolationObjective:
    """Interpolating least squares plus a proximal term on some components.

    Components i with m_i > 0 gain (m_i/2)||x - x*||^2, which preserves the
    shared root while making them m_i strongly convex.  By default the
    first ceil(n/2) components receive m_i in [mu_floor, 2*mu_floor) (scale
    0.1 when the floor is zero), so the mean strong convexity is positive.
    """
    if n < 1 or d < 1:
        raise InvalidSpecError("need n >= 1 and d >= 1")
    if mu_values is not None:
        mu = as_vector(mu_values, n)
        if np.any(mu < 0) or not np.any(mu > 0):
            raise InvalidSpecError("mu_values must be nonnegative with at least one positive")
    else:
        n_pos = max(1, (n + 1) // 2)
        scale = mu_floor if mu_floor > 0 else 0.1
        mu = np.zeros(n)
        mu[:n_pos] = scale * (1.0 + RandomStream(seed, _CURVATURE_STREAM).uniform(n_pos))
    features = RandomStream(seed, _FEATURES_STREAM).normal(n * d).reshape(n, d) * feature_std
    minimizer = RandomStream(seed, _MINIMIZER_STREAM).normal(d)
    return LinearInterpolationObjective(features, minimizer, mu)


# ---------------------------------------------------------------------
# Strong growth constant estimation.
# ---------------------------------------------------------------------


def estimate_sgc_constant(
    obj: FiniteSumObjective, sample_count: int, seed: int, *, grad_floor: float = 1e-12
) -> float:
    """Sampled lower estimate of the strong growth constant.

    Maximizes (1/n) sum_i ||grad f_i(x)||^2 / ||grad f(x)||^2 over
    ``sample_count`` standard-normal points, skipping points where the full
    gradient norm is below ``grad_floor``.  The true constant is a supremum
    over all x, so this is a lower estimate.
    """
    if sample_count < 1:
        raise InvalidSpecError("sample_count must be at least 1")
    stream = RandomStream(seed, _SGC_STREAM)
    best = None
    for _ in range(sample_count):
        x = stream.normal(obj.dim)
        g = obj.full_grad(x)
        norm = float(np.linalg.norm(g))
        if norm < grad_floor:
            continue
        ratio = obj.mean_component_grad_sq(x) / (norm * norm)
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise EstimationFailedError(
            "all sampled points had vanishing full gradient; cannot estimate growth"
        )
    return best
