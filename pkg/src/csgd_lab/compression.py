"""Top-k sparsification and the error-feedback memory update.

Vectors are plain float64 numpy arrays.  The memory is a vector in the
same units as a scaled gradient; callers own its sequencing, every
function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatchError, InvalidSpecError

Vector = NDArray[np.float64]


@dataclass(frozen=True)
class CompressionSpec:
    """Keep the k largest-magnitude coordinates of a d-dimensional vector.

    The compression ratio ``gamma`` is k/d; ``k == d`` is the lossless
    identity operator.
    """

    k: int
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise InvalidSpecError(f"dimension must be positive, got d={self.d}")
        if not 1 <= self.k <= self.d:
            raise InvalidSpecError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")

    @property
    def gamma(self) -> float:
        return self.k / self.d


def _check_dim(v: Vector, spec: CompressionSpec) -> None:
    if v.shape != (spec.d,):
        raise DimensionMismatchError(f"vector shape {v.shape} does not match d={spec.d}")


def top_k_indices(v: Vector, spec: CompressionSpec) -> NDArray[np.int64]:
    """Indices of the k largest-magnitude entries, ascending.

    Magnitude ties break toward the lowest index (stable sort on -|v|),
    a frozen choice so traces are reproducible.
    """
    _check_dim(v, spec)
    if spec.k == spec.d:
        return np.arange(spec.d, dtype=np.int64)
    order = np.argsort(-np.abs(v), kind="stable")
    return np.sort(order[: spec.k]).astype(np.int64)


def top_k(v: Vector, spec: CompressionSpec) -> Vector:
    """Zero all but the k largest-magnitude entries of ``v``.

    Selected entries are copied, never recomputed, so the output agrees
    bitwise with the input on its support.
    """
    idx = top_k_indices(v, spec)
    out = np.zeros_like(v)
    out[idx] = v[idx]
    return out


@dataclass(frozen=True)
class ErrorMemory:
    """Accumulated difference between intended and transmitted updates."""

    m: Vector

    @staticmethod
    def zeros(d: int) -> "ErrorMemory":
        return ErrorMemory(np.zeros(d))


@dataclass(frozen=True)
class FeedbackResult:
    transmitted: Vector          # dense, exactly k selected entries
    memory: ErrorMemory          # residual carried to the next step
    indices: NDArray[np.int64] = field(repr=False)  # support of `transmitted`


def compress_with_feedback(
    mem: ErrorMemory, update: Vector, spec: CompressionSpec
) -> FeedbackResult:
    """Split ``mem.m + update`` into a transmitted top-k part and a residual.

    The decomposition is exact in floating point: transmitted entries are
    copied from the combined vector and zeroed in the residual, so
    ``transmitted + residual == mem.m + update`` holds bitwise.
    """
    if mem.m.shape != update.shape:
        raise DimensionMismatchError(
            f"memory shape {mem.m.shape} does not match update shape {update.shape}"
        )
    combined = mem.m + update
    idx = top_k_indices(combined, spec)
    transmitted = np.zeros_like(combined)
    transmitted[idx] = combined[idx]
    residual = combined.copy()
    residual[idx] = 0.0
    return FeedbackResult(transmitted, ErrorMemory(residual), idx)


def contraction_check(v: Vector, spec: CompressionSpec, slack: float = 1e-12) -> bool:
    """Whether ||v - top_k(v)||^2 <= (1 - gamma) ||v||^2 up to ``slack``.

    The inequality is exact in real arithmetic; ``slack`` absorbs float
    rounding and scales with the bound so ties keep passing at any
    magnitude (at unit scale it is an absolute 1e-12).
    """
    residual = v - top_k(v, spec)
    bound = (1.0 - spec.gamma) * float(v @ v)
    return float(residual @ residual) <= bound + slack * (1.0 + bound)
