"""Fixed-point formats for the 8-bit deployment path.

Three representations are used:

* ``Q8Prob`` -- unsigned 8-bit probability, value ``raw / 256``.
* ``QAffine`` -- signed 8-bit mantissas sharing one power-of-two exponent,
  value ``mantissa * 2**exponent``.  Used for folded batch-norm
  coefficients and thresholds.
* ``Acc32`` -- signed 32-bit accumulator.  Membrane potentials and MAC
  results live here, in the pre-activation scale of their layer.

All rounding is round-half-to-even.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_DENOM = 256
MANTISSA_MAX = 127
MANTISSA_MIN = -128
ACC32_MIN = -(2**31)
ACC32_MAX = 2**31 - 1


class FxpDomainError(ValueError):
    """Input outside the domain of a fixed-point conversion."""


@dataclass(frozen=True)
class Q8Prob:
    raw: int

    def __post_init__(self):
        if not 0 <= self.raw <= 255:
            raise FxpDomainError(f"Q8Prob raw must be in [0, 255], got {self.raw}")

    @property
    def value(self) -> float:
        return self.raw / PROB_DENOM


@dataclass(frozen=True)
class QAffine:
    """Vector of int8 mantissas with a shared power-of-two exponent."""

    mantissa: np.ndarray
    exponent: int

    def __post_init__(self):
        m = np.asarray(self.mantissa)
        if m.size and (m.min() < MANTISSA_MIN or m.max() > MANTISSA_MAX):
            raise FxpDomainError("mantissa outside int8 range")
        object.__setattr__(self, "mantissa", m.astype(np.int8))
        object.__setattr__(self, "exponent", int(self.exponent))

    def decode(self) -> np.ndarray:
        return np.ldexp(self.mantissa.astype(np.float64), self.exponent)

    def __eq__(self, other):
        if not isinstance(other, QAffine):
            return NotImplemented
        return self.exponent == other.exponent and np.array_equal(self.mantissa, other.mantissa)

    def __len__(self):
        return int(self.mantissa.size)


def quantize_prob(p) -> np.ndarray | int:
    """Map probabilities in [0, 1] to 8-bit raw codes ``clamp(round(256 p), 0, 255)``.

    Scalars return an ``int``; arrays return ``uint8``.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise FxpDomainError("probability must lie in [0, 1]")
    raw = np.clip(np.rint(arr * PROB_DENOM), 0, 255).astype(np.uint8)
    if raw.ndim == 0:
        return int(raw)
    return raw


def dequantize_prob(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / PROB_DENOM


def shared_exponent(values, bits: int = 8) -> int:
    """Smallest ``e`` such that ``max|v| / 2**e`` fits the signed mantissa range.

    Returns 0 for an all-zero vector.
    """
    v = np.abs(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise FxpDomainError("cannot quantize an empty vector")
    if not np.all(np.isfinite(v)):
        raise FxpDomainError("cannot quantize non-finite values")
    vmax = float(v.max())
    if vmax == 0.0:
        return 0
    limit = 2 ** (bits - 1) - 1
    # frexp gives vmax = f * 2**k with f in [0.5, 1); start just below and walk up
    e = int(np.frexp(vmax)[1]) - bits
    # ldexp scales exactly, even where 2**e itself would underflow
    while np.ldexp(vmax, -e) > limit:
        e += 1
    while np.ldexp(vmax, 1 - e) <= limit:
        e -= 1
    return e


def quantize_affine(values, bits: int = 8) -> QAffine:
    """Quantize a real vector to int8 mantissas with one shared exponent."""
    if bits != 8:
        raise FxpDomainError("only 8-bit mantissas are supported")
    v = np.atleast_1d(np.asarray(values, dtype=np.float64))
    e = shared_exponent(v, bits)
    mant = np.rint(np.ldexp(v, -e))
    return QAffine(mant.astype(np.int8), e)


def requantize(acc, out_exponent: int) -> np.ndarray | int:
    """Shift an accumulator right by ``out_exponent`` bits into int8.

    Rounding is half-to-even, saturation is symmetric at +-127.  A negative
    exponent shifts left.
    """
    a = np.asarray(acc, dtype=np.int64)
    e = int(out_exponent)
    if e <= 0:
        shifted = a << (-e)
    else:
        q = a >> e
        rem = a - (q << e)
        half = np.int64(1) << (e - 1)
        round_up = (rem > half) | ((rem == half) & ((q & 1) == 1))
        shifted = q + round_up.astype(np.int64)
    out = np.clip(shifted, -MANTISSA_MAX, MANTISSA_MAX).astype(np.int8)
    if out.ndim == 0:
        return int(out)
    return out


def align(q: QAffine, exponent: int) -> np.ndarray:
    """Express ``q`` as exact int64 integers in the finer scale ``2**exponent``."""
    if exponent > q.exponent:
        raise FxpDomainError("target scale is coarser than the source")
    return q.mantissa.astype(np.int64) << (q.exponent - exponent)


def saturate_acc32(x: np.ndarray) -> np.ndarray:
    return np.clip(x, ACC32_MIN, ACC32_MAX)
