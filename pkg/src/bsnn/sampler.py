"""Probability + random number -> {-1, +1} weight, and the spike/weight mux."""
from __future__ import annotations

import numpy as np

from .bern import BernoulliTensor
from .fxp import Q8Prob
from .prng import BLOCK, LfsrBank, RandomStream, RngScheme, bank_draw64


def sample_weight(p: Q8Prob | int, r: int) -> int:
    raw = p.raw if isinstance(p, Q8Prob) else int(p)
    return 1 if r < raw else -1


def _compare(prob_q: np.ndarray, rn: np.ndarray) -> np.ndarray:
    return np.where(rn < prob_q, np.int8(1), np.int8(-1)).astype(np.int8)


def sample_block64(prob_q, bank: LfsrBank) -> np.ndarray:
    """Sample 64 weights against one clock of a 16-register bank."""
    p = np.asarray(prob_q, dtype=np.uint8).reshape(-1)
    if p.size != BLOCK:
        raise ValueError(f"block must hold exactly {BLOCK} weights, got {p.size}")
    return _compare(p, bank_draw64(bank))


def mux_product(spike: int, w: int) -> int:
    """2-bit product of a {0, 1} spike and a {-1, +1} weight.

    The spike selects between the weight and zero, no multiplier involved.
    """
    return w if spike else 0


def sample_tensor(weight: BernoulliTensor, stream: RandomStream) -> np.ndarray:
    """Sample a whole tensor block by block in flattened row-major order.

    Every 64-weight block consumes one full clock of random values; the
    unused tail of the final block is discarded so later layers stay
    block aligned.
    """
    n = weight.size
    n_blocks = -(-n // BLOCK)
    rn = stream.draw(n_blocks * BLOCK)[:n]
    if stream.scheme is RngScheme.FP32:
        w = np.where(rn < weight.prob().reshape(-1), np.int8(1), np.int8(-1)).astype(np.int8)
    else:
        w = _compare(weight.prob_q.reshape(-1), rn)
    return w.reshape(weight.shape)
