"""Bernoulli weight parameterization ``p = sigmoid(2 * lambda)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fxp import quantize_prob


def bern_param(lam):
    """Probability that a weight samples to +1 given its natural parameter."""
    x = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("natural parameter must be finite")
    # tanh form is stable at both tails: sigmoid(2x) = (1 + tanh(x)) / 2
    p = 0.5 * (1.0 + np.tanh(x))
    return float(p) if p.ndim == 0 else p


def expected_weight(lam):
    """Mean of the {-1, +1} weight, ``2 p - 1 = tanh(lambda)``."""
    return np.tanh(np.asarray(lam, dtype=np.float64))


@dataclass
class BernoulliTensor:
    """Deployable weight tensor.

    ``prob_q`` holds the 8-bit codes the weight memory stores.  ``lam`` is
    kept only for provenance and for full-precision software sampling.
    """

    prob_q: np.ndarray
    lam: np.ndarray | None = None

    def __post_init__(self):
        self.prob_q = np.asarray(self.prob_q, dtype=np.uint8)
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=np.float32)
            if self.lam.shape != self.prob_q.shape:
                raise ValueError("lambda and prob_q shapes differ")

    @property
    def shape(self) -> tuple:
        return self.prob_q.shape

    @property
    def size(self) -> int:
        return int(self.prob_q.size)

    def prob(self) -> np.ndarray:
        """Full-precision probability when available, else the decoded 8-bit code."""
        if self.lam is not None:
            return bern_param(self.lam.astype(np.float64))
        return self.prob_q.astype(np.float64) / 256.0

    def __eq__(self, other):
        if not isinstance(other, BernoulliTensor):
            return NotImplemented
        if not np.array_equal(self.prob_q, other.prob_q):
            return False
        if (self.lam is None) != (other.lam is None):
            return False
        return self.lam is None or np.array_equal(self.lam, other.lam)


def freeze(lam, keep_lambda: bool = True) -> BernoulliTensor:
    lam = np.asarray(lam, dtype=np.float32)
    prob_q = quantize_prob(bern_param(lam.astype(np.float64)))
    prob_q = np.asarray(prob_q, dtype=np.uint8).reshape(lam.shape)
    return BernoulliTensor(prob_q, lam if keep_lambda else None)
