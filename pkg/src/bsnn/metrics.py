"""Accuracy, expected calibration error and spike statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class EceReport:
    conf_sum: np.ndarray  # per bin
    correct: np.ndarray
    total: np.ndarray
    ece: float

    @property
    def B(self) -> int:
        return int(self.total.size)

    def rows(self):
        """Reliability-diagram rows ``(lo, hi, n, mean_conf, accuracy)``; empty bins skipped."""
        out = []
        for b in range(self.B):
            n = int(self.total[b])
            if n:
                out.append((b / self.B, (b + 1) / self.B, n,
                            self.conf_sum[b] / n, self.correct[b] / n))
        return out


def _unpack(preds):
    """Predicted classes and confidences from records or ``(predicted, confidence)`` arrays."""
    if isinstance(preds, tuple) and len(preds) == 2:
        return np.asarray(preds[0]), np.asarray(preds[1], dtype=np.float64)
    return (np.array([p.predicted for p in preds]),
            np.array([p.confidence for p in preds], dtype=np.float64))


def accuracy(preds, labels) -> float:
    predicted, _ = _unpack(preds)
    labels = np.asarray(labels)
    if predicted.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    if predicted.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    return float(np.mean(predicted == labels))


def bin_index(conf: np.ndarray, B: int) -> np.ndarray:
    """Bin ``b`` (0-based) covers ``(b/B, (b+1)/B]``; a confidence of 0 goes to bin 0."""
    edges = np.arange(1, B + 1) / B
    return np.minimum(np.searchsorted(edges, conf, side="left"), B - 1)


def ece(preds, labels, B: int = 15) -> EceReport:
    if B < 1:
        raise ValueError("need at least one bin")
    predicted, conf = _unpack(preds)
    labels = np.asarray(labels)
    if predicted.size == 0 or predicted.shape != labels.shape:
        raise ValueError("predictions and labels must be non-empty and equal length")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0, 1]")
    idx = bin_index(conf, B)
    correct = (predicted == labels).astype(np.float64)
    total = np.bincount(idx, minlength=B)
    # exact per-bin sums keep the result independent of sample order
    order = np.argsort(idx, kind="stable")
    groups = np.split(conf[order], np.cumsum(total)[:-1])
    conf_sum = np.array([math.fsum(g) for g in groups])
    corr = np.bincount(idx, weights=correct, minlength=B)
    n = predicted.size
    value = math.fsum(abs(conf_sum[b] - corr[b]) for b in range(B) if total[b]) / n
    return EceReport(conf_sum, corr.astype(np.int64), total, value)


@dataclass
class SpikeStats:
    total: int
    per_layer_step: np.ndarray  # (T, layers)
    mean_rate: float  # spikes per neuron per timestep


def spike_stats(trace) -> SpikeStats:
    """Statistics from a captured trace: one list of per-layer spike planes per timestep."""
    T = len(trace)
    if T == 0:
        return SpikeStats(0, np.zeros((0, 0), dtype=np.int64), 0.0)
    k = len(trace[0])
    per = np.zeros((T, k), dtype=np.int64)
    for t, planes in enumerate(trace):
        for i, p in enumerate(planes):
            per[t, i] = int(np.count_nonzero(p))
    neurons = sum(int(np.asarray(p).size) for p in trace[0])
    total = int(per.sum())
    return SpikeStats(total, per, total / (neurons * T) if neurons else 0.0)
