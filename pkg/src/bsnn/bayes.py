"""Monte-Carlo ensembling in time.

Each ensemble member is one instantiation of the network: its weights
are sampled once from a stream seeded by ``member_seed(seed, m)`` and
held for all of its timesteps.  The same members are applied to every
input, so evaluating a dataset in one batch or one image at a time gives
identical results.  Members run concurrently; their outputs are reduced
in member order.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics
from .netcore import LayerKind, NetworkModel, network_forward_snn
from .prng import RandomStream, RngScheme, member_seed
from .sampler import sample_tensor

SUM_THEN_SOFTMAX = "sum"
MEAN_SOFTMAX = "mean-softmax"


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("BSNN_THREADS", "1") or 1)
    return max(1, int(workers))


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class PredictionRecord:
    counts: np.ndarray
    probs: np.ndarray
    predicted: int
    confidence: float
    t_used: int
    n_mc_used: int

    def to_dict(self) -> dict:
        return {"counts": [int(c) for c in self.counts], "probs": [float(p) for p in self.probs],
                "predicted": self.predicted, "confidence": self.confidence,
                "t_used": self.t_used, "n_mc_used": self.n_mc_used}


def combine(counts_per_member, mode: str = SUM_THEN_SOFTMAX, tau: float = 1.0) -> np.ndarray:
    """Merge member count vectors into class probabilities.

    ``sum``: softmax of the summed counts divided by ``tau``.
    ``mean-softmax``: average of the per-member softmaxes.
    Accepts ``(members, classes)`` or batched ``(members, N, classes)``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    try:
        c = np.asarray(counts_per_member, dtype=np.float64)
    except ValueError:
        raise ValueError("member count vectors differ in length") from None
    if c.dtype == object or c.ndim < 2 or c.shape[0] == 0:
        raise ValueError("need a non-empty list of equal-length count vectors")
    if mode == SUM_THEN_SOFTMAX:
        return softmax(c.sum(axis=0) / tau)
    if mode == MEAN_SOFTMAX:
        return softmax(c / tau).mean(axis=0)
    raise ValueError(f"unknown combine mode {mode!r}")


def sample_network(model: NetworkModel, scheme, seed: int) -> list:
    """Draw one {-1, +1} instantiation of every weighted layer, in layer order."""
    stream = RandomStream(scheme, seed)
    return [None if l.kind is LayerKind.RESIDUAL_ADD else sample_tensor(l.weight, stream)
            for l in model.layers]


@dataclass
class EnsembleRun:
    history: np.ndarray  # (members, T, N, classes) cumulative counts per member
    layer_spikes: np.ndarray  # (members, T, layers) spikes summed over the batch

    @property
    def n_mc(self) -> int:
        return self.history.shape[0]

    @property
    def T(self) -> int:
        return self.history.shape[1]

    def member_counts(self, t: int | None = None) -> np.ndarray:
        """``(members, N, classes)`` counts accumulated through timestep ``t`` (1-based)."""
        t = self.T if t is None else t
        return self.history[:, t - 1]


def run_ensemble(model: NetworkModel, x, T: int, n_mc: int, seed: int, scheme,
                 workers: int | None = None) -> EnsembleRun:
    if n_mc < 1:
        raise ValueError("n_MC must be >= 1")
    if T < 1:
        raise ValueError("T must be >= 1")
    scheme = RngScheme.parse(scheme)

    def member(m):
        w = sample_network(model, scheme, member_seed(seed, m))
        res = network_forward_snn(model, x, T, w)
        return res.history, res.layer_spikes

    workers = min(resolve_workers(workers), n_mc)
    if workers == 1:
        results = [member(m) for m in range(n_mc)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(member, range(n_mc)))
    return EnsembleRun(np.stack([r[0] for r in results]), np.stack([r[1] for r in results]))


def records_from_counts(member_counts: np.ndarray, t_used: int, mode: str = SUM_THEN_SOFTMAX,
                        tau: float = 1.0) -> list:
    """One PredictionRecord per input from ``(members, N, classes)`` counts."""
    probs = combine(member_counts, mode, tau)
    summed = member_counts.sum(axis=0).astype(np.int64)
    n_mc = member_counts.shape[0]
    predicted = probs.argmax(axis=1)
    return [PredictionRecord(summed[i], probs[i], int(predicted[i]), float(probs[i, predicted[i]]),
                             t_used, n_mc) for i in range(summed.shape[0])]


def mc_inference(model: NetworkModel, x, n_mc: int, T: int, master_seed: int, scheme,
                 tau: float = 1.0, mode: str = SUM_THEN_SOFTMAX, workers: int | None = None):
    """Bayesian prediction for one input (returns a record) or a batch (returns a list)."""
    x = np.asarray(x)
    single = x.shape == model.input_shape
    run = run_ensemble(model, x, T, n_mc, master_seed, scheme, workers)
    recs = records_from_counts(run.member_counts(), T, mode, tau)
    return recs[0] if single else recs


def sweep(model: NetworkModel, images, labels, T_max: int, n_mc: int, scheme, seed: int,
          tau: float = 1.0, mode: str = SUM_THEN_SOFTMAX, bins: int = 15,
          workers: int | None = None) -> list:
    """Accuracy and ECE at every timestep ``1..T_max`` from one cumulative run.

    ``mean_spikes`` is the mean number of spikes emitted by all layers per
    input per ensemble member up to that timestep.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty dataset")
    run = run_ensemble(model, images, T_max, n_mc, seed, scheme, workers)
    cum_spikes = run.layer_spikes.sum(axis=2).cumsum(axis=1)  # (members, T)
    rows = []
    for t in range(1, T_max + 1):
        recs = records_from_counts(run.member_counts(t), t, mode, tau)
        rows.append({"t": t, "accuracy": metrics.accuracy(recs, labels),
                     "ece": metrics.ece(recs, labels, bins).ece,
                     "mean_spikes": float(cum_spikes[:, t - 1].sum() / (n_mc * labels.size))})
    return rows
