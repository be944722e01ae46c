import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsnn.bayes import PredictionRecord
from bsnn.metrics import accuracy, bin_index, ece, spike_stats


def _recs(pred, conf):
    return [PredictionRecord(np.zeros(2, np.int64), np.array([c, 1 - c]), int(p), float(c), 1, 1)
            for p, c in zip(pred, conf)]


def _ece_exact(pred, conf, labels, B):
    """Rational-arithmetic ECE of the given doubles."""
    bins = {}
    for p, c, y in zip(pred, conf, labels):
        c = Fraction(c)
        b = max(math.ceil(c * B), 1)
        s = bins.setdefault(b, [Fraction(0), 0])
        s[0] += c
        s[1] += int(p == y)
    return sum(abs(cs - ok) for cs, ok in bins.values()) / len(labels)


class TestAccuracy:
    def test_examples(self):
        assert accuracy(_recs([0, 1], [1, 1]), [0, 1]) == 1.0
        assert accuracy(_recs([0, 1], [1, 1]), [1, 0]) == 0.0
        assert accuracy(_recs([0, 1, 2, 3], [1] * 4), [0, 1, 2, 0]) == 0.75

    def test_errors(self):
        with pytest.raises(ValueError):
            accuracy([], [])
        with pytest.raises(ValueError):
            accuracy(_recs([0], [1]), [0, 1])


class TestEce:
    def test_perfectly_calibrated(self):
        pred = [1, 1, 1, 1, 0, 0]
        conf = [0.75, 0.75, 0.75, 0.75, 0.5, 0.5]
        labels = [1, 1, 1, 0, 0, 1]
        assert ece((pred, conf), labels).ece == 0.0

    def test_overconfident(self):
        assert ece(([0] * 4, [1.0] * 4), [0, 1, 0, 1]).ece == 0.5

    def test_two_bin_example(self):
        pred, conf, labels = [0, 0, 1, 1], [0.6, 0.6, 0.9, 0.9], [0, 1, 1, 1]
        rep = ece((pred, conf), labels)
        assert rep.ece == float(_ece_exact(pred, conf, labels, 15))
        assert rep.ece == pytest.approx(0.1, abs=1e-12)
        assert (rep.total > 0).sum() == 2

    def test_records_and_arrays_agree(self):
        pred, conf, labels = [0, 1, 1], [0.3, 0.8, 0.95], [0, 0, 1]
        assert ece(_recs(pred, conf), labels).ece == ece((pred, conf), labels).ece

    def test_boundaries(self):
        B = 15
        b = np.arange(1, B + 1)
        assert bin_index(b / B, B).tolist() == (b - 1).tolist()
        assert bin_index(np.array([0.0]), B).tolist() == [0]
        assert bin_index(np.nextafter(b[:-1] / B, 2), B).tolist() == b[:-1].tolist()

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(0, 3), st.floats(0, 1), st.integers(0, 3)),
                    min_size=1, max_size=60), st.integers(1, 20))
    def test_matches_exact_oracle(self, rows, B):
        pred, conf, labels = map(list, zip(*rows))
        rep = ece((pred, conf), labels, B)
        assert rep.ece == pytest.approx(float(_ece_exact(pred, conf, labels, B)), abs=1e-12)
        assert 0 <= rep.ece <= 1
        assert rep.total.sum() == len(rows) and rep.B == B

    @given(st.lists(st.tuples(st.integers(0, 3), st.floats(0, 1), st.integers(0, 3)),
                    min_size=1, max_size=60), st.randoms())
    def test_permutation_invariant(self, rows, rnd):
        shuffled = rows[:]
        rnd.shuffle(shuffled)
        a = ece(tuple(map(list, zip(*rows)))[:2], [r[2] for r in rows])
        b = ece(tuple(map(list, zip(*shuffled)))[:2], [r[2] for r in shuffled])
        assert a.ece == b.ece

    def test_errors(self):
        with pytest.raises(ValueError):
            ece(([0], [0.5]), [0], B=0)
        with pytest.raises(ValueError):
            ece(([0], [1.5]), [0])
        with pytest.raises(ValueError):
            ece(([], []), [])

    def test_reliability_rows(self):
        rep = ece(([0, 0, 1], [0.2, 0.9, 0.95]), [0, 1, 1], B=2)
        assert rep.rows() == [(0.0, 0.5, 1, 0.2, 1.0), (0.5, 1.0, 2, pytest.approx(0.925), 0.5)]


class TestSpikeStats:
    def test_silent(self):
        trace = [[np.zeros((1, 4)), np.zeros((1, 2))] for _ in range(5)]
        st_ = spike_stats(trace)
        assert st_.total == 0 and st_.mean_rate == 0 and not st_.per_layer_step.any()

    def test_one_neuron_every_step(self):
        T = 7
        trace = [[np.array([[1, 0, 0]])] for _ in range(T)]
        st_ = spike_stats(trace)
        assert st_.total == T and st_.mean_rate == pytest.approx(1 / 3)

    def test_brute_force_recount(self):
        rng = np.random.default_rng(0)
        trace = [[rng.integers(0, 2, (2, 3, 4, 4)), rng.integers(0, 2, (2, 5))] for _ in range(6)]
        st_ = spike_stats(trace)
        total = 0
        for t, planes in enumerate(trace):
            for i, p in enumerate(planes):
                n = sum(int(v) for v in np.asarray(p).reshape(-1))
                assert st_.per_layer_step[t, i] == n
                total += n
        assert st_.total == total
        assert st_.mean_rate == pytest.approx(total / (6 * (2 * 48 + 2 * 5)))
