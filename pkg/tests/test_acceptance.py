"""End-to-end acceptance criteria 1-10, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per criterion
is printed in the summary) or directly with ``python3 tests/test_acceptance.py``.
"""
import csv
import io
import struct
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bsnn import bayes, metrics, modelio, perfmodel  # noqa: E402
from bsnn.bern import BernoulliTensor  # noqa: E402
from bsnn.convert import convert_to_snn, quantize_model  # noqa: E402
from bsnn.netcore import (FoldedBn, Geometry, LayerKind, LayerSpec, NetworkModel,  # noqa: E402
                          OpCounter, network_forward_snn, qrelu, run_if_neuron)
from bsnn.prng import RandomStream, bank_draw64_many, bank_init, lfsr_step, lfsr_step8  # noqa: E402
from bsnn.sampler import sample_tensor  # noqa: E402

from conftest import trained  # noqa: E402
from test_prng import _bit_oracle  # noqa: E402

RESULTS: dict = {}
ECE_TAU = 1.0  # raw summed counts into the softmax
SCHEMES = ["fp32", "fxp8", "lfsr-noreuse", "lfsr-maxreuse"]


# ----------------------------------------------------------------------------

def criterion_1():
    worst = 0.0
    for s in (0.5, 1.0, 2.0):
        for L in (2, 4, 8):
            for v in np.linspace(-2 * s, 2 * s, 400):
                spikes, _ = run_if_neuron(float(v), s, L, s / 2)
                worst = max(worst, abs(s * sum(spikes) / L - float(qrelu(v, s, L))))
    return worst <= 1e-9, f"max |rate - qrelu| = {worst:.3g}"


def criterion_2():
    w, seen = 1, set()
    for _ in range(255):
        seen.add(w)
        w = lfsr_step8(w)
    full = len(seen) == 255 and w == 1 and 0 not in seen
    a = b = 0xACE1ACE1
    oracle_ok = True
    for _ in range(1000):
        a, b = lfsr_step(a), _bit_oracle(b)
        oracle_ok &= a == b
    data = bank_draw64_many(bank_init(2024), 10**6 // 64 + 1).reshape(-1)[:10**6]
    counts = np.bincount(data, minlength=256)
    mu = 10**6 / 256
    z = np.abs(counts - mu) / np.sqrt(mu * (1 - 1 / 256))
    ok = full and oracle_ok and z.max() <= 5
    return ok, f"8-bit states {len(seen)}, oracle match {oracle_ok}, max byte |z| = {z.max():.2f}"


def criterion_3():
    n = 200_000
    worst = 0.0
    for raw in (1, 64, 128, 200, 255):
        w = sample_tensor(BernoulliTensor(np.full(n, raw, np.uint8)), RandomStream("lfsr-maxreuse", 7))
        p = raw / 256
        worst = max(worst, abs(np.mean(w == 1) - p) / np.sqrt(p * (1 - p) / n))
    return worst <= 4, f"max |freq - p| = {worst:.2f} sigma"


def criterion_4():
    _, model, test = trained("bayesian", 0)
    acc = {s: [metrics.accuracy(bayes.mc_inference(model, test.images, 10, 8, seed, s),
                                test.labels) for seed in range(3)] for s in SCHEMES}
    gap = max(abs(a - b) for a, b in zip(acc["lfsr-noreuse"], acc["lfsr-maxreuse"]))
    mean = {s: float(np.mean(v)) for s, v in acc.items()}
    fp_ok = all(mean["fp32"] >= mean[s] - 0.01 for s in SCHEMES[1:])
    detail = ", ".join(f"{s} {mean[s]:.4f}" for s in SCHEMES)
    return gap <= 0.02 and fp_ok, f"{detail}; max NoReuse-MaxReuse gap {100 * gap:.2f} pt"


def criterion_5():
    ece = {}
    for mode in ("bayesian", "frequentist-ste"):
        vals = []
        for seed in range(3):
            _, model, test = trained(mode, seed)
            recs = bayes.mc_inference(model, test.images, 10, model.layers[0].L, 0,
                                      "lfsr-maxreuse", tau=ECE_TAU)
            vals.append(metrics.ece(recs, test.labels).ece)
        ece[mode] = float(np.mean(vals))
    b, f = ece["bayesian"], ece["frequentist-ste"]
    return b <= f, f"mean ECE bayesian {b:.4f} vs frequentist {f:.4f}"


def criterion_6():
    _, model, test = trained("bayesian", 0)
    L = model.layers[0].L
    run = bayes.run_ensemble(model, test.images, 2 * L, 10, 0, "lfsr-maxreuse")
    acc = {t: metrics.accuracy(bayes.records_from_counts(run.member_counts(t), t), test.labels)
           for t in (L, 2 * L)}
    monotone = bool(np.all(np.diff(run.history, axis=1) >= 0))
    diff = abs(acc[2 * L] - acc[L])
    return diff <= 0.01 and monotone, (f"acc T={L} {acc[L]:.4f}, T={2 * L} {acc[2 * L]:.4f}, "
                                        f"monotone {monotone}")


def criterion_7():
    anchors = (perfmodel.conv_cycles(Geometry((1, 3, 3), 64, (3, 3))) == 3
               and perfmodel.sampling_cycles(64) == 1)
    rng = np.random.default_rng(77)
    mismatches = 0
    for _ in range(20):
        c, h = int(rng.integers(1, 4)), int(rng.integers(3, 9))
        g = Geometry((c, h, h), int(rng.integers(1, 70)), (int(rng.integers(1, 4)),) * 2,
                     int(rng.integers(1, 3)), int(rng.integers(0, 2)))
        k = g.out_channels
        layer = LayerSpec(LayerKind.ENCODER_CONV, g, FoldedBn(np.full(k, 0.01), np.zeros(k)), 1.0, 4, 1.0,
                          BernoulliTensor(rng.integers(0, 256, g.weight_shape).astype(np.uint8)))
        model = NetworkModel([layer], g.in_shape, g.out_size)
        T, n_mc = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        ctr = OpCounter()
        x = rng.integers(0, 256, (1, *g.in_shape)).astype(np.uint8)
        for m in range(n_mc):
            network_forward_snn(model, x, T, bayes.sample_network(model, "fxp8", m), counter=ctr)
        mismatches += perfmodel.model_report(model, T, n_mc).mac_ops != 2 * ctr.accumulates
    return anchors and mismatches == 0, f"anchors {anchors}, mac_ops mismatches {mismatches}/20"


def _sweep_csv(rows) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["t", "accuracy", "ece", "mean_spikes"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue().encode()


def criterion_8():
    ckpt, model, test = trained("bayesian", 0)
    x, y = test.images[:300], test.labels[:300]
    outs = []
    for workers in (1, 4, 8):
        recs = bayes.mc_inference(model, x, 10, 8, 5, "lfsr-maxreuse", workers=workers)
        preds = [(r.counts.tobytes(), r.probs.tobytes(), r.predicted) for r in recs]
        sweep = _sweep_csv(bayes.sweep(model, x, y, 16, 10, "lfsr-maxreuse", 5, workers=workers))
        blob = modelio.model_to_bytes(quantize_model(convert_to_snn(ckpt)))
        outs.append((preds, sweep, blob))
    same = outs[0] == outs[1] == outs[2]
    return same, f"identical predictions, sweep CSV and model bytes across 1/4/8 workers: {same}"


def criterion_9():
    e0 = metrics.ece(([1, 1, 1, 1, 0, 0], [0.75, 0.75, 0.75, 0.75, 0.5, 0.5]),
                     [1, 1, 1, 0, 0, 1]).ece
    e5 = metrics.ece(([0] * 4, [1.0] * 4), [0, 1, 0, 1]).ece
    e1 = metrics.ece(([0, 0, 1, 1], [0.6, 0.6, 0.9, 0.9]), [0, 1, 1, 1]).ece
    # exact in real arithmetic; 0.6 and 0.9 are not representable, so allow their rounding
    ok = e0 == 0.0 and e5 == 0.5 and abs(e1 - 0.1) <= 1e-15
    return ok, f"ece = {e0!r}, {e5!r}, {e1!r}"


def criterion_10():
    gdir = Path(__file__).parent / "golden"
    ok = True
    for name in ("tiny_real.bsnn", "tiny_deploy.bsnn"):
        raw = (gdir / name).read_bytes()
        ok &= modelio.model_to_bytes(modelio.model_from_bytes(raw)) == raw
    raw = (gdir / "tiny_deploy.bsnn").read_bytes()
    flipped = bytearray(raw)
    flipped[40] ^= 0xFF
    cases = [(raw[:3] + b"X" + raw[4:], modelio.BadMagicError),
             (raw[:4] + struct.pack("<H", 2) + raw[6:], modelio.UnsupportedVersionError),
             (bytes(flipped), modelio.ChecksumError)]
    codes = []
    for blob, err in cases:
        try:
            modelio.model_from_bytes(blob)
            ok = False
        except modelio.ModelFormatError as exc:
            ok &= type(exc) is err
            codes.append(exc.code)
    ok &= len(set(codes)) == 3
    return ok, f"golden round trips and error codes {codes}"


CRITERIA = {1: (criterion_1, 1), 2: (criterion_2, 10), 3: (criterion_3, 5), 4: (criterion_4, 300),
            5: (criterion_5, 600), 6: (criterion_6, 120), 7: (criterion_7, 60),
            8: (criterion_8, 120), 9: (criterion_9, 1), 10: (criterion_10, 1)}


def run_criterion(num: int):
    fn, budget = CRITERIA[num]
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    ok = bool(ok) and dt <= budget
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({dt:.2f} s of {budget} s)"
    RESULTS[num] = line
    print(line)
    return ok, line


@pytest.mark.parametrize("num", sorted(CRITERIA))
def test_criterion(num):
    ok, line = run_criterion(num)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(n)[0] for n in sorted(CRITERIA)]
    sys.exit(0 if all(results) else 1)
