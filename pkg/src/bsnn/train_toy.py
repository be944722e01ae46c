"""Desk-scale trainer producing :class:`~bsnn.convert.AnnCheckpoint` files.

This is a stand-in for full variational training so the deployment path
can be exercised end to end.  It is deliberately simple:

* ``bayesian`` mode keeps one natural parameter per weight.  Every
  minibatch samples {-1, +1} weights from ``p = sigmoid(2 lambda)`` and the
  gradient passes straight through the sample to ``lambda`` (identity
  inside ``[-lambda_clip, lambda_clip]``).  Evaluation averages the softmax
  over sampled networks.
* ``frequentist-ste`` mode trains latent real weights through ``sign``.

The output layer stays linear during the ReLU phase; in the quantized
phase its gradient also passes below zero so silent logits can recover.

Training runs in two phases: ReLU activations first, then quantized ReLU
with ``L`` levels and a trainable step per layer (plain SGD on the steps).
Both phases use a cosine learning-rate decay.  ``meta["loss_history"]``
records, after every epoch, the loss on a fixed slice of the training set
with fixed weight-sampling draws, so epochs are directly comparable.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bern import bern_param
from .convert import AnnCheckpoint, AnnLayer
from .netcore import Geometry, LayerKind, fc_geometry, im2col, qrelu

DATASETS = ("stripes8x8", "blobs8x8")
MODES = ("bayesian", "frequentist-ste")
STE_LAMBDA = 8.0  # natural parameter written for a deterministic +-1 weight
BN_EPS = 1e-5
PROBE_SIZE = 1000  # training samples scored after every epoch
LR_FLOOR = 0.05  # final fraction of the base learning rates in each phase


class TrainingError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------------

@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, 8, 8) uint8
    labels: np.ndarray  # (N,) uint8
    classes: int

    def __len__(self):
        return int(self.labels.size)


def _balanced_labels(n: int, k: int, rng) -> np.ndarray:
    return rng.permutation(np.arange(n) % k).astype(np.uint8)


def _stripes(labels, rng):
    n = labels.size
    ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    coords = np.stack([ii, jj, (ii + jj) / math.sqrt(2), (ii - jj) / math.sqrt(2)])
    period = rng.uniform(3.5, 4.5, n)
    phase = rng.normal(0, 0.5, n)  # near-fixed phase keeps class means apart
    contrast = rng.uniform(0.2, 0.6, n)
    c = coords[labels]
    img = 0.5 + contrast[:, None, None] * np.cos(2 * math.pi * c / period[:, None, None]
                                                 + phase[:, None, None])
    return img + rng.normal(0, 0.3, img.shape)


def _blobs(labels, rng):
    n = labels.size
    qi = (labels // 2).astype(np.float64)
    qj = (labels % 2).astype(np.float64)
    ci = 1.75 + 3.5 * qi + rng.normal(0, 0.9, n)
    cj = 1.75 + 3.5 * qj + rng.normal(0, 0.9, n)
    width = rng.uniform(1.0, 2.0, n)
    ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    d2 = (ii[None] - ci[:, None, None]) ** 2 + (jj[None] - cj[:, None, None]) ** 2
    img = 0.1 + 0.8 * np.exp(-d2 / (2 * width[:, None, None] ** 2))
    return img + rng.normal(0, 0.15, img.shape)


def gen_dataset(kind: str, n: int, seed: int, classes: int = 4) -> Dataset:
    """Deterministic synthetic 8x8 grayscale set with balanced labels."""
    if kind not in DATASETS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    if not 2 <= classes <= 4:
        raise ValueError("toy datasets have 2 to 4 classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, DATASETS.index(kind), 0xDA7A]))
    labels = _balanced_labels(n, classes, rng)
    img = _stripes(labels, rng) if kind == "stripes8x8" else _blobs(labels, rng)
    images = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)[:, None]
    return Dataset(images, labels, classes)


# ----------------------------------------------------------------------------
# Model pieces
# ----------------------------------------------------------------------------

@dataclass
class ToyConfig:
    dataset: str = "blobs8x8"
    n_train: int = 3000
    n_test: int = 1000
    classes: int = 4
    enc_channels: int = 8
    conv_channels: int = 16
    L: int = 8
    epochs_relu: int = 30
    epochs_quant: int = 20
    batch: int = 64
    lr: float = 0.01  # Adam, on lambda / latent weights and BN
    lr_step: float = 0.002  # SGD, on activation steps
    lambda_clip: float = 3.0
    lambda_init: float = 1.0  # std of the initial natural parameters
    mode: str = "bayesian"
    seed: int = 0
    eval_samples: int = 10

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("dataset sizes must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")


def toy_architecture(cfg: ToyConfig) -> list:
    enc = Geometry((1, 8, 8), cfg.enc_channels, (3, 3), 2, 1)
    conv = Geometry(enc.out_shape, cfg.conv_channels, (3, 3), 2, 1)
    fc = fc_geometry(int(np.prod(conv.out_shape)), cfg.classes)
    return [(LayerKind.ENCODER_CONV, enc), (LayerKind.BINARY_CONV, conv), (LayerKind.BINARY_FC, fc)]


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _col2im(dcols, x_shape, kernel, stride, pad):
    n, c, h, w = x_shape
    kh, kw = kernel
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    d = dcols.reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for di in range(kh):
        for dj in range(kw):
            dx[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += \
                d[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return dx[:, :, pad:pad + h, pad:pad + w]


class ToyNet:
    """Numpy network with manual backprop: conv/fc -> BN -> (q)ReLU per layer."""

    def __init__(self, cfg: ToyConfig, rng):
        self.cfg = cfg
        self.arch = toy_architecture(cfg)
        self.p = {}
        self.running = []
        for i, (kind, g) in enumerate(self.arch):
            shape = g.weight_shape
            if cfg.mode == "bayesian":
                self.p[f"w{i}"] = rng.normal(0, cfg.lambda_init, shape)
            else:
                self.p[f"w{i}"] = rng.uniform(-0.5, 0.5, shape)
            self.p[f"g{i}"] = np.ones(g.out_channels)
            self.p[f"b{i}"] = np.zeros(g.out_channels)
            self.running.append([np.zeros(g.out_channels), np.ones(g.out_channels)])
        self.quant = False

    # -- weights ------------------------------------------------------------
    def sample_weights(self, rng) -> list:
        """One hard {-1, +1} instantiation (deterministic signs in STE mode)."""
        ws = []
        for i in range(len(self.arch)):
            w = self.p[f"w{i}"]
            if self.cfg.mode == "bayesian":
                ws.append(np.where(rng.random(w.shape) < bern_param(w), 1.0, -1.0))
            else:
                ws.append(np.where(w >= 0, 1.0, -1.0))
        return ws

    def _param_grad(self, i, dw):
        """Straight-through gradient from the sampled weights to the stored parameter."""
        w = self.p[f"w{i}"]
        if self.cfg.mode == "bayesian":
            return dw * (np.abs(w) < self.cfg.lambda_clip)
        return dw * (np.abs(w) <= 1)

    # -- forward/backward ---------------------------------------------------
    def _linear(self, i, inp, ws):
        wm = ws[i].reshape(self.arch[i][1].out_channels, -1)
        return inp @ wm.T, wm

    @staticmethod
    def _linear_back(inp, dz, wm, need_dx: bool):
        dwm = dz.reshape(-1, dz.shape[-1]).T @ inp.reshape(-1, inp.shape[-1])
        return dwm, (dz @ wm if need_dx else None)

    def forward(self, x, ws, train: bool, update_running: bool = True):
        cache = []
        h = x
        n = x.shape[0]
        for i, (kind, g) in enumerate(self.arch):
            if kind is LayerKind.BINARY_FC:
                inp = h.reshape(n, -1)
                zl, lin = self._linear(i, inp, ws)
                z = zl
                axes, cs = (0,), (1, -1)
            else:
                inp = im2col(h, g.kernel, g.stride, g.pad)
                zl, lin = self._linear(i, inp, ws)  # (N, P, C_out)
                z = zl.transpose(0, 2, 1).reshape(n, g.out_channels, *g.out_hw)
                axes, cs = (0, 2, 3), (1, -1, 1, 1)
            if train:
                mu = z.mean(axis=axes)
                var = z.var(axis=axes)
            if train and update_running:
                rm, rv = self.running[i]
                rm *= 0.9
                rm += 0.1 * mu
                rv *= 0.9
                rv += 0.1 * var
            elif not train:
                mu, var = self.running[i]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu.reshape(cs)) * inv.reshape(cs)
            v = self.p[f"g{i}"].reshape(cs) * zhat + self.p[f"b{i}"].reshape(cs)
            last = i == len(self.arch) - 1
            if self.quant:
                y = qrelu(v, self.p[f"s{i}"], self.cfg.L)
            else:
                y = v if last else np.maximum(v, 0)
            cache.append((h.shape, inp, lin, zhat, inv, v, mu, var))
            h = y
        return h, cache

    def backward(self, dy, cache):
        grads = {}
        for i in reversed(range(len(self.arch))):
            kind, g = self.arch[i]
            in_shape, inp, lin, zhat, inv, v, _, _ = cache[i]
            axes, cs = ((0,), (1, -1)) if kind is LayerKind.BINARY_FC else ((0, 2, 3), (1, -1, 1, 1))
            last = i == len(self.arch) - 1
            if self.quant:
                s = float(self.p[f"s{i}"])
                L = self.cfg.L
                # logits keep a gradient below zero so a silent output can recover
                inside = (v <= s) if last else (v >= 0) & (v <= s)
                q = np.clip(np.floor(v * L / s + 0.5), 0, L)
                ds_local = np.where(inside, q / L - v / s, np.where(v > s, 1.0, 0.0))
                grads[f"s{i}"] = np.array(float((dy * ds_local).sum()))
                dv = dy * inside
            else:
                dv = dy if last else dy * (v > 0)
            gamma = self.p[f"g{i}"]
            grads[f"g{i}"] = (dv * zhat).sum(axis=axes)
            grads[f"b{i}"] = dv.sum(axis=axes)
            dzhat = dv * gamma.reshape(cs)
            m = dv.size / gamma.size
            dz = (inv.reshape(cs) / m) * (m * dzhat - dzhat.sum(axis=axes, keepdims=True)
                                          - zhat * (dzhat * zhat).sum(axis=axes, keepdims=True))
            n = dz.shape[0]
            if kind is not LayerKind.BINARY_FC:
                dz = dz.reshape(n, g.out_channels, -1).transpose(0, 2, 1)  # (N, P, O)
            dwm, dinp = self._linear_back(inp, dz, lin, need_dx=i > 0)
            grads[f"w{i}"] = self._param_grad(i, dwm.reshape(g.weight_shape))
            if i > 0:
                if kind is LayerKind.BINARY_FC:
                    dy = dinp.reshape(in_shape)
                else:
                    dy = _col2im(dinp, in_shape, g.kernel, g.stride, g.pad)
        return grads

    def logits(self, x, ws):
        return self.forward(x, ws, train=False)[0].reshape(x.shape[0], -1)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _xent(logits, labels):
    p = _softmax(logits)
    n = labels.size
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-12))
    d = p.copy()
    d[np.arange(n), labels] -= 1
    return loss, d / n


def _predict(net: ToyNet, x, rng, samples: int) -> np.ndarray:
    if net.cfg.mode == "bayesian":
        return np.mean([_softmax(net.logits(x, net.sample_weights(rng))) for _ in range(samples)],
                       axis=0)
    return _softmax(net.logits(x, net.sample_weights(rng)))


def _run_epochs(net: ToyNet, data: Dataset, epochs: int, rng, adam: _Adam, history: list,
                batch_history: list):
    x = data.images.astype(np.float64) / 255.0
    y = data.labels.astype(np.int64)
    n = len(data)
    base_lr, base_step = adam.lr, net.cfg.lr_step
    for epoch in range(epochs):
        # cosine decay within the phase, down to 5% of the base rates
        decay = LR_FLOOR + (1 - LR_FLOOR) * 0.5 * (1 + math.cos(math.pi * epoch / epochs))
        adam.lr = base_lr * decay
        step_lr = base_step * decay
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, net.cfg.batch):
            idx = order[start:start + net.cfg.batch]
            if idx.size < 2:
                continue
            ws = net.sample_weights(rng)
            out, cache = net.forward(x[idx], ws, train=True)
            loss, dout = _xent(out.reshape(idx.size, -1), y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged (config: {asdict(net.cfg)})")
            total += loss * idx.size
            grads = net.backward(dout.reshape(out.shape), cache)
            step_grads = {k: grads.pop(k) for k in list(grads) if k.startswith("s")}
            adam.step(net.p, grads)
            if not all(np.all(np.isfinite(v)) for v in net.p.values()):
                raise TrainingError(f"parameters diverged (config: {asdict(net.cfg)})")
            for k, gk in step_grads.items():
                net.p[k] = np.maximum(net.p[k] - step_lr * gk, 1e-3)
            if net.cfg.mode == "bayesian":
                for i in range(len(net.arch)):
                    np.clip(net.p[f"w{i}"], -net.cfg.lambda_clip, net.cfg.lambda_clip,
                            out=net.p[f"w{i}"])
            else:
                for i in range(len(net.arch)):
                    np.clip(net.p[f"w{i}"], -1, 1, out=net.p[f"w{i}"])
        history.append(_probe_loss(net, x[:PROBE_SIZE], y[:PROBE_SIZE]))
        batch_history.append(total / n)


def _probe_loss(net: ToyNet, x, y, samples: int = 4) -> float:
    """Training loss on a fixed probe set with the same weight-sampling draws every call.

    Reusing the uniforms (common random numbers) makes successive epochs
    comparable: only the parameters change between calls.
    """
    rng = np.random.default_rng(np.random.SeedSequence([net.cfg.seed, 0x9E0B]))
    reps = samples if net.cfg.mode == "bayesian" else 1
    losses = []
    for _ in range(reps):
        out, _ = net.forward(x, net.sample_weights(rng), train=True, update_running=False)
        losses.append(_xent(out.reshape(x.shape[0], -1), y)[0])
    return float(np.mean(losses))


def _calibrate_bn(net: ToyNet, data: Dataset, rng, samples: int):
    """Replace running BN statistics by exact train-set statistics, averaged over weight samples."""
    x = data.images.astype(np.float64) / 255.0
    reps = samples if net.cfg.mode == "bayesian" else 1
    acc = [[0.0, 0.0] for _ in net.arch]
    for _ in range(reps):
        _, cache = net.forward(x, net.sample_weights(rng), train=True)
        for i in range(len(net.arch)):
            acc[i][0] = acc[i][0] + cache[i][6]
            acc[i][1] = acc[i][1] + cache[i][7]
    net.running = [[m / reps, v / reps] for m, v in acc]


def _init_steps(net: ToyNet, data: Dataset, rng):
    x = data.images[:512].astype(np.float64) / 255.0
    _, cache = net.forward(x, net.sample_weights(rng), train=False)
    for i in range(len(net.arch)):
        v = cache[i][5]
        pos = v[v > 0]
        net.p[f"s{i}"] = np.array(float(np.percentile(pos, 99)) if pos.size else 1.0)


def train(cfg: ToyConfig) -> AnnCheckpoint:
    """Train one toy model and return its checkpoint (``meta`` holds the run record)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
    train_set = gen_dataset(cfg.dataset, cfg.n_train, cfg.seed, cfg.classes)
    test_set = gen_dataset(cfg.dataset, cfg.n_test, cfg.seed + 1_000_003, cfg.classes)
    net = ToyNet(cfg, rng)
    losses: list = []
    batch_losses: list = []
    _run_epochs(net, train_set, cfg.epochs_relu, rng, _Adam(cfg.lr), losses, batch_losses)
    _calibrate_bn(net, train_set, rng, cfg.eval_samples)
    xt = test_set.images.astype(np.float64) / 255.0
    acc_relu = float(np.mean(_predict(net, xt, rng, cfg.eval_samples).argmax(1) == test_set.labels))

    _init_steps(net, train_set, rng)
    net.quant = True
    n_relu = len(losses)
    _run_epochs(net, train_set, cfg.epochs_quant, rng, _Adam(cfg.lr * 0.3), losses, batch_losses)
    _calibrate_bn(net, train_set, rng, cfg.eval_samples)
    acc_q = float(np.mean(_predict(net, xt, rng, cfg.eval_samples).argmax(1) == test_set.labels))

    layers = []
    for i, (kind, g) in enumerate(net.arch):
        w = net.p[f"w{i}"]
        lam = w if cfg.mode == "bayesian" else np.where(w >= 0, STE_LAMBDA, -STE_LAMBDA)
        mu, var = net.running[i]
        layers.append(AnnLayer(kind, g, net.p[f"g{i}"].copy(), net.p[f"b{i}"].copy(), mu.copy(),
                               var.copy(), float(net.p[f"s{i}"]), lam.astype(np.float32), eps=BN_EPS))
    meta = {"config": asdict(cfg), "loss_history": losses, "batch_loss_history": batch_losses,
            "relu_epochs": n_relu,
            "test_accuracy_relu": acc_relu, "test_accuracy_quant": acc_q}
    return AnnCheckpoint(layers, (1, 8, 8), cfg.classes, cfg.L, 1.0 / 255.0, meta)
