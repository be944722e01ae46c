"""Layer and network forward passes.

A :class:`NetworkModel` is shared by both execution modes:

* ANN mode -- quantized-ReLU activations, weights as their expectation
  ``2p - 1`` or as a fixed {-1, +1} sample;
* SNN mode -- integrate-and-fire neurons with reset-by-subtraction driven
  by binary spikes through multiplexed {-1, +1} weights.

Activation scales are folded into the *next* layer's batch-norm
multiplier, so every layer consumes unit-scale inputs: spikes in SNN mode,
normalized rates ``y / s`` in ANN mode, raw 0..255 pixels for the encoder.
A layer's pre-activation is ``a * (W x) + b`` per output channel and its
threshold is ``theta = s``.

Models are either real-valued (float64 arithmetic) or deployed, in which
case BN coefficients and ``theta`` are :class:`~bsnn.fxp.QAffine` values
and all neuron arithmetic is exact int64 in the layer's membrane scale,
saturated to the 32-bit accumulator range.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .bern import BernoulliTensor
from .fxp import QAffine, align, saturate_acc32, ACC32_MAX


class ShapeError(ValueError):
    pass


class ModelError(ValueError):
    pass


class LayerKind(enum.IntEnum):
    ENCODER_CONV = 1
    BINARY_CONV = 2
    BINARY_FC = 3
    RESIDUAL_ADD = 4


CONV_KINDS = (LayerKind.ENCODER_CONV, LayerKind.BINARY_CONV)


@dataclass(frozen=True)
class Geometry:
    """``in_shape`` is ``(C, H, W)``; fully connected layers use ``(F, 1, 1)``
    for their flattened input and a 1x1 kernel."""

    in_shape: tuple
    out_channels: int
    kernel: tuple = (1, 1)
    stride: int = 1
    pad: int = 0

    @property
    def out_hw(self) -> tuple:
        _, h, w = self.in_shape
        kh, kw = self.kernel
        return ((h + 2 * self.pad - kh) // self.stride + 1,
                (w + 2 * self.pad - kw) // self.stride + 1)

    @property
    def out_shape(self) -> tuple:
        return (self.out_channels, *self.out_hw)

    @property
    def fan_in(self) -> int:
        return self.in_shape[0] * self.kernel[0] * self.kernel[1]

    @property
    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_shape[0], *self.kernel)

    @property
    def out_size(self) -> int:
        return int(np.prod(self.out_shape))


def fc_geometry(in_features: int, out_features: int) -> Geometry:
    return Geometry((in_features, 1, 1), out_features)


@dataclass
class FoldedBn:
    """Per-channel ``a * v + b``; each coefficient is a float array or a QAffine."""

    a: np.ndarray | QAffine
    b: np.ndarray | QAffine

    @property
    def quantized(self) -> bool:
        return isinstance(self.a, QAffine)

    def decode(self) -> tuple[np.ndarray, np.ndarray]:
        return _decode(self.a), _decode(self.b)

    def __eq__(self, other):
        if not isinstance(other, FoldedBn):
            return NotImplemented
        return _coef_eq(self.a, other.a) and _coef_eq(self.b, other.b)


def _decode(c) -> np.ndarray:
    if isinstance(c, QAffine):
        return c.decode()
    return np.asarray(c, dtype=np.float64)


def _coef_eq(x, y) -> bool:
    if isinstance(x, QAffine) or isinstance(y, QAffine):
        return x == y
    if x is None or y is None:
        return x is y
    return np.array_equal(np.asarray(x), np.asarray(y))


@dataclass
class LayerSpec:
    kind: LayerKind
    geometry: Geometry
    bn: FoldedBn
    theta: float | QAffine
    L: int
    s: float
    weight: BernoulliTensor | None = None
    skip: int = -1  # residual only: index of the layer feeding the shortcut
    skip_a: np.ndarray | QAffine | None = None  # residual only: shortcut multiplier

    def __post_init__(self):
        self.kind = LayerKind(self.kind)
        if self.L < 2:
            raise ModelError("L must be >= 2")
        if self.theta_value <= 0:
            raise ModelError("threshold must be positive")
        if self.kind is LayerKind.RESIDUAL_ADD:
            if self.weight is not None or self.skip_a is None or self.skip < 0:
                raise ModelError("residual layer needs skip and skip_a and no weights")
        elif self.weight is None or self.weight.shape != self.geometry.weight_shape:
            raise ModelError(f"weight shape does not match geometry {self.geometry.weight_shape}")

    @property
    def theta_value(self) -> float:
        return float(_decode(self.theta).reshape(-1)[0])

    @property
    def quantized(self) -> bool:
        return self.bn.quantized

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (self.kind == other.kind and self.geometry == other.geometry
                and self.bn == other.bn and _coef_eq(self.theta, other.theta)
                and self.L == other.L and self.s == other.s and self.weight == other.weight
                and self.skip == other.skip and _coef_eq(self.skip_a, other.skip_a))


@dataclass
class NetworkModel:
    layers: list
    input_shape: tuple
    class_count: int
    default_T: int = 8
    default_nmc: int = 10
    deploy: bool = False

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.layers:
            self.validate()

    def validate(self):
        if self.layers[0].kind is not LayerKind.ENCODER_CONV:
            raise ModelError("first layer must be the encoder convolution")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            g = layer.geometry
            if i > 0 and layer.kind is LayerKind.ENCODER_CONV:
                raise ModelError("only the first layer may be an encoder")
            if layer.kind is LayerKind.BINARY_FC:
                if g.in_shape[0] != int(np.prod(shape)):
                    raise ShapeError(f"layer {i}: fc expects {g.in_shape[0]} inputs, got {shape}")
            elif tuple(g.in_shape) != tuple(shape):
                raise ShapeError(f"layer {i}: expects input {g.in_shape}, got {shape}")
            if layer.kind is LayerKind.RESIDUAL_ADD:
                if not 0 <= layer.skip < i or self.layers[layer.skip].geometry.out_shape != g.out_shape:
                    raise ShapeError(f"layer {i}: bad residual shortcut {layer.skip}")
            if layer.quantized != self.deploy:
                raise ModelError(f"layer {i}: mixed real and deployed layers")
            shape = g.out_shape
        if int(np.prod(shape)) != self.class_count:
            raise ShapeError("last layer size must equal class_count")

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (self.input_shape == other.input_shape and self.class_count == other.class_count
                and self.default_T == other.default_T and self.default_nmc == other.default_nmc
                and self.deploy == other.deploy and len(self.layers) == len(other.layers)
                and all(a == b for a, b in zip(self.layers, other.layers)))


# ----------------------------------------------------------------------------
# Scalar building blocks
# ----------------------------------------------------------------------------

def qrelu(v, s: float, L: int):
    """Quantized ReLU: ``(s/L) * clamp(floor(v L / s + 1/2), 0, L)``."""
    if not s > 0:
        raise ValueError("step size must be positive")
    if L < 2:
        raise ValueError("L must be >= 2")
    levels = np.clip(np.floor(np.asarray(v, dtype=np.float64) * L / s + 0.5), 0, L)
    out = np.minimum((s / L) * levels, s)  # the top level is exactly s
    return float(out) if out.ndim == 0 else out


def fold_bn(gamma, beta, mu, var, eps: float = 1e-5) -> FoldedBn:
    gamma, beta, mu, var = (np.asarray(x, dtype=np.float64) for x in (gamma, beta, mu, var))
    denom = var + eps
    if np.any(denom <= 0):
        raise ValueError("var + eps must be positive")
    a = gamma / np.sqrt(denom)
    return FoldedBn(np.atleast_1d(a), np.atleast_1d(beta - a * mu))


def if_step(U, I, theta):
    """One integrate-and-fire update with reset-by-subtraction.

    The neuron fires when the integrated potential reaches ``theta``
    (``U >= theta``).  Works on scalars, numpy arrays, ints or Fractions.
    """
    U_mid = U + I
    if isinstance(U_mid, np.ndarray):
        spike = (U_mid >= theta).astype(U_mid.dtype)
    else:
        spike = 1 if U_mid >= theta else 0
    return spike, U_mid - spike * theta


def run_if_neuron(current, theta, T: int, u0=None):
    """Drive one IF neuron with ``current`` (scalar or length-T sequence) for T steps."""
    U = theta / 2 if u0 is None else u0
    seq = current if np.ndim(current) else [current] * T
    spikes = []
    for t in range(T):
        z, U = if_step(U, seq[t], theta)
        spikes.append(z)
    return spikes, U


# ----------------------------------------------------------------------------
# Convolutions
# ----------------------------------------------------------------------------

def im2col(x: np.ndarray, kernel: tuple, stride: int, pad: int) -> np.ndarray:
    """``(N, C, H, W)`` -> ``(N, H_out*W_out, C*kh*kw)`` patch matrix (C-major within a patch)."""
    n, c, h, w = x.shape
    kh, kw = kernel
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x, shape=(n, ho, wo, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw), writeable=False)
    return patches.reshape(n, ho * wo, c * kh * kw)


def weighted_sum(x: np.ndarray, w: np.ndarray, g: Geometry, kind: LayerKind,
                 ops: list | None = None) -> np.ndarray:
    """Mux-accumulate of inputs through weights for one layer.

    Returns ``(N, C_out, H_out, W_out)``, or ``(N, F_out)`` for fc layers.
    ``ops[0]``, if given, is increased by the number of (input, weight)
    terms accumulated, read off the operands actually multiplied.
    """
    n = x.shape[0]
    wm = w.reshape(w.shape[0], -1).astype(np.float64)
    if kind is LayerKind.BINARY_FC:
        flat = x.reshape(n, -1).astype(np.float64, copy=False)
        if flat.shape[1] != wm.shape[1]:
            raise ShapeError(f"fc expects {wm.shape[1]} inputs, got {flat.shape[1]}")
        if ops is not None:
            ops[0] += flat.shape[0] * flat.shape[1] * wm.shape[0]
        return flat @ wm.T
    if x.shape[1:] != tuple(g.in_shape):
        raise ShapeError(f"conv expects input {g.in_shape}, got {x.shape[1:]}")
    cols = im2col(x.astype(np.float64, copy=False), g.kernel, g.stride, g.pad)
    if ops is not None:
        ops[0] += cols.shape[0] * cols.shape[1] * cols.shape[2] * wm.shape[0]
    out = cols @ wm.T  # (N, P, C_out)
    ho, wo = g.out_hw
    return out.transpose(0, 2, 1).reshape(n, g.out_channels, ho, wo)


def conv_reference(x, w, stride: int, pad: int, counter: list | None = None):
    """Loop-level convolution of one ``(C, H, W)`` input; optionally counts accumulates."""
    c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    ops = 0
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ch in range(ci):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += xp[ch, i * stride + di, j * stride + dj] * w[o, ch, di, dj]
                            ops += 1
                out[o, i, j] = acc
    if counter is not None:
        counter[0] += ops
    return out


# ----------------------------------------------------------------------------
# Per-layer runtime constants
# ----------------------------------------------------------------------------

@dataclass
class _Runtime:
    a: np.ndarray
    b: np.ndarray
    skip_a: np.ndarray | None
    theta: float | int
    u0: float | int
    integer: bool
    max_current: float


def _channel_shape(layer: LayerSpec) -> tuple:
    # broadcast per-channel coefficients against (N, C, H, W) or (N, F)
    if layer.kind is LayerKind.BINARY_FC:
        return (1, -1)
    return (1, -1, 1, 1)


def membrane_exponent(layer: LayerSpec) -> int:
    """Exponent of the membrane scale for a deployed layer.

    One bit finer than the finest parameter so ``theta / 2`` is exact.
    """
    exps = [layer.bn.a.exponent, layer.bn.b.exponent, layer.theta.exponent]
    if layer.skip_a is not None:
        exps.append(layer.skip_a.exponent)
    return min(exps) - 1


def _runtime(layer: LayerSpec) -> _Runtime:
    cs = _channel_shape(layer)
    fan = 2 if layer.kind is LayerKind.RESIDUAL_ADD else layer.geometry.fan_in
    max_in = 255.0 if layer.kind is LayerKind.ENCODER_CONV else 1.0
    if layer.quantized:
        e = membrane_exponent(layer)
        a = align(layer.bn.a, e)
        b = align(layer.bn.b, e)
        skip = None if layer.skip_a is None else align(layer.skip_a, e)
        theta = int(align(layer.theta, e)[0])
        max_cur = float(np.abs(a).max() * fan * max_in + np.abs(b).max())
        if skip is not None:
            max_cur += float(np.abs(skip).max())
        if max_cur + theta > ACC32_MAX:
            raise ModelError("layer currents exceed the 32-bit accumulator")
        return _Runtime(a.reshape(cs), b.reshape(cs), None if skip is None else skip.reshape(cs),
                        theta, theta // 2, True, max_cur)
    a, b = layer.bn.decode()
    skip = None if layer.skip_a is None else _decode(layer.skip_a).reshape(cs)
    theta = layer.theta_value
    return _Runtime(a.reshape(cs), b.reshape(cs), skip, theta, theta / 2, False,
                    float(np.abs(a).max() * fan * max_in + np.abs(b).max()))


def _current(rt: _Runtime, acc: np.ndarray, skip_in: np.ndarray | None = None) -> np.ndarray:
    if rt.integer:
        acc = np.rint(acc).astype(np.int64)
        I = rt.a * acc + rt.b
        if skip_in is not None:
            I = I + rt.skip_a * skip_in.astype(np.int64)
        return I
    I = rt.a * acc + rt.b
    if skip_in is not None:
        I = I + rt.skip_a * skip_in
    return I


def check_weights(model: NetworkModel, weights) -> list:
    if len(weights) != len(model.layers):
        raise ShapeError("need one weight entry per layer")
    for layer, w in zip(model.layers, weights):
        if layer.kind is LayerKind.RESIDUAL_ADD:
            continue
        if w is None or tuple(np.shape(w)) != layer.geometry.weight_shape:
            raise ShapeError("sampled weights do not match layer geometry")
    return list(weights)


def expected_weights(model: NetworkModel) -> list:
    return [None if l.weight is None else 2.0 * l.weight.prob() - 1.0 for l in model.layers]


# ----------------------------------------------------------------------------
# ANN mode
# ----------------------------------------------------------------------------

def preactivation(layer: LayerSpec, x, w=None, skip_in=None) -> np.ndarray:
    """Real-valued pre-activation ``a * (W x) + b`` (plus shortcut for residual layers)."""
    a, b = layer.bn.decode()
    cs = _channel_shape(layer)
    a, b = a.reshape(cs), b.reshape(cs)
    if layer.kind is LayerKind.RESIDUAL_ADD:
        if skip_in is None:
            raise ShapeError("residual layer needs two branch inputs")
        return a * np.asarray(x, dtype=np.float64) + _decode(layer.skip_a).reshape(cs) * skip_in + b
    if w is None:
        w = 2.0 * layer.weight.prob() - 1.0
    return a * weighted_sum(np.asarray(x), np.asarray(w), layer.geometry, layer.kind) + b


def layer_forward_ann(layer: LayerSpec, x, w=None, skip_in=None) -> np.ndarray:
    """Normalized quantized-ReLU output ``qrelu(v, theta, L) / theta`` in {0, 1/L, ..., 1}."""
    theta = layer.theta_value
    v = preactivation(layer, x, w, skip_in)
    return qrelu(v, theta, layer.L) / theta


def network_forward_ann(model: NetworkModel, x, weights=None, return_all: bool = False):
    """ANN forward over a batch ``(N, C, H, W)``; returns the final normalized output ``(N, classes)``."""
    x = _as_batch(model, x)
    weights = expected_weights(model) if weights is None else check_weights(model, weights)
    outs = []
    h = x
    for layer, w in zip(model.layers, weights):
        skip = outs[layer.skip] if layer.kind is LayerKind.RESIDUAL_ADD else None
        h = layer_forward_ann(layer, h, w, skip)
        outs.append(h)
    final = h.reshape(h.shape[0], -1)
    return (final, outs) if return_all else final


# ----------------------------------------------------------------------------
# SNN mode
# ----------------------------------------------------------------------------

@dataclass
class MembraneState:
    U: list
    steps: int = 0


def init_state(model: NetworkModel, batch: int) -> MembraneState:
    Us = []
    for layer in model.layers:
        rt = _runtime(layer)
        shape = (batch, *layer.geometry.out_shape)
        if layer.kind is LayerKind.BINARY_FC:
            shape = (batch, layer.geometry.out_channels)
        dtype = np.int64 if rt.integer else np.float64
        Us.append(np.full(shape, rt.u0, dtype=dtype))
    return MembraneState(Us)


@dataclass
class OpCounter:
    """Accumulate operations performed by the PE datapath (one per synapse visit)."""

    accumulates: int = 0
    per_layer: dict = field(default_factory=dict)

    def add(self, layer_index: int, n: int):
        self.accumulates += n
        self.per_layer[layer_index] = self.per_layer.get(layer_index, 0) + n


def layer_forward_snn_step(layer: LayerSpec, inp, U: np.ndarray, w=None, skip_in=None,
                           rt: _Runtime | None = None, current=None, ops: list | None = None):
    """One timestep of one layer; returns ``(spikes, U')``.

    ``inp`` is the analog frame for the encoder and a spike plane otherwise.
    A precomputed ``current`` (constant encoder drive) may be passed in.
    """
    if U is None:
        raise ModelError("membrane state not initialized")
    rt = rt or _runtime(layer)
    if current is None:
        if layer.kind is LayerKind.RESIDUAL_ADD:
            if skip_in is None:
                raise ShapeError("residual layer needs two branch inputs")
            acc = np.asarray(inp)
            I = _current(rt, acc, skip_in)
        else:
            I = _current(rt, weighted_sum(np.asarray(inp), np.asarray(w), layer.geometry,
                                          layer.kind, ops))
    else:
        I = current
    if I.shape != U.shape:
        raise ShapeError(f"current shape {I.shape} does not match state {U.shape}")
    spikes, U_new = if_step(U, I, rt.theta)
    if rt.integer:
        U_new = saturate_acc32(U_new)
    return spikes, U_new


@dataclass
class SnnResult:
    counts: np.ndarray  # (N, classes) output spike counts over T
    history: np.ndarray  # (T, N, classes) cumulative counts after each step
    layer_spikes: np.ndarray  # (T, layers) total spikes per layer per step over the batch
    state: MembraneState


def _as_batch(model: NetworkModel, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape == model.input_shape:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"input must have shape {model.input_shape}, got {x.shape}")
    return x


def network_forward_snn(model: NetworkModel, x, T: int, weights, counter: OpCounter | None = None,
                        trace: list | None = None) -> SnnResult:
    """Run ``T`` timesteps of the spiking network on a batch of analog frames.

    ``trace``, if given, receives one list of per-layer spike planes per step.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    x = _as_batch(model, x)
    weights = check_weights(model, weights)
    n = x.shape[0]
    rts = [_runtime(l) for l in model.layers]
    state = init_state(model, n)
    enc = model.layers[0]
    enc_ops = [0]  # the frame is constant, so one evaluation serves every step
    enc_current = _current(rts[0], weighted_sum(x.astype(np.float64), np.asarray(weights[0]),
                                                enc.geometry, enc.kind, enc_ops))
    k = len(model.layers)
    counts = np.zeros((n, model.class_count), dtype=np.int64)
    history = np.zeros((T, n, model.class_count), dtype=np.int64)
    layer_spikes = np.zeros((T, k), dtype=np.int64)
    for t in range(T):
        outs = []
        h = x
        for i, (layer, w, rt) in enumerate(zip(model.layers, weights, rts)):
            skip = outs[layer.skip] if layer.kind is LayerKind.RESIDUAL_ADD else None
            cur = enc_current if i == 0 else None
            ops = [enc_ops[0] if i == 0 else 0]
            h, state.U[i] = layer_forward_snn_step(layer, h, state.U[i], w, skip, rt, cur, ops)
            if counter is not None and layer.kind is not LayerKind.RESIDUAL_ADD:
                counter.add(i, ops[0])
            layer_spikes[t, i] = int(h.sum())
            outs.append(h)
        counts += outs[-1].reshape(n, -1).astype(np.int64)
        history[t] = counts
        if trace is not None:
            trace.append([o.astype(np.uint8) for o in outs])
        state.steps += 1
    return SnnResult(counts, history, layer_spikes, state)


def with_layers(model: NetworkModel, layers, **kw) -> NetworkModel:
    return replace(model, layers=list(layers), **kw)
