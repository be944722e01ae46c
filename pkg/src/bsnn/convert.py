"""Trained quantized-ReLU ANN -> spiking deployment model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bern import freeze
from .fxp import quantize_affine
from .netcore import (FoldedBn, Geometry, LayerKind, LayerSpec, ModelError, NetworkModel,
                      _runtime, fold_bn)


class ConversionError(ValueError):
    pass


@dataclass
class AnnLayer:
    """One trained layer: natural parameters, raw BN statistics and activation step."""

    kind: LayerKind
    geometry: Geometry
    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    s: float | None
    lam: np.ndarray | None = None
    bias: np.ndarray | None = None
    eps: float = 1e-5
    skip: int = -1

    def __post_init__(self):
        self.kind = LayerKind(self.kind)


@dataclass
class AnnCheckpoint:
    layers: list
    input_shape: tuple
    class_count: int
    L: int
    input_scale: float = 1.0 / 255.0  # real value of one input code unit
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)


def convert_to_snn(ann: AnnCheckpoint, T: int | None = None) -> NetworkModel:
    """Replace every quantized ReLU by an IF neuron.

    Per layer: ``theta = s``, BN folded to ``(a, b)`` with any bias pushed
    into ``b``, and the input's real scale (the previous layer's ``s``, or
    ``input_scale`` for the encoder) absorbed into ``a``.  One input spike
    then carries exactly one previous-layer step ``s`` of signal per
    timestep.
    """
    T = ann.L if T is None else int(T)
    if T < 1:
        raise ConversionError("T must be >= 1")
    if ann.L < 2:
        raise ConversionError("L must be >= 2")
    layers = []
    scales = []
    for i, al in enumerate(ann.layers):
        if al.s is None or not np.isfinite(al.s) or al.s <= 0:
            raise ConversionError(f"layer {i}: missing or invalid step size s")
        bn = fold_bn(al.gamma, al.beta, al.mu, al.var, al.eps)
        a, b = bn.a, bn.b
        if al.bias is not None:
            b = b + a * np.asarray(al.bias, dtype=np.float64)
        in_scale = ann.input_scale if i == 0 else scales[i - 1]
        skip_a = None
        weight = None
        if al.kind is LayerKind.RESIDUAL_ADD:
            skip_a = a * scales[al.skip]
        else:
            if al.lam is None:
                raise ConversionError(f"layer {i}: missing natural parameters")
            weight = freeze(al.lam)
        layers.append(LayerSpec(al.kind, al.geometry, FoldedBn(a * in_scale, b), float(al.s),
                                int(ann.L), float(al.s), weight, al.skip, skip_a))
        scales.append(float(al.s))
    return NetworkModel(layers, ann.input_shape, ann.class_count, default_T=T, deploy=False)


def quantize_layer(layer: LayerSpec) -> LayerSpec:
    if layer.quantized:
        return layer
    a, b = layer.bn.decode()
    skip_a = None if layer.skip_a is None else quantize_affine(layer.skip_a)
    return LayerSpec(layer.kind, layer.geometry, FoldedBn(quantize_affine(a), quantize_affine(b)),
                     quantize_affine([layer.theta_value]), layer.L, layer.s, layer.weight,
                     layer.skip, skip_a)


def quantize_model(model: NetworkModel) -> NetworkModel:
    """8-bit deployment form: BN pairs, thresholds and shortcut gains as QAffine.

    Weights are already 8-bit probability codes after :func:`freeze`.
    """
    if model.deploy:
        return model
    layers = []
    for i, layer in enumerate(model.layers):
        q = quantize_layer(layer)
        if q.theta_value <= 0:
            raise ConversionError(f"layer {i}: threshold quantized to zero")
        try:
            _runtime(q)
        except ModelError as exc:
            raise ConversionError(f"layer {i}: {exc}") from None
        layers.append(q)
    return NetworkModel(layers, model.input_shape, model.class_count, model.default_T,
                        model.default_nmc, deploy=True)
