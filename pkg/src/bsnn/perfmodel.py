"""Clock and operation accounting for the PE array and the PRNG bank.

PE timing model: each of ``pe_count`` PEs handles one output filter and
consumes ``rows_per_clock`` kernel rows of one kernel column per clock, so a
window costs ``K_w * ceil(K_h / rows_per_clock)`` clocks per input channel.
Fully connected layers run as 1x1 convolutions over their flattened inputs.
Residual adds run in the neuron units and take no PE clocks.  PS-PL
transfer stalls are not modeled.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .netcore import CONV_KINDS, Geometry, LayerKind, NetworkModel

PE_COUNT = 64
ROWS_PER_CLOCK = 3
RNS_PER_CLOCK = 64
DEFAULT_FREQ_MHZ = 94.0


def conv_cycles(geometry: Geometry, pe_count: int = PE_COUNT, rows_per_clock: int = ROWS_PER_CLOCK,
                kind: LayerKind = LayerKind.BINARY_CONV) -> int:
    """Clocks for one timestep of one conv layer on one input."""
    if kind not in CONV_KINDS:
        raise ValueError(f"{kind.name} is not a convolution")
    c_in = geometry.in_shape[0]
    kh, kw = geometry.kernel
    ho, wo = geometry.out_hw
    return (math.ceil(geometry.out_channels / pe_count) * ho * wo * c_in * kw
            * math.ceil(kh / rows_per_clock))


def sampling_cycles(weight_count: int) -> int:
    if weight_count < 0:
        raise ValueError("weight count must be >= 0")
    return -(-weight_count // RNS_PER_CLOCK)


def layer_cycles(kind: LayerKind, geometry: Geometry, pe_count: int = PE_COUNT,
                 rows_per_clock: int = ROWS_PER_CLOCK) -> int:
    if kind is LayerKind.RESIDUAL_ADD:
        return 0
    if kind is LayerKind.BINARY_FC:
        g = Geometry((geometry.in_shape[0], 1, 1), geometry.out_channels)
        return conv_cycles(g, pe_count, rows_per_clock)
    return conv_cycles(geometry, pe_count, rows_per_clock, kind)


def layer_accumulates(kind: LayerKind, geometry: Geometry) -> int:
    """Accumulate operations (synapse visits) for one timestep on one input."""
    if kind is LayerKind.RESIDUAL_ADD:
        return 0
    if kind is LayerKind.BINARY_FC:
        return geometry.out_channels * geometry.in_shape[0]
    ho, wo = geometry.out_hw
    return geometry.out_channels * ho * wo * geometry.fan_in


@dataclass
class LayerCycles:
    index: int
    kind: str
    compute_clocks: int
    sample_clocks: int
    mac_ops: int


@dataclass
class CycleReport:
    total_clocks: int = 0
    mac_ops: int = 0
    weight_sample_clocks: int = 0
    assumed_freq_mhz: float = DEFAULT_FREQ_MHZ
    gops_estimate: float = 0.0
    T: int = 0
    n_mc: int = 0
    layers: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def gops(mac_ops: int, total_clocks: int, freq_mhz: float) -> float:
    if total_clocks == 0:
        return 0.0
    return mac_ops / total_clocks * freq_mhz * 1e-3


def model_report(model: NetworkModel, T: int, n_mc: int, freq_mhz: float = DEFAULT_FREQ_MHZ,
                 pe_count: int = PE_COUNT, rows_per_clock: int = ROWS_PER_CLOCK) -> CycleReport:
    """Cycle and op totals for one input evaluated with ``n_mc`` members of ``T`` steps.

    Each member resamples every weighted layer once; multiply and accumulate
    count as two operations.
    """
    rep = CycleReport(assumed_freq_mhz=float(freq_mhz), T=T, n_mc=n_mc)
    for i, layer in enumerate(model.layers):
        comp = layer_cycles(layer.kind, layer.geometry, pe_count, rows_per_clock) * T * n_mc
        samp = sampling_cycles(0 if layer.weight is None else layer.weight.size) * n_mc
        ops = 2 * layer_accumulates(layer.kind, layer.geometry) * T * n_mc
        rep.layers.append(LayerCycles(i, layer.kind.name, comp, samp, ops))
        rep.total_clocks += comp + samp
        rep.weight_sample_clocks += samp
        rep.mac_ops += ops
    rep.gops_estimate = gops(rep.mac_ops, rep.total_clocks, freq_mhz)
    return rep
