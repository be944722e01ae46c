"""Bit-exact inference and accounting for Bayesian spiking networks with Bernoulli weights."""

from .bayes import PredictionRecord, combine, mc_inference, sweep
from .bern import BernoulliTensor, bern_param, freeze
from .convert import AnnCheckpoint, AnnLayer, ConversionError, convert_to_snn, quantize_model
from .metrics import EceReport, accuracy, ece, spike_stats
from .modelio import load_checkpoint, load_dataset, load_model, save_checkpoint, save_model
from .netcore import Geometry, LayerKind, LayerSpec, NetworkModel, network_forward_snn, qrelu
from .perfmodel import conv_cycles, model_report, sampling_cycles
from .prng import LfsrBank, RngScheme, bank_draw64, bank_init, lfsr_step

__version__ = "0.1.0"
