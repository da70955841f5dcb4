"""Quantization-aware training with periodic (sine², cosine², hat) weight regularizers."""

from ._backend import current as backend
from ._backend import set_backend
from .data import Dataset, generate_synthetic, load_idx
from .nn import Model, WeightSlab, mlp_spec
from .quantizer import (
    QuantizedSlab,
    QuantScheme,
    bits_to_frequency,
    dequantize,
    frequency_to_bits,
    quantize_model_lattice,
)
from .regularizer import RegularizerConfig, model_penalty
from .trainer import AmplitudeSchedule, TrainConfig, amplitude_at, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AmplitudeSchedule", "Dataset", "Model", "QuantScheme", "QuantizedSlab", "RegularizerConfig", "TrainConfig",
    "WeightSlab", "amplitude_at", "backend", "bits_to_frequency", "dequantize", "evaluate", "frequency_to_bits",
    "generate_synthetic", "load_idx", "mlp_spec", "model_penalty", "quantize_model_lattice", "set_backend", "train",
]
