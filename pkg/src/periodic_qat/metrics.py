"""Quantization-quality measurements: lattice distance, histograms, accuracy drop."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .quantizer import bits_to_frequency, dequantize, quantize_lattice, quantized_model
from .regularizer import slab_scale


def slab_lattice_distance(slab, frequency, kind="sine_or_hat"):
    """Mean ``|w - Q(w)|`` in units of the lattice step ``c / frequency``."""
    w = np.asarray(slab.tensor, dtype=np.float64)
    q = dequantize(quantize_lattice(slab, frequency, kind)).astype(np.float64)
    step = slab_scale(w) / frequency
    return float(np.mean(np.abs(w - q)) / step)


def lattice_distances(model, frequency, kind="sine_or_hat"):
    return {s.name: slab_lattice_distance(s, frequency, kind) for s in model.penalized_slabs()}


def lattice_distance(model, frequency, kind="sine_or_hat"):
    """Mean over conv/dense weight slabs of the normalized lattice distance, in ``[0, 0.5]``."""
    per_slab = lattice_distances(model, frequency, kind)
    if not per_slab:
        return 0.0
    return float(np.mean(list(per_slab.values())))


@dataclass(frozen=True)
class HistogramSpec:
    bins: int = 64

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("histograms need at least 2 bins")


def weight_histogram(slab, spec=HistogramSpec()):
    """``[(bin_center, count), ...]`` over ``[-c, c]`` with uniform bins."""
    w = np.asarray(getattr(slab, "tensor", slab), dtype=np.float64).ravel()
    c = slab_scale(w)
    counts, edges = np.histogram(w, bins=spec.bins, range=(-c, c))
    centers = (edges[:-1] + edges[1:]) / 2
    return [(float(x), int(n)) for x, n in zip(centers, counts)]


def lattice_mass(slab, frequency, width=0.25):
    """Fraction of weights within ``width`` lattice steps of a lattice point."""
    w = np.asarray(slab.tensor, dtype=np.float64)
    phase = w / (slab_scale(w) / frequency)
    return float(np.mean(np.abs(phase - np.rint(phase)) <= width))


@dataclass
class QuantReport:
    baseline_error: float
    quantized_error: float
    drop: float
    t: int
    frequency: int
    kind: str
    baseline_loss: float = 0.0
    quantized_loss: float = 0.0
    lattice_distances: dict = field(default_factory=dict)
    sine_lattice_distances: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["schema"] = "periodic-qat/quant-report/1"
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def quantization_report(model, test_set, t, kind="sine_or_hat"):
    """Error before and after lattice quantization at ``t`` bits; ``model`` is left untouched."""
    from .trainer import evaluate

    frequency = bits_to_frequency(t, kind)
    base_err, base_loss = evaluate(model, test_set)
    qmodel = quantized_model(model, frequency, kind)
    q_err, q_loss = evaluate(qmodel, test_set)
    family = "cosine" if kind == "cosine" else "sine_or_hat"
    report = QuantReport(
        baseline_error=base_err,
        quantized_error=q_err,
        drop=q_err - base_err,
        t=int(t),
        frequency=frequency,
        kind=family,
        baseline_loss=base_loss,
        quantized_loss=q_loss,
        lattice_distances=lattice_distances(model, frequency, family),
    )
    if family == "cosine":
        # the two lattices differ by half a step, so report both
        report.sine_lattice_distances = lattice_distances(model, frequency, "sine_or_hat")
    return report
