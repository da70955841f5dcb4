"""Periodic weight penalties (sine², cosine², hat) and their gradients.

Each penalty is evaluated on ``w / c`` where ``c`` is the largest weight
magnitude of the slab, so ``frequency`` counts periods per unit of the
normalized weight. The per-slab scale ``c`` is treated as a constant when
differentiating.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .nn import WeightSlab

KINDS = ("sine", "cosine", "hat")


class NoEligibleSlabsWarning(UserWarning):
    pass


class DegenerateAmplitudeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = "sine"
    amplitude: float = 1.0
    frequency: int = 1
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.frequency) != self.frequency or self.frequency < 1:
            raise ValueError(f"frequency must be a positive integer, got {self.frequency}")
        if not self.amplitude >= 0:
            raise ValueError(f"amplitude must be non-negative, got {self.amplitude}")


@dataclass
class PenaltyReport:
    total: float = 0.0
    per_slab: dict = field(default_factory=dict)  # name -> (penalty, c)

    @property
    def empty(self):
        return not self.per_slab


def _values(w):
    data = w.tensor if isinstance(w, WeightSlab) else w
    return np.asarray(data, dtype=np.float64)


def slab_scale(w):
    """Largest absolute weight; an all-zero slab gets scale 1 (already on the lattice)."""
    v = _values(w)
    if v.size == 0:
        raise ValueError("slab is empty")
    c = float(np.max(np.abs(v)))
    return c if c > 0 else 1.0


def _normalized(w, c=None):
    v = _values(w)
    if c is None:
        c = slab_scale(v)
    return v / c, c


def penalty_terms(w, cfg, c=None):
    """Elementwise penalty values (float64 array shaped like ``w``)."""
    u, _ = _normalized(w, c)
    a, f = cfg.amplitude, cfg.frequency
    if cfg.kind == "sine":
        return a * np.sin(np.pi * f * u) ** 2
    if cfg.kind == "cosine":
        return a * np.cos(np.pi * f * u) ** 2
    # hat: triangle wave with zeros on {k/f}, peaks of height `a` halfway between
    frac = np.mod(f * u - 0.5, 1.0)
    return a * np.abs(frac * 2 - 1)


def penalty_grad(w, cfg, c=None):
    """Analytic derivative of the summed penalty with respect to each weight."""
    u, c = _normalized(w, c)
    a, f = cfg.amplitude, cfg.frequency
    if cfg.kind == "sine":
        return a * (np.pi * f / c) * np.sin(2 * np.pi * f * u)
    if cfg.kind == "cosine":
        return -a * (np.pi * f / c) * np.sin(2 * np.pi * f * u)
    frac = np.mod(f * u - 0.5, 1.0)
    slope = frac * 2 - 1
    g = a * (2.0 * f / c) * np.sign(slope)
    # the gradient is undefined at minima (slope 0) and maxima (frac 0); use 0
    g[(slope == 0) | (frac == 0)] = 0.0
    return g


def penalty(w, cfg, c=None):
    return math.fsum(penalty_terms(w, cfg, c).ravel())


def _require(cfg, kind):
    if cfg.kind != kind:
        raise ValueError(f"expected a {kind} config, got {cfg.kind}")


def sine_penalty(w, cfg):
    _require(cfg, "sine")
    return penalty(w, cfg)


def sine_penalty_grad(w, cfg):
    _require(cfg, "sine")
    return penalty_grad(w, cfg)


def cosine_penalty(w, cfg):
    _require(cfg, "cosine")
    return penalty(w, cfg)


def cosine_penalty_grad(w, cfg):
    _require(cfg, "cosine")
    return penalty_grad(w, cfg)


def hat_penalty(w, cfg):
    _require(cfg, "hat")
    return penalty(w, cfg)


def hat_penalty_grad(w, cfg):
    _require(cfg, "hat")
    return penalty_grad(w, cfg)


def normalization_constant(cfg, num_weights):
    """Constant ``g`` with ``g * R(w)`` in ``[0, 1]``: every term is at most ``amplitude``."""
    if num_weights < 1:
        raise ValueError("num_weights must be >= 1")
    if cfg.amplitude == 0:
        warnings.warn("normalization constant undefined for amplitude 0; using 1", DegenerateAmplitudeWarning)
        return 1.0
    return 1.0 / (cfg.amplitude * num_weights)


def zero_points(kind, frequency):
    """Normalized positions ``w/c`` in ``[-1, 1]`` where the penalty vanishes."""
    f = frequency
    if kind in ("sine", "hat"):
        return np.arange(-f, f + 1) / f
    if kind == "cosine":
        return (2 * np.arange(-f, f) + 1) / (2 * f)
    raise ValueError(f"unknown kind {kind!r}")


def model_penalty(model, cfg):
    """Penalty summed over conv-filter and dense-weight slabs, each with its own ``c``."""
    report = PenaltyReport()
    slabs = model.penalized_slabs()
    if not slabs:
        warnings.warn("model has no conv or dense weight slabs", NoEligibleSlabsWarning)
        return report
    for slab in slabs:
        c = slab_scale(slab)
        report.per_slab[slab.name] = (penalty(slab, cfg, c), c)
    report.total = math.fsum(v for v, _ in report.per_slab.values())
    return report


def model_penalty_grads(model, cfg):
    return {slab.name: penalty_grad(slab, cfg) for slab in model.penalized_slabs()}


def penalized_weight_count(model):
    return sum(s.size for s in model.penalized_slabs())
