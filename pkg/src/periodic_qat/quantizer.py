"""Threshold and uniform quantizers, bit/frequency conversion, lattice quantization.

Uniform quantizers round half-to-even (``np.rint``) and return float32
values, the storage precision of model weights. Scales are float64.
Rounding a float64 lattice value to float32 keeps the slab maximum ``c``
exact, which makes every quantizer here idempotent bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np

from .nn import WeightSlab
from .regularizer import slab_scale

SCHEME_KINDS = ("binary", "ternary", "symmetric", "asymmetric", "lattice")


class DomainError(ValueError):
    pass


def _family(kind):
    if kind in ("sine_or_hat", "sine", "hat"):
        return "sine_or_hat"
    if kind == "cosine":
        return "cosine"
    raise DomainError(f"unknown frequency family {kind!r}")


def bits_to_frequency(t, kind="sine_or_hat"):
    t = int(t)
    if _family(kind) == "sine_or_hat":
        if t < 2:
            raise DomainError("sine/hat lattices need at least 2 bits")
        return 2 ** (t - 1) - 1
    if t < 1:
        raise DomainError("cosine lattices need at least 1 bit")
    return 2 ** (t - 1)


def frequency_to_bits(frequency, kind="sine_or_hat"):
    # ceil(log2(x)) == (x - 1).bit_length() for integers x >= 1, so both
    # conversions stay in exact integer arithmetic
    f = int(frequency)
    if f < 1:
        raise DomainError("frequency must be >= 1")
    if _family(kind) == "sine_or_hat":
        return f.bit_length() + 1  # ceil(log2(f + 1) + 1)
    return (f - 1).bit_length() + 1  # ceil(log2(f) + 1)


def quantize_binary(w, eps=0.0):
    q = np.where(np.asarray(w) < eps, -1.0, 1.0)
    return q if q.ndim else float(q)


def quantize_ternary(w, eps1, eps2):
    if eps1 > eps2:
        raise DomainError(f"ternary thresholds need eps1 <= eps2, got {eps1} > {eps2}")
    w = np.asarray(w)
    q = np.where(w < eps1, -1.0, np.where(w > eps2, 1.0, 0.0))
    return q if q.ndim else float(q)


def code_dtype(t):
    if t <= 8:
        return np.int8
    if t <= 16:
        return np.int16
    return np.int32


@dataclass(eq=False)
class QuantizedSlab:
    """Integer codes with ``value = code * scale + bias``."""

    codes: np.ndarray
    scale: float
    bias: float
    t: int
    frequency: int = 0
    lattice: str = "sine_or_hat"

    @property
    def shape(self):
        return self.codes.shape

    def levels(self):
        return np.unique(self.codes).size


def dequantize(q):
    values = q.codes.astype(np.float64) * q.scale + q.bias
    return values.astype(np.float32)


def _values(slab):
    data = slab.tensor if isinstance(slab, WeightSlab) else slab
    v = np.asarray(data, dtype=np.float32)
    if v.size == 0:
        raise DomainError("slab is empty")
    return v.astype(np.float64)


def _uniform(v, scale, limit, t, frequency=0, lattice="sine_or_hat"):
    codes = np.clip(np.rint(v / scale), -limit, limit)
    return QuantizedSlab(codes.astype(code_dtype(t)), float(scale), 0.0, t, frequency, lattice)


def quantize_symmetric(slab, t):
    """Uniform quantization on ``[-c, c]`` with step ``c / (2^(t-1) - 1)``."""
    if t < 2:
        raise DomainError("symmetric quantization needs t >= 2")
    v = _values(slab)
    kmax = 2 ** (t - 1) - 1
    return _uniform(v, slab_scale(v) / kmax, kmax, t, kmax)


def quantize_asymmetric(slab, t):
    """Uniform quantization about the midpoint ``s`` with step ``d / (2^t - 2)``.

    With ``d = (b - a) / 2`` the codes span ``[-(2^t - 2), 2^t - 2]``.
    """
    if t < 2:
        raise DomainError("asymmetric quantization needs t >= 2")
    v = _values(slab)
    a, b = float(v.min()), float(v.max())
    s = (a + b) / 2
    d = (b - a) / 2
    if d == 0:
        return QuantizedSlab(np.zeros(v.shape, dtype=np.int32), 1.0, s, t)
    kmax = 2**t - 2
    codes = np.clip(np.rint((v - s) / (d / kmax)), -kmax, kmax)
    # codes need t + 1 signed bits
    return QuantizedSlab(codes.astype(code_dtype(t + 1)), d / kmax, s, t)


def quantize_lattice(slab, frequency, kind="sine_or_hat"):
    """Snap a slab onto the zero set of the periodic regularizer.

    ``sine_or_hat``: points ``k c / f`` for ``|k| <= f`` (``2f + 1`` levels).
    ``cosine``: midpoints ``(k + 1/2) c / f`` for ``-f <= k < f`` (``2f`` levels,
    zero excluded).
    """
    if frequency < 1:
        raise DomainError("frequency must be >= 1")
    v = _values(slab)
    c = slab_scale(v)
    step = c / frequency
    if _family(kind) == "sine_or_hat":
        t = frequency_to_bits(frequency, "sine_or_hat")
        return _uniform(v, step, frequency, t, frequency, "sine_or_hat")
    t = frequency_to_bits(frequency, "cosine")
    codes = np.clip(np.floor(v / step), -frequency, frequency - 1)
    return QuantizedSlab(codes.astype(code_dtype(t)), float(step), float(step) / 2, t, frequency, "cosine")


def quantize_model_lattice(model, frequency, kind="sine_or_hat"):
    """Per-slab lattice quantization of every conv and dense weight slab."""
    return {s.name: quantize_lattice(s, frequency, kind) for s in model.penalized_slabs()}


def apply_quantized(model, quantized):
    """Copy of ``model`` with the given slabs replaced by their dequantized values."""
    out = model.copy()
    for name, q in quantized.items():
        out.slab(name).tensor = dequantize(q)
    return out


def quantized_model(model, frequency, kind="sine_or_hat"):
    return apply_quantized(model, quantize_model_lattice(model, frequency, kind))


@dataclass(frozen=True)
class QuantScheme:
    kind: str
    t: int = 8
    eps1: float = 0.0
    eps2: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise DomainError(f"kind must be one of {SCHEME_KINDS}")
        if self.kind == "ternary" and self.eps1 > self.eps2:
            raise DomainError("ternary thresholds need eps1 <= eps2")
        if self.kind in ("symmetric", "asymmetric", "lattice") and self.t < 2:
            raise DomainError(f"{self.kind} quantization needs t >= 2")

    def derive(self, slab):
        """Per-slab range quantities ``a, b, c, d, s`` and the two step sizes."""
        v = _values(slab)
        a, b = float(v.min()), float(v.max())
        c = max(abs(a), abs(b))
        d = (b - a) / 2
        return {
            "a": a, "b": b, "c": c, "d": d, "s": (a + b) / 2,
            "gamma": c / (2 ** (self.t - 1) - 1) if self.t >= 2 else None,
            "delta": d / (2**self.t - 2) if self.t >= 2 else None,
        }

    def apply(self, slab):
        """Quantized values (float32) of ``slab`` under this scheme."""
        if self.kind == "binary":
            return quantize_binary(_values(slab), self.eps1).astype(np.float32)
        if self.kind == "ternary":
            return quantize_ternary(_values(slab), self.eps1, self.eps2).astype(np.float32)
        if self.kind == "symmetric":
            return dequantize(quantize_symmetric(slab, self.t))
        if self.kind == "asymmetric":
            return dequantize(quantize_asymmetric(slab, self.t))
        return dequantize(quantize_lattice(slab, bits_to_frequency(self.t)))
