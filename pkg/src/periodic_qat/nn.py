"""Minimal forward/backward engine: dense, conv2d, batch norm, ReLU, max-pool.

Layouts follow the usual column convention for fully connected layers:
activations are ``[features, batch]``. Convolutions work on
``[batch, height, width, channels]`` images and filters are
``[m, n, c_in, c_out]``. Parameters are stored as float32; every reduction
is carried out in float64 by the selected kernel backend and rounded back to
the storage dtype of the inputs.
"""

import copy
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import _backend

SLAB_KINDS = (
    "conv-filter",
    "dense-weight",
    "dense-bias",
    "bn-scale",
    "bn-bias",
    "bn-running-mean",
    "bn-running-denom",
)
PENALIZED_KINDS = ("conv-filter", "dense-weight")
LAYER_KINDS = ("dense", "conv2d", "batchnorm", "relu", "flatten")


class DimensionError(ValueError):
    pass


class BatchSizeError(ValueError):
    pass


class LabelError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(eq=False)
class WeightSlab:
    """A named parameter array with its gradient and momentum buffers."""

    name: str
    tensor: np.ndarray
    kind: str
    grad: np.ndarray = None
    velocity: np.ndarray = None

    def __post_init__(self):
        if self.kind not in SLAB_KINDS:
            raise ValueError(f"unknown slab kind {self.kind!r}")
        self.tensor = np.ascontiguousarray(self.tensor, dtype=np.float32)
        if self.grad is None:
            self.grad = np.zeros_like(self.tensor)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.tensor)
        if self.grad.shape != self.tensor.shape:
            raise DimensionError(f"{self.name}: grad shape {self.grad.shape} != {self.tensor.shape}")

    @property
    def shape(self):
        return self.tensor.shape

    @property
    def size(self):
        return self.tensor.size

    @property
    def trainable(self):
        return not self.kind.startswith("bn-running")

    @property
    def penalized(self):
        return self.kind in PENALIZED_KINDS


def _data(a):
    return a.tensor if isinstance(a, WeightSlab) else np.asarray(a)


def _storage_dtype(*arrays):
    if any(np.asarray(a).dtype == np.float64 for a in arrays):
        return np.float64
    return np.float32


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _finite(out, op):
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


# ---------------------------------------------------------------------------
# dense

def dense_forward(x, W, b):
    """``Y = W X + b e^T`` for ``x`` of shape ``[n, r]``."""
    x, W, b = np.asarray(x), _data(W), _data(b)
    if x.ndim != 2 or W.ndim != 2 or b.shape != (W.shape[0],) or W.shape[1] != x.shape[0]:
        raise DimensionError(f"dense: W{W.shape} x{x.shape} b{b.shape} do not conform")
    if x.shape[1] < 1:
        raise DimensionError("dense: empty batch")
    y = _backend.kernels.dense_forward(_f64(W), _f64(x), _f64(b))
    with np.errstate(over="ignore"):
        y = y.astype(_storage_dtype(x, W, b))
    return _finite(y, "dense_forward")


def dense_backward(grad_out, x, W):
    g, x, W = np.asarray(grad_out), np.asarray(x), _data(W)
    if g.shape != (W.shape[0], x.shape[1]) or W.shape[1] != x.shape[0]:
        raise DimensionError(f"dense backward: grad{g.shape} x{x.shape} W{W.shape} do not conform")
    dt = _storage_dtype(g, x, W)
    gx, gW, gb = _backend.kernels.dense_backward(_f64(g), _f64(x), _f64(W))
    return gx.astype(dt), gW.astype(dt), gb.astype(dt)


# ---------------------------------------------------------------------------
# conv2d (valid cross-correlation)

def conv_output_extent(h, w, m, n, strides):
    s1, s2 = strides
    if s1 < 1 or s2 < 1:
        raise DimensionError(f"strides must be >= 1, got {strides}")
    if h < m or w < n or (h - m) % s1 or (w - n) % s2:
        raise DimensionError(
            f"conv: input {h}x{w} with filter {m}x{n} and strides {strides} "
            "does not give integral output extents")
    return (h - m) // s1 + 1, (w - n) // s2 + 1


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"conv input must be [h,w,c] or [r,h,w,c], got {x.shape}")


def conv2d_forward(x, filters, strides=(1, 1)):
    """Cross-correlate ``x`` with ``filters`` (no kernel flip, no padding)."""
    F = _data(filters)
    xb, single = _as_batch(x)
    if F.ndim != 4 or F.shape[2] != xb.shape[3]:
        raise DimensionError(f"conv: filters {F.shape} do not match input channels {xb.shape[3]}")
    conv_output_extent(xb.shape[1], xb.shape[2], F.shape[0], F.shape[1], strides)
    y = _backend.kernels.conv2d_forward(_f64(xb), _f64(F), int(strides[0]), int(strides[1]))
    y = _finite(y.astype(_storage_dtype(xb, F)), "conv2d_forward")
    return y[0] if single else y


def conv2d_backward(grad_out, x, filters, strides=(1, 1)):
    F = _data(filters)
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    ho, wo = conv_output_extent(xb.shape[1], xb.shape[2], F.shape[0], F.shape[1], strides)
    if gb.shape != (xb.shape[0], ho, wo, F.shape[3]):
        raise DimensionError(f"conv backward: grad {gb.shape} does not match output extents")
    dt = _storage_dtype(gb, xb, F)
    gx, gF = _backend.kernels.conv2d_backward(_f64(gb), _f64(xb), _f64(F), int(strides[0]), int(strides[1]))
    gx = gx.astype(dt)
    return (gx[0] if single else gx), gF.astype(dt)


def maxpool2x2_forward(x):
    r, h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"2x2 max-pool needs even extents, got {h}x{w}")
    return x.reshape(r, h // 2, 2, w // 2, 2, c).max(axis=(2, 4))


def maxpool2x2_backward(grad_out, x):
    r, h, w, c = x.shape
    blocks = x.reshape(r, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(r, h // 2, w // 2, c, 4)
    # ties route the gradient to the first maximal element
    first = np.argmax(blocks, axis=-1)
    mask = np.zeros_like(blocks)
    np.put_along_axis(mask, first[..., None], 1, axis=-1)
    g = mask * grad_out[..., None]
    return g.reshape(r, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(r, h, w, c)


# ---------------------------------------------------------------------------
# batch normalization over [features, batch]

def batchnorm_stats(x, eps=1e-5, normalize_variance=True):
    """Per-feature ``(mean, denom)`` such that the normalized value is ``(x - mean) / denom``.

    The centering stage is ``X (I - ee^T/r) / sqrt(r)``; with
    ``normalize_variance`` the centered rows are further divided by
    ``sqrt(var + eps)``, otherwise ``denom`` is just ``sqrt(r)``.
    """
    x = _f64(x)
    r = x.shape[1]
    mean = x.mean(axis=1)
    denom = np.full(x.shape[0], math.sqrt(r))
    if normalize_variance:
        centered = (x - mean[:, None]) / math.sqrt(r)
        denom = denom * np.sqrt((centered**2).mean(axis=1) + eps)
    return mean, denom


def batchnorm_center(x):
    """Centering stage alone: ``(1/sqrt(r)) X (I - (1/r) e e^T)``."""
    x = _f64(x)
    return (x - x.mean(axis=1, keepdims=True)) / math.sqrt(x.shape[1])


def batchnorm_forward(x, scale, bias, eps=1e-5, normalize_variance=True):
    x, s, b = np.asarray(x), _data(scale), _data(bias)
    if x.ndim != 2 or s.shape != (x.shape[0],) or b.shape != (x.shape[0],):
        raise DimensionError(f"batchnorm: x{x.shape} scale{s.shape} bias{b.shape} do not conform")
    if x.shape[1] < 2:
        raise BatchSizeError("batch norm in training mode needs a batch of at least 2")
    mean, denom = batchnorm_stats(x, eps, normalize_variance)
    xhat = (_f64(x) - mean[:, None]) / denom[:, None]
    y = _f64(s)[:, None] * xhat + _f64(b)[:, None]
    return _finite(y.astype(_storage_dtype(x, s, b)), "batchnorm_forward")


def batchnorm_backward(grad_out, x, scale, eps=1e-5, normalize_variance=True):
    """Returns ``(grad_x, grad_scale, grad_bias)`` for training-mode batch norm."""
    g, x, s = _f64(grad_out), np.asarray(x), _data(scale)
    dt = _storage_dtype(grad_out, x, s)
    r = x.shape[1]
    mean, denom = batchnorm_stats(x, eps, normalize_variance)
    xhat = (_f64(x) - mean[:, None]) / denom[:, None]
    grad_scale = (g * xhat).sum(axis=1)
    grad_bias = g.sum(axis=1)
    dxhat = g * _f64(s)[:, None]
    if normalize_variance:
        sigma = denom / math.sqrt(r)
        dc = (dxhat - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) / sigma[:, None]
    else:
        dc = dxhat
    gx = (dc - dc.mean(axis=1, keepdims=True)) / math.sqrt(r)
    return gx.astype(dt), grad_scale.astype(dt), grad_bias.astype(dt)


# ---------------------------------------------------------------------------
# activations and loss

def relu_forward(x):
    return np.maximum(x, 0).astype(np.asarray(x).dtype)


def relu_backward(grad_out, x):
    return np.where(np.asarray(x) > 0, grad_out, 0).astype(np.asarray(grad_out).dtype)


def _log_softmax(logits):
    z = _f64(logits)
    z = z - z.max(axis=0, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=0, keepdims=True))


def _check_labels(labels, k, r):
    labels = np.asarray(labels)
    if labels.shape != (r,):
        raise DimensionError(f"expected {r} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    return labels.astype(np.int64)


def per_sample_xent(logits, labels):
    logp = _log_softmax(logits)
    labels = _check_labels(labels, logp.shape[0], logp.shape[1])
    return -logp[labels, np.arange(labels.size)]


def softmax_xent_loss(logits, labels):
    """Mean cross-entropy of ``logits[k, r]``; gradient is ``(softmax - onehot) / r``."""
    logp = _log_softmax(logits)
    k, r = logp.shape
    labels = _check_labels(labels, k, r)
    cols = np.arange(r)
    loss = float(-logp[labels, cols].sum() / r)
    grad = np.exp(logp)
    grad[labels, cols] -= 1.0
    grad /= r
    return loss, grad.astype(_storage_dtype(logits))


def sgd_step(slabs, learning_rate, momentum=0.0):
    """``v <- mu v + g``, ``w <- w - lr v``; gradients are zeroed afterwards."""
    for slab in slabs:
        if not slab.trainable:
            continue
        v = momentum * slab.velocity.astype(np.float64) + slab.grad.astype(np.float64)
        slab.velocity = v.astype(slab.tensor.dtype)
        w = slab.tensor.astype(np.float64) - learning_rate * slab.velocity.astype(np.float64)
        slab.tensor = w.astype(slab.tensor.dtype)
        slab.grad = np.zeros_like(slab.tensor)


# ---------------------------------------------------------------------------
# layers

class Dense:
    def __init__(self, name, in_features, out_features):
        self.name = name
        self.weight = WeightSlab(f"{name}.weight", np.zeros((out_features, in_features)), "dense-weight")
        self.bias = WeightSlab(f"{name}.bias", np.zeros(out_features), "dense-bias")
        self._x = None

    def slabs(self):
        return [self.weight, self.bias]

    def init(self, rng):
        bound = math.sqrt(6.0 / self.weight.shape[1])
        self.weight.tensor = rng.uniform(-bound, bound, self.weight.shape).astype(np.float32)

    def forward(self, x, training):
        self._x = x
        return dense_forward(x, self.weight, self.bias)

    def backward(self, g):
        gx, gW, gb = dense_backward(g, self._x, self.weight)
        self.weight.grad += gW
        self.bias.grad += gb
        return gx


class Conv2D:
    def __init__(self, name, filter_shape, in_channels, out_channels, strides=(1, 1), pool=False):
        m, n = filter_shape
        self.name = name
        self.strides = tuple(strides)
        self.pool = pool
        self.weight = WeightSlab(f"{name}.weight", np.zeros((m, n, in_channels, out_channels)), "conv-filter")
        self._x = self._y = None

    def slabs(self):
        return [self.weight]

    def init(self, rng):
        m, n, c, _ = self.weight.shape
        bound = math.sqrt(6.0 / (m * n * c))
        self.weight.tensor = rng.uniform(-bound, bound, self.weight.shape).astype(np.float32)

    def forward(self, x, training):
        self._x = x
        y = conv2d_forward(x, self.weight, self.strides)
        self._y = y
        return maxpool2x2_forward(y) if self.pool else y

    def backward(self, g):
        if self.pool:
            g = maxpool2x2_backward(g, self._y)
        gx, gF = conv2d_backward(g, self._x, self.weight, self.strides)
        self.weight.grad += gF
        return gx


class BatchNorm:
    def __init__(self, name, features, eps=1e-5, normalize_variance=True, momentum=0.1):
        self.name = name
        self.eps = eps
        self.normalize_variance = normalize_variance
        self.momentum = momentum
        self.scale = WeightSlab(f"{name}.scale", np.ones(features), "bn-scale")
        self.bias = WeightSlab(f"{name}.bias", np.zeros(features), "bn-bias")
        self.running_mean = WeightSlab(f"{name}.running_mean", np.zeros(features), "bn-running-mean")
        self.running_denom = WeightSlab(f"{name}.running_denom", np.ones(features), "bn-running-denom")
        self._x = None

    def slabs(self):
        return [self.scale, self.bias, self.running_mean, self.running_denom]

    def init(self, rng):
        pass

    def forward(self, x, training):
        if not training:
            xhat = (_f64(x) - _f64(self.running_mean.tensor)[:, None]) / _f64(self.running_denom.tensor)[:, None]
            y = _f64(self.scale.tensor)[:, None] * xhat + _f64(self.bias.tensor)[:, None]
            return _finite(y.astype(np.float32), "batchnorm_forward")
        y = batchnorm_forward(x, self.scale, self.bias, self.eps, self.normalize_variance)
        self._x = x
        mean, denom = batchnorm_stats(x, self.eps, self.normalize_variance)
        mu = self.momentum
        self.running_mean.tensor = ((1 - mu) * self.running_mean.tensor + mu * mean).astype(np.float32)
        self.running_denom.tensor = ((1 - mu) * self.running_denom.tensor + mu * denom).astype(np.float32)
        return y

    def backward(self, g):
        gx, gs, gb = batchnorm_backward(g, self._x, self.scale, self.eps, self.normalize_variance)
        self.scale.grad += gs
        self.bias.grad += gb
        return gx


class ReLU:
    def __init__(self, name):
        self.name = name
        self._x = None

    def slabs(self):
        return []

    def init(self, rng):
        pass

    def forward(self, x, training):
        self._x = x
        return relu_forward(x)

    def backward(self, g):
        return relu_backward(g, self._x)


class Flatten:
    """``[r, h, w, c]`` images to ``[h*w*c, r]`` feature columns."""

    def __init__(self, name):
        self.name = name
        self._shape = None

    def slabs(self):
        return []

    def init(self, rng):
        pass

    def forward(self, x, training):
        self._shape = x.shape
        return np.ascontiguousarray(x.reshape(x.shape[0], -1).T)

    def backward(self, g):
        return np.ascontiguousarray(g.T).reshape(self._shape)


# ---------------------------------------------------------------------------
# model

def _build_layer(idx, spec, shape):
    """Instantiate one layer and return it with its output shape (per sample)."""
    kind = spec.get("kind")
    name = f"{kind}{idx}"
    if kind == "dense":
        if len(shape) != 1 or shape[0] != spec["in"]:
            raise DimensionError(f"{name}: expects {spec['in']} input features, got shape {shape}")
        return Dense(name, spec["in"], spec["out"]), (spec["out"],)
    if kind == "conv2d":
        if len(shape) != 3:
            raise DimensionError(f"{name}: expects an [h, w, c] input, got {shape}")
        m, n = spec["filter"]
        strides = tuple(spec.get("strides", (1, 1)))
        if shape[2] != spec["in_channels"]:
            raise DimensionError(f"{name}: expects {spec['in_channels']} channels, got {shape[2]}")
        ho, wo = conv_output_extent(shape[0], shape[1], m, n, strides)
        pool = bool(spec.get("pool", False))
        if pool:
            if ho % 2 or wo % 2:
                raise DimensionError(f"{name}: 2x2 pooling needs even extents, got {ho}x{wo}")
            ho, wo = ho // 2, wo // 2
        layer = Conv2D(name, (m, n), spec["in_channels"], spec["out_channels"], strides, pool)
        return layer, (ho, wo, spec["out_channels"])
    if kind == "batchnorm":
        if len(shape) != 1:
            raise DimensionError(f"{name}: batch norm operates on feature vectors, got {shape}")
        layer = BatchNorm(name, shape[0], spec.get("eps", 1e-5), spec.get("normalize_variance", True),
                          spec.get("momentum", 0.1))
        return layer, shape
    if kind == "relu":
        return ReLU(name), shape
    if kind == "flatten":
        return Flatten(name), (int(np.prod(shape)),)
    raise ValueError(f"unknown layer kind {kind!r}")


def mlp_spec(in_features, hidden, classes):
    layers = []
    prev = in_features
    for width in hidden:
        layers += [{"kind": "dense", "in": prev, "out": width}, {"kind": "relu"}]
        prev = width
    layers.append({"kind": "dense", "in": prev, "out": classes})
    return {"input_shape": [in_features], "layers": layers}


class Model:
    """A feed-forward stack of layers built from a JSON-compatible spec.

    ``spec = {"input_shape": [...], "layers": [{"kind": ...}, ...]}``.
    Inputs to :meth:`forward` are sample-major ``[r, *input_shape]``; the
    returned logits are ``[classes, r]``.
    """

    def __init__(self, spec, seed=0):
        self.spec = copy.deepcopy(spec)
        shape = tuple(spec["input_shape"])
        self.input_shape = shape
        self.layers = []
        for idx, layer_spec in enumerate(spec["layers"]):
            layer, shape = _build_layer(idx, layer_spec, shape)
            self.layers.append(layer)
        if len(shape) != 1:
            raise DimensionError(f"model must end in a feature vector, got {shape}")
        self.output_features = shape[0]
        names = [s.name for s in self.slabs()]
        if len(set(names)) != len(names):
            raise ValueError("slab names must be unique")
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)

    def slabs(self):
        return [s for layer in self.layers for s in layer.slabs()]

    def trainable_slabs(self):
        return [s for s in self.slabs() if s.trainable]

    def penalized_slabs(self):
        return [s for s in self.slabs() if s.penalized]

    def slab(self, name):
        for s in self.slabs():
            if s.name == name:
                return s
        raise KeyError(name)

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float32)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(f"expected samples of shape {self.input_shape}, got {x.shape[1:]}")
        h = x.T.copy() if len(self.input_shape) == 1 else x
        for layer in self.layers:
            h = layer.forward(h, training)
        return h

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self):
        for s in self.slabs():
            s.grad = np.zeros_like(s.tensor)

    def copy(self):
        return copy.deepcopy(self)

    def weights(self):
        return {s.name: s.tensor.copy() for s in self.slabs()}

    def load_weights(self, weights):
        for s in self.slabs():
            w = np.asarray(weights[s.name], dtype=np.float32)
            if w.shape != s.shape:
                raise DimensionError(f"{s.name}: shape {w.shape} != {s.shape}")
            s.tensor = w.copy()

    def checksum(self):
        h = hashlib.sha256()
        for s in self.slabs():
            h.update(s.name.encode())
            h.update(s.tensor.tobytes())
        return h.hexdigest()
