"""Binary checkpoint and quantized-export formats.

Both files share one layout (all integers little-endian)::

    offset  size  field
    0       4     magic: b"PQCK" (checkpoint) or b"PQQX" (quantized export)
    4       4     uint32 format version
    8       4     uint32 header length H
    12      H     header, UTF-8 JSON with sorted keys
    12+H    ...   payload: slab data back to back in directory order

Checkpoint payloads are float32. Export payloads hold int8/int16 codes for
conv and dense weight slabs and float32 for everything else. See
``docs/formats.md`` for the header schema.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .nn import Model
from .quantizer import DomainError, QuantizedSlab, bits_to_frequency, code_dtype, dequantize, quantize_model_lattice

CHECKPOINT_MAGIC = b"PQCK"
EXPORT_MAGIC = b"PQQX"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_ENCODINGS = {"f4": np.dtype("<f4"), "i1": np.dtype("i1"), "i2": np.dtype("<i2")}


class ModelIOError(Exception):
    code = 10


class CorruptHeaderError(ModelIOError):
    code = 11


class VersionMismatchError(ModelIOError):
    code = 12


class TruncatedPayloadError(ModelIOError):
    code = 13


class CodeRangeError(ModelIOError):
    code = 14


def _atomic_write(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic, header, chunks):
    body = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(magic, FORMAT_VERSION, len(body)) + body + b"".join(chunks)


def _unpack(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise CorruptHeaderError(f"{path}: file too short")
    found, version, hlen = _PREFIX.unpack_from(raw)
    if found != magic:
        raise CorruptHeaderError(f"{path}: magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    if len(raw) < _PREFIX.size + hlen:
        raise CorruptHeaderError(f"{path}: header truncated")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode())
        slabs = header["slabs"]
        declared = int(header["payload_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable header ({exc})") from exc
    payload = raw[_PREFIX.size + hlen:]
    if len(payload) < declared:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} of {declared} bytes")
    if len(payload) > declared:
        raise CorruptHeaderError(f"{path}: {len(payload) - declared} trailing bytes after payload")
    end = 0
    for entry in slabs:
        if entry["offset"] != end or entry["encoding"] not in _ENCODINGS:
            raise CorruptHeaderError(f"{path}: bad directory entry for {entry.get('name')}")
        end += int(np.prod(entry["shape"], dtype=np.int64)) * _ENCODINGS[entry["encoding"]].itemsize
    if end != declared:
        raise CorruptHeaderError(f"{path}: directory covers {end} bytes, header declares {declared}")
    return header, payload


def _read_array(payload, entry):
    dtype = _ENCODINGS[entry["encoding"]]
    count = int(np.prod(entry["shape"], dtype=np.int64))
    arr = np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
    return arr.reshape(entry["shape"])


def _build(header, weights):
    try:
        model = Model(header["model_spec"])
        model.load_weights(weights)
    except (KeyError, ValueError) as exc:
        raise CorruptHeaderError(f"header does not describe a valid model ({exc})") from exc
    return model


def checkpoint_bytes(model):
    chunks, directory, offset = [], [], 0
    for s in model.slabs():
        data = s.tensor.astype("<f4").tobytes()
        directory.append({"name": s.name, "kind": s.kind, "shape": list(s.shape), "offset": offset,
                          "encoding": "f4"})
        chunks.append(data)
        offset += len(data)
    header = {"format": "checkpoint", "model_spec": model.spec, "slabs": directory, "payload_bytes": offset}
    return _pack(CHECKPOINT_MAGIC, header, chunks)


def save_checkpoint(model, path):
    _atomic_write(path, checkpoint_bytes(model))


def load_checkpoint(path):
    header, payload = _unpack(path, CHECKPOINT_MAGIC)
    return _build(header, {e["name"]: _read_array(payload, e) for e in header["slabs"]})


def export_quantized(model, t, kind, path):
    """Write lattice-quantized weights as integer codes; returns a summary dict."""
    t = int(t)
    family = "cosine" if kind == "cosine" else "sine_or_hat"
    if not (1 if family == "cosine" else 2) <= t <= 16:
        raise DomainError(f"export supports t in [2, 16] (cosine: [1, 16]), got {t}")
    frequency = bits_to_frequency(t, family)
    quantized = quantize_model_lattice(model, frequency, family)
    container = np.dtype(code_dtype(t))
    lo, hi = np.iinfo(container).min, np.iinfo(container).max
    chunks, directory, offset, f32_bytes = [], [], 0, 0
    levels = {}
    for s in model.slabs():
        entry = {"name": s.name, "kind": s.kind, "shape": list(s.shape), "offset": offset}
        q = quantized.get(s.name)
        if q is None:
            data = s.tensor.astype("<f4").tobytes()
            entry["encoding"] = "f4"
        else:
            if q.codes.size and (q.codes.min() < lo or q.codes.max() > hi):
                raise CodeRangeError(f"{s.name}: codes exceed the {container} container")
            data = q.codes.astype(container.newbyteorder("<")).tobytes()
            entry.update(encoding="i1" if container.itemsize == 1 else "i2", t=q.t, frequency=q.frequency,
                         scale=q.scale, bias=q.bias, lattice=q.lattice)
            levels[s.name] = q.levels()
        directory.append(entry)
        chunks.append(data)
        offset += len(data)
        f32_bytes += 4 * s.size
    header = {"format": "quantized-export", "model_spec": model.spec, "slabs": directory,
              "payload_bytes": offset, "t": t, "frequency": frequency, "lattice": family}
    _atomic_write(path, _pack(EXPORT_MAGIC, header, chunks))
    return {"t": t, "frequency": frequency, "lattice": family, "levels": levels,
            "payload_bytes": offset, "checkpoint_payload_bytes": f32_bytes,
            "size_ratio": offset / f32_bytes}


def read_header(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic not in (CHECKPOINT_MAGIC, EXPORT_MAGIC):
        raise CorruptHeaderError(f"{path}: not a checkpoint or quantized export")
    return _unpack(path, magic)[0]


def import_quantized(path):
    """Model whose quantized slabs hold ``code * scale + bias`` exactly as float32."""
    header, payload = _unpack(path, EXPORT_MAGIC)
    weights = {}
    for e in header["slabs"]:
        arr = _read_array(payload, e)
        if e["encoding"] == "f4":
            weights[e["name"]] = arr
        else:
            q = QuantizedSlab(arr.astype(np.int64), e["scale"], e["bias"], e["t"], e["frequency"], e["lattice"])
            weights[e["name"]] = dequantize(q)
    return _build(header, weights)


def load_any(path):
    """Load either a checkpoint or a quantized export."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == EXPORT_MAGIC:
        return import_quantized(path)
    return load_checkpoint(path)
