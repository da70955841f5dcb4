"""Datasets: seeded synthetic generators and an IDX (MNIST-style) reader."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass(eq=False)
class Dataset:
    features: np.ndarray  # [samples, *feature_dims], float32
    labels: np.ndarray  # [samples], int64
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise CountMismatchError(f"{len(self.features)} samples but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")

    def __len__(self):
        return len(self.labels)

    @property
    def feature_shape(self):
        return self.features.shape[1:]

    def subset(self, index):
        return Dataset(self.features[index], self.labels[index], self.class_count, self.split)


def _blobs(per_class, classes, noise, rng):
    # centers on the unit circle; noise=0 collapses every class to its center
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1) * 2.0
    points = [centers[k] + noise * rng.standard_normal((n, 2)) for k, n in enumerate(per_class)]
    return points


def _spirals(per_class, classes, noise, rng, turns):
    points = []
    for k, n in enumerate(per_class):
        t = np.linspace(0.0, 1.0, n, endpoint=False) + 0.5 / n
        theta = 2 * np.pi * (k / classes + turns * t) + noise * rng.standard_normal(n)
        points.append(np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1))
    return points


def generate_synthetic(kind, samples, classes, noise=0.0, seed=0, turns=1.0, test_fraction=0.2):
    """Class-balanced 2-D classification data split per class into train and test.

    ``blobs`` places one Gaussian cloud per class; ``spirals`` winds ``classes``
    interleaved arms ``turns`` times around the origin.
    """
    if classes < 2:
        raise DataError("need at least two classes")
    if samples < classes:
        raise DataError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    per_class = [samples // classes + (k < samples % classes) for k in range(classes)]
    if kind == "blobs":
        points = _blobs(per_class, classes, noise, rng)
    elif kind == "spirals":
        points = _spirals(per_class, classes, noise, rng, turns)
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")
    train_idx, test_idx = [], []
    offset = 0
    for n in per_class:
        order = offset + rng.permutation(n)
        n_test = int(round(test_fraction * n))
        test_idx.append(order[:n_test])
        train_idx.append(order[n_test:])
        offset += n
    X = np.concatenate(points).astype(np.float32)
    y = np.concatenate([np.full(n, k) for k, n in enumerate(per_class)])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return (
        Dataset(X[train_idx], y[train_idx], classes, "train"),
        Dataset(X[test_idx], y[test_idx], classes, "test"),
    )


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as fh:
        raw = fh.read()
    found = struct.unpack(">I", raw[:4])[0] if len(raw) >= 4 else None
    if found != magic:
        raise BadMagicError(f"{path}: magic {found}, expected {magic:#010x}")
    if len(raw) < 4 + 4 * ndim:
        raise DimensionMismatchError(f"{path}: file too short for an IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    if len(body) != int(np.prod(dims)):
        raise DimensionMismatchError(f"{path}: header declares {dims} but payload has {len(body)} bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, split="train", class_count=None):
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``.

    Images come back as ``[count, rows, cols, 1]``.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    features = (images.astype(np.float32) / 255.0)[..., None]
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels.astype(np.int64), class_count, split)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I3I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def dataset_from_config(spec):
    """Build ``(train, test)`` from a dataset section of a training config."""
    kind = spec.get("kind", "spirals")
    if kind in ("blobs", "spirals"):
        return generate_synthetic(
            kind,
            samples=spec.get("samples", 1000),
            classes=spec.get("classes", 3),
            noise=spec.get("noise", 0.0),
            seed=spec.get("seed", 0),
            turns=spec.get("turns", 1.0),
        )
    if kind == "idx":
        classes = spec.get("classes")
        train = load_idx(spec["train_images"], spec["train_labels"], "train", classes)
        test = load_idx(spec["test_images"], spec["test_labels"], "test", classes or train.class_count)
        limit = spec.get("limit")
        if limit:
            train = train.subset(slice(0, limit))
        return train, test
    raise DataError(f"unknown dataset kind {kind!r}")
