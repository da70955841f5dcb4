"""Training loop for ``loss(w) + R(w)`` with a stepped amplitude schedule.

The regularization weight (lambda) is fixed at 1; the schedule's amplitude
plays its role.
"""

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import dataset_from_config
from .metrics import lattice_distance
from .nn import Model, NonFiniteError, mlp_spec, per_sample_xent, sgd_step, softmax_xent_loss
from .regularizer import (
    RegularizerConfig,
    model_penalty,
    normalization_constant,
    penalized_weight_count,
    penalty_grad,
)

CSV_COLUMNS = ("epoch", "train_loss", "penalty", "amplitude", "test_error", "lattice_distance")


class ConfigError(ValueError):
    pass


class AmplitudeGuidanceWarning(UserWarning):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, records, diagnostic):
        super().__init__(message)
        self.records = records
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class AmplitudeSchedule:
    start_amplitude: float = 1e-4
    step_factor: float = 10.0
    step_period_epochs: int = 30
    mode: str = "dynamic"

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise ConfigError(f"schedule mode must be 'fixed' or 'dynamic', got {self.mode!r}")
        # 0 is accepted so unregularized baselines share the same code path
        if not self.start_amplitude >= 0:
            raise ConfigError("start_amplitude must be >= 0")
        if not self.step_factor >= 1:
            raise ConfigError("step_factor must be >= 1")
        if self.step_period_epochs < 1:
            raise ConfigError("step_period_epochs must be >= 1")

    @classmethod
    def ending_at(cls, final_amplitude, epochs, step_factor=10.0, step_period_epochs=30, mode="dynamic"):
        """Schedule whose amplitude in the last epoch equals ``final_amplitude``."""
        if mode == "fixed":
            return cls(final_amplitude, step_factor, step_period_epochs, "fixed")
        steps = (epochs - 1) // step_period_epochs
        return cls(final_amplitude / step_factor**steps, step_factor, step_period_epochs, mode)


def amplitude_at(schedule, epoch):
    """Amplitude in effect during ``epoch``; steps happen at multiples of the period."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.mode == "fixed":
        return schedule.start_amplitude
    return schedule.start_amplitude * schedule.step_factor ** (epoch // schedule.step_period_epochs)


def _from_dict(cls, data, where):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    schedule: AmplitudeSchedule = field(default_factory=AmplitudeSchedule)
    dataset: dict = field(default_factory=lambda: {"kind": "spirals", "samples": 1000, "classes": 3})
    model: dict = field(default_factory=lambda: {"hidden": [64, 64]})

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        reg = dict(data.pop("regularizer", {}))
        # the schedule owns the amplitude; a stray amplitude key is ignored
        reg.pop("amplitude", None)
        sched = data.pop("schedule", {})
        cfg = _from_dict(cls, data, "config")
        return replace(
            cfg,
            regularizer=_from_dict(RegularizerConfig, {"amplitude": 0.0, **reg}, "regularizer"),
            schedule=_from_dict(AmplitudeSchedule, sched, "schedule"),
        )

    def to_dict(self):
        d = asdict(self)
        d["regularizer"].pop("amplitude")
        return d

    def final_amplitude(self):
        return amplitude_at(self.schedule, self.epochs - 1)

    def check_guidance(self):
        """Warn when the last-epoch amplitude falls outside the suggested 1e-3..1e-2 band."""
        final = self.final_amplitude()
        if final > 0 and not 1e-3 <= final <= 1e-2:
            warnings.warn(
                f"final amplitude {final:g} is outside the 1e-3..1e-2 range that usually works best",
                AmplitudeGuidanceWarning,
                stacklevel=2,
            )


def load_config(path):
    """Read a JSON training config. A run manifest is accepted too (its ``config`` is used)."""
    with open(path) as fh:
        data = json.load(fh)
    if "manifest_version" in data:
        data = data["config"]
    return TrainConfig.from_dict(data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    penalty: float
    amplitude: float
    test_error: float
    lattice_distance: float
    data_loss: float = 0.0

    def __post_init__(self):
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")


def resolve_model_spec(model_cfg, dataset):
    if "layers" in model_cfg:
        return model_cfg
    if "hidden" in model_cfg:
        n_in = int(np.prod(dataset.feature_shape))
        spec = mlp_spec(n_in, model_cfg["hidden"], dataset.class_count)
        if len(dataset.feature_shape) > 1:
            spec["input_shape"] = list(dataset.feature_shape)
            spec["layers"].insert(0, {"kind": "flatten"})
        return spec
    raise ConfigError("model config needs either 'layers' or 'hidden'")


def evaluate(model, dataset, batch_size=1024):
    """``(top1_error_percent, mean_loss)``; independent of how the set is batched."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    losses, correct = [], 0
    for start in range(0, len(dataset), batch_size):
        xb = dataset.features[start:start + batch_size]
        yb = dataset.labels[start:start + batch_size]
        logits = model.forward(xb, training=False)
        losses.append(per_sample_xent(logits, yb))
        correct += int(np.sum(np.argmax(logits, axis=0) == yb))
    total = len(dataset)
    loss = math.fsum(np.concatenate(losses)) / total
    return 100.0 * (1.0 - correct / total), loss


def _batches(order, batch_size):
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a trailing single sample would break batch statistics; fold it into the previous batch
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def penalty_weight(reg, model):
    """Multiplier applied to ``R`` before adding it to the loss."""
    if not reg.normalize or reg.amplitude == 0:
        return 1.0
    # amplitude acts as lambda on the [0, 1]-bounded normalized penalty
    return reg.amplitude * normalization_constant(reg, penalized_weight_count(model))


def add_penalty_grads(model, reg):
    scale = penalty_weight(reg, model)
    for slab in model.penalized_slabs():
        g = slab.grad.astype(np.float64) + scale * penalty_grad(slab, reg)
        slab.grad = g.astype(slab.tensor.dtype)


def train_step(model, xb, yb, reg, learning_rate, momentum):
    logits = model.forward(xb, training=True)
    loss, grad = softmax_xent_loss(logits, yb)
    if not math.isfinite(loss):
        raise NonFiniteError("data loss is not finite")
    model.backward(grad)
    if reg.amplitude > 0:
        add_penalty_grads(model, reg)
    sgd_step(model.trainable_slabs(), learning_rate, momentum)
    return loss


def epoch_record(model, epoch, reg, train_set, test_set):
    data_loss = evaluate(model, train_set)[1]
    pen = model_penalty(model, reg).total * penalty_weight(reg, model) if reg.amplitude > 0 else 0.0
    test_error = evaluate(model, test_set)[0]
    lattice = "cosine" if reg.kind == "cosine" else "sine_or_hat"
    return EpochRecord(
        epoch=epoch,
        train_loss=data_loss + pen,
        penalty=pen,
        amplitude=reg.amplitude,
        test_error=test_error,
        lattice_distance=lattice_distance(model, reg.frequency, lattice),
        data_loss=data_loss,
    )


def train(config, datasets=None, callback=None):
    """Train a model from ``config``; returns ``(model, [EpochRecord, ...])``.

    ``datasets`` may pass a prebuilt ``(train, test)`` pair instead of the
    config's dataset section. ``callback(record)`` runs after every epoch.
    """
    train_set, test_set = datasets if datasets is not None else dataset_from_config(config.dataset)
    model = Model(resolve_model_spec(config.model, train_set), seed=config.seed)
    shuffle = np.random.default_rng([config.seed, 1])
    records = []
    for epoch in range(config.epochs):
        reg = replace(config.regularizer, amplitude=amplitude_at(config.schedule, epoch))
        order = shuffle.permutation(len(train_set))
        try:
            for idx in _batches(order, config.batch_size):
                train_step(model, train_set.features[idx], train_set.labels[idx], reg,
                           config.learning_rate, config.momentum)
            record = epoch_record(model, epoch, reg, train_set, test_set)
        except NonFiniteError as exc:
            diagnostic = {"epoch": epoch, "amplitude": reg.amplitude, "reason": str(exc)}
            raise DivergenceError(f"training diverged in epoch {epoch}: {exc}", records, diagnostic) from exc
        records.append(record)
        if callback is not None:
            callback(record)
    return model, records


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.penalty), repr(r.amplitude),
                             repr(r.test_error), repr(r.lattice_distance)])


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["penalty"]), float(r["amplitude"]),
                    float(r["test_error"]), float(r["lattice_distance"]))
        for r in rows
    ]
