"""Mini-batch training with Adam, LR reduction on plateau and early stopping."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .functional import softmax_crossentropy
from .model import Model
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 60
    stop_patience: int = 7
    lr_factor: float = 0.5
    lr_patience: int = 3
    seed: int = 0
    #: stop as soon as validation accuracy reaches this value (None: run the full schedule)
    target_val_acc: float | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.stop_patience < 1 or self.lr_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.target_val_acc is not None and not 0 < self.target_val_acc <= 1:
            raise ValueError("target_val_acc must lie in (0, 1]")


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "lr")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in self.COLUMNS})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "History":
        rows = []
        for row in csv.DictReader(io.StringIO(text)):
            rows.append({"epoch": int(row["epoch"]), **{k: float(row[k]) for k in cls.COLUMNS[1:]}})
        best = min(rows, key=lambda r: r["val_loss"])["epoch"] if rows else 0
        return cls(rows, best)


def evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in inference mode."""
    total, correct = 0.0, 0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        logits = model.forward(xb, training=False)
        loss, _ = softmax_crossentropy(logits.astype(np.float64), yb)
        total += loss * len(xb)
        correct += int(np.sum(logits.argmax(axis=1) == yb))
    return total / len(x), correct / len(x)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    # equal-ish splits so no batch ends up with a single sample (batch norm)
    return np.array_split(perm, max(1, math.ceil(n / batch_size)))


def train(model: Model, x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray, y_val: np.ndarray,
          schedule: TrainSchedule | None = None) -> tuple[Model, History]:
    """Fit ``model`` and restore the parameters of the best validation-loss epoch.

    With ``schedule.target_val_acc`` set, training ends at the first epoch
    whose validation accuracy reaches it and that epoch's parameters are kept.
    """
    schedule = schedule or TrainSchedule()
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if len(x_train) != len(y_train) or len(x_val) != len(y_val):
        raise ValueError("image and label counts differ")
    for name, arr in (("train", x_train), ("val", x_val)):
        if tuple(arr.shape[1:]) != model.input_shape:
            raise ValueError(f"{name} images have shape {arr.shape[1:]}, model expects {model.input_shape}")
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)

    rng = np.random.default_rng(schedule.seed)
    opt = Adam(schedule.lr, schedule.beta1, schedule.beta2, schedule.eps)
    slots = model.parameters()
    history = History()
    best_loss, best_state = math.inf, model.get_state()
    since_best = since_lr = 0
    dtype = slots[0][0].params[slots[0][1]].dtype

    for epoch in range(1, schedule.max_epochs + 1):
        t0 = time.perf_counter()
        running, seen = 0.0, 0
        for idx in _batches(len(x_train), schedule.batch_size, rng):
            xb = x_train[idx].astype(dtype, copy=False)
            logits = model.forward(xb, training=True)
            loss, grad = softmax_crossentropy(logits, y_train[idx])
            model.backward(grad.astype(dtype, copy=False))
            opt.step([layer.params[k] for layer, k in slots], [layer.grads[k] for layer, k in slots])
            running += loss * len(idx)
            seen += len(idx)
        val_loss, val_acc = evaluate_loss(model, x_val, y_val)
        history.rows.append({"epoch": epoch, "train_loss": running / seen, "val_loss": val_loss,
                             "val_acc": val_acc, "lr": opt.lr})
        log.info("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f lr=%.2e (%.1fs)",
                 epoch, running / seen, val_loss, val_acc, opt.lr, time.perf_counter() - t0)

        if schedule.target_val_acc is not None and val_acc >= schedule.target_val_acc:
            log.info("validation accuracy %.4f reached the target", val_acc)
            best_loss, best_state, history.best_epoch = val_loss, model.get_state(), epoch
            break
        if val_loss < best_loss:
            best_loss, best_state, history.best_epoch = val_loss, model.get_state(), epoch
            since_best = since_lr = 0
        else:
            since_best += 1
            since_lr += 1
            if since_best >= schedule.stop_patience:
                log.info("early stop after %d stalled epochs", since_best)
                break
            if since_lr >= schedule.lr_patience:
                opt.lr *= schedule.lr_factor
                since_lr = 0

    model.set_state(best_state)
    return model, history


def schedule_from_dict(d: dict) -> TrainSchedule:
    known = set(asdict(TrainSchedule()))
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
    return TrainSchedule(**d)
