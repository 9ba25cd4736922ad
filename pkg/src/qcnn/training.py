"""Cross-entropy SGD training with separate learning rates for the quadratic terms."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .network import Model
from .tensor import LRGroup, Parameter

log = logging.getLogger(__name__)

GAMMA_R_GRID = (0.1, 0.3, 0.5, 0.8, 0.08, 0.05)
ALPHA_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
DIVERGENCE_LIMIT = 1e6


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass
class TrainConfig:
    gamma_r: float = 0.1
    alpha: float = 1e-2
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.gamma_r > 0:
            raise ValueError(f"gamma_r must be > 0, got {self.gamma_r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batchnorm)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def gamma_gb(self) -> float:
        return self.alpha * self.gamma_r


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    seconds: float = field(default=0.0, compare=False)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc),
                            repr(r.val_loss), repr(r.val_acc)])
        return path

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                                float(r["val_loss"]), float(r["val_acc"])) for r in rows])


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("cross_entropy: non-finite logits")
    b, c = logits.shape
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"labels must be {b} integers in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / b


def sgd_step(params: "Iterable[Parameter] | dict[str, Parameter]", gamma_r: float, alpha: float) -> None:
    """``value -= lr * grad`` with ``lr = gamma_r`` (R group) or ``alpha * gamma_r`` (GB group), then zero grads."""
    if isinstance(params, dict):
        params = params.values()
    lr_gb = alpha * gamma_r
    for p in params:
        lr = gamma_r if p.lr_group is LRGroup.R_GROUP else lr_gb
        if lr:
            p.value -= lr * p.grad
        p.zero_grad()


def _arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        x, y = data
    else:
        x, y = data.windows, data.labels
    return np.asarray(x), np.asarray(y, dtype=np.int64)


def predict_logits(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x)
    out = [model.forward(np.asarray(x[i : i + batch_size], dtype=np.float64), train=False)
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.num_classes))


def predict(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return predict_logits(model, x, batch_size).argmax(axis=1)


def evaluate(model: Model, data, batch_size: int = 256) -> tuple[float, float]:
    """EVAL-mode ``(loss, accuracy)`` on ``data``."""
    x, y = _arrays(data)
    logits = predict_logits(model, x, batch_size)
    loss, _ = cross_entropy(logits, y)
    return loss, float(np.mean(logits.argmax(axis=1) == y))


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Consecutive minibatches; a short remainder joins the last full batch.

    A tail of a few samples gives batchnorm statistics noisy enough to derail
    an SGD step, so it is merged rather than dropped.
    """
    n = len(order)
    full = n // batch_size
    if full == 0:
        return [order] if n >= 2 else []
    bounds = [i * batch_size for i in range(full)] + [n]
    return [order[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


def train(model: Model, train_set, val_set, config: TrainConfig) -> tuple[Model, TrainHistory]:
    """Plain minibatch SGD; the model is updated in place and returned."""
    x_tr, y_tr = _arrays(train_set)
    x_va, y_va = _arrays(val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("train and validation sets must be non-empty")
    want = model.spec.input_len
    for name, x in (("train", x_tr), ("validation", x_va)):
        if x.shape[-1] != want:
            raise ValueError(f"{name} window length {x.shape[-1]} != model input length {want}")

    rng = np.random.default_rng(config.seed)
    params = list(model.parameters().values())
    model.zero_grad()
    history = TrainHistory()
    start = time.perf_counter()
    n = len(x_tr)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = correct = 0.0
        for bi, idx in enumerate(_batches(order, config.batch_size)):
            xb = np.asarray(x_tr[idx], dtype=np.float64)
            logits = model.forward(xb, train=True)
            if not np.all(np.isfinite(logits)):
                raise TrainingDivergedError(epoch, bi, float("nan"))
            loss, dlogits = cross_entropy(logits, y_tr[idx])
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise TrainingDivergedError(epoch, bi, loss)
            model.backward(dlogits)
            sgd_step(params, config.gamma_r, config.alpha)
            loss_sum += loss * len(idx)
            correct += float(np.sum(logits.argmax(axis=1) == y_tr[idx]))
        val_loss, val_acc = evaluate(model, (x_va, y_va))
        rec = EpochRecord(epoch + 1, loss_sum / n, correct / n, val_loss, val_acc)
        history.records.append(rec)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                 rec.epoch, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc)
    history.seconds = time.perf_counter() - start
    return model, history


@dataclass
class GridResult:
    gamma_r: float
    alpha: float
    val_acc: float
    diverged: bool = False


def grid_search(
    model_builder: Callable[[], Model],
    train_set,
    val_set,
    gamma_r_set=GAMMA_R_GRID,
    alpha_set=ALPHA_GRID,
    base_config: TrainConfig | None = None,
) -> tuple[tuple[float, float], list[GridResult]]:
    """Exhaustive search by final validation accuracy.

    Ties go to the smaller ``gamma_r``, then the smaller ``alpha``; diverged
    runs score ``-inf``. Returns ``((gamma_r, alpha), all_results)``.
    """
    gamma_r_set, alpha_set = list(gamma_r_set), list(alpha_set)
    if not gamma_r_set or not alpha_set:
        raise ValueError("grids must be non-empty")
    base = base_config or TrainConfig()
    results = []
    for g, a in itertools.product(gamma_r_set, alpha_set):
        cfg = TrainConfig(g, a, base.batch_size, base.epochs, base.seed, base.shuffle)
        try:
            _, hist = train(model_builder(), train_set, val_set, cfg)
            results.append(GridResult(g, a, hist.records[-1].val_acc))
        except TrainingDivergedError as exc:
            log.warning("gamma_r=%g alpha=%g: %s", g, a, exc)
            results.append(GridResult(g, a, float("-inf"), diverged=True))
    best = min(results, key=lambda r: (-r.val_acc, r.gamma_r, r.alpha))
    return (best.gamma_r, best.alpha), results
