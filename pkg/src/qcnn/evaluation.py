"""Metrics, parameter/FLOP accounting and the qttention-feature classifier experiment."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import QuadraticConv1d, QuadraticParams
from .network import ArchitectureSpec, Model, Profile, build_model
from .qttention import layer_qttention_batch
from .signals import Dataset, with_noise
from .training import TrainConfig, predict, train

NOISE_SWEEP_SNRS = (-6, -4, -2, 0, 2, 4, 6)


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} differ in shape")
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


@dataclass
class ConfusionMatrix:
    """``counts[true, pred]``."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def recall(self) -> np.ndarray:
        return np.diag(self.counts) / np.maximum(self.counts.sum(axis=1), 1)

    def precision(self) -> np.ndarray:
        return np.diag(self.counts) / np.maximum(self.counts.sum(axis=0), 1)

    def f1(self) -> np.ndarray:
        p, r = self.precision(), self.recall()
        return np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1), 0.0)

    def fault_judged_healthy(self, healthy: int = 0) -> int:
        """Faulty samples predicted as the healthy class."""
        col = self.counts[:, healthy]
        return int(col.sum() - col[healthy])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true", "pred", "count"])
            c = self.counts.shape[0]
            for t in range(c):
                for p in range(c):
                    w.writerow([t, p, int(self.counts[t, p])])
        return path


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in shape")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def layer_param_count(params: QuadraticParams) -> tuple[int, int]:
    """``(weights, biases)`` of one quadratic or conventional layer."""
    return params.num_weights(), params.num_biases()


def count_params(model: Model) -> dict:
    """Trainable parameter counts: ``total``, ``per_layer`` and ``conv_weights``."""
    per_layer = {}
    for name, layer in zip(model.names, model.layers):
        n = sum(p.value.size for p in layer.parameters().values())
        if n:
            per_layer[name] = n
    conv_weights = sum(layer_param_count(c.params)[0] for c in model.conv_layers)
    return {"total": sum(per_layer.values()), "per_layer": per_layer, "conv_weights": conv_weights}


def attention_param_estimate(C: int, H: int, W: int, r: float = 16.0) -> dict:
    """Parameter counts of a conv block with a channel-attention module vs. a quadratic conv.

    ``attention_mlp = 2 C^5 / r^2``, ``channel_attention = C H W + attention_mlp``,
    ``qttention = 3 C H W``.
    """
    if min(C, H, W) < 1 or not r > 0:
        raise ValueError("need C, H, W >= 1 and r > 0")
    mlp = 2 * C**5 / r**2
    return {"attention_mlp": mlp, "channel_attention": C * H * W + mlp, "qttention": 3 * C * H * W}


def backbone_attention_table(spec: ArchitectureSpec, r: float = 16.0) -> list[dict]:
    """One row per conv block with ``C = out_channels``, ``H = in_channels``, ``W = kernel``."""
    rows, c_in = [], spec.in_channels
    for i, b in enumerate(spec.blocks):
        est = attention_param_estimate(b.out_channels, c_in, b.kernel, r)
        rows.append({"layer": f"conv{i}", "C": b.out_channels, "H": c_in, "W": b.kernel, **est})
        c_in = b.out_channels
    return rows


def flops_estimate(spec: ArchitectureSpec) -> int:
    """Multiply-accumulates per sample for conv and dense layers.

    Each inner product costs ``L_out * C_out * C_in * K``; a quadratic neuron
    adds one elementwise op per output for the product of its two factors and
    one for adding the power term.
    """
    total, c_in, length = 0, spec.in_channels, spec.input_len
    lengths = dict(spec.stage_lengths())
    for i, b in enumerate(spec.blocks):
        l_out = lengths[f"conv{i}"]
        v = b.variant
        total += l_out * b.out_channels * c_in * b.kernel * v.inner_products
        total += (v.has_g + v.has_power) * l_out * b.out_channels
        c_in = b.out_channels
    n = spec.flat_features()
    for d in spec.dense:
        total += n * d.units * d.variant.inner_products + (d.variant.has_g + d.variant.has_power) * d.units
        n = d.units
    return int(total)


@dataclass
class LinearHingeClassifier:
    """One-vs-rest linear classifier on standardized features."""

    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def decision_function(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ValueError(f"expected (N, {self.weights.shape[1]}) features, got {x.shape}")
        return ((x - self.mean) / self.scale) @ self.weights.T + self.bias

    def predict(self, features) -> np.ndarray:
        return self.decision_function(features).argmax(axis=1)


def train_linear_classifier(
    features, labels, epochs: int = 30, lr: float = 0.01, seed: int = 0,
    reg: float = 1e-4, batch_size: int = 32, num_classes: int | None = None,
) -> LinearHingeClassifier:
    """Minibatch SGD on the one-vs-rest hinge loss with L2 penalty ``reg``."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"features {x.shape} and labels {y.shape} disagree")
    c = int(num_classes or y.max() + 1)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    targets = np.where(np.arange(c)[None, :] == y[:, None], 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = np.zeros((c, x.shape[1]))
    b = np.zeros(c)
    for _ in range(epochs):
        order = rng.permutation(len(xs))
        for lo in range(0, len(xs), batch_size):
            idx = order[lo : lo + batch_size]
            xb, tb = xs[idx], targets[idx]
            active = (tb * (xb @ w.T + b) < 1.0) * -tb  # d hinge / d score
            w -= lr * (active.T @ xb / len(idx) + reg * w)
            b -= lr * active.mean(axis=0)
    return LinearHingeClassifier(w, b, mean, scale)


class FeatureSource(enum.Enum):
    RAW = "raw"
    FIRST_LAYER_OUTPUT = "first_layer_output"
    FIRST_LAYER_QTTENTION = "first_layer_qttention"


def qttention_feature_pipeline(model: Model | None, windows, source: FeatureSource,
                               batch_size: int = 128) -> np.ndarray:
    """Features per window: the raw signal, the channel-averaged first block
    activation (after batchnorm and ReLU), or the first-layer qttention map."""
    source = FeatureSource(source)
    windows = np.asarray(windows)
    if source is FeatureSource.RAW:
        return windows.astype(np.float64)
    if model is None:
        raise ValueError(f"{source.value} features need a trained model")
    if source is FeatureSource.FIRST_LAYER_QTTENTION:
        return layer_qttention_batch(model, windows, 0, batch_size=batch_size)[0]
    out = [model.block_activation(np.asarray(windows[i : i + batch_size], dtype=np.float64), 0).mean(axis=1)
           for i in range(0, len(windows), batch_size)]
    return np.concatenate(out)


def feature_classifier_accuracy(model: Model | None, dataset: Dataset, source: FeatureSource,
                                seed: int = 0, epochs: int = 30, lr: float = 0.01) -> float:
    """Train the hinge classifier on the TRAIN split features, score on TEST."""
    tr, te = dataset.train, dataset.test
    clf = train_linear_classifier(qttention_feature_pipeline(model, tr.windows, source), tr.labels,
                                  epochs=epochs, lr=lr, seed=seed, num_classes=dataset.num_classes)
    return accuracy(clf.predict(qttention_feature_pipeline(model, te.windows, source)), te.labels)


def run_trial(profile, dataset: Dataset, snr_db: float | None, seed: int,
              config: TrainConfig) -> tuple[Model, float]:
    """Noise the dataset with ``seed``, train ``profile`` from ``seed``, return ``(model, test accuracy)``."""
    noisy = with_noise(dataset, snr_db, seed=seed)
    model = build_model(profile, dataset.win_len, dataset.num_classes, seed=seed)
    cfg = TrainConfig(config.gamma_r, config.alpha, config.batch_size, config.epochs, seed, config.shuffle)
    train(model, noisy.train, noisy.val, cfg)
    te = noisy.test
    return model, accuracy(predict(model, te.windows), te.labels)


def noise_sweep(profiles, dataset: Dataset, snrs=NOISE_SWEEP_SNRS, runs: int = 10,
                config: TrainConfig | None = None, base_seed: int = 0) -> list[dict]:
    """Rows ``{model, snr_db, seed, accuracy}`` for every profile, SNR and run."""
    config = config or TrainConfig()
    rows = []
    for prof in profiles:
        prof = Profile.parse(prof)
        for snr in snrs:
            for run in range(runs):
                seed = base_seed + run
                _, acc = run_trial(prof, dataset, snr, seed, config)
                rows.append({"model": prof.value, "snr_db": snr, "seed": seed, "accuracy": acc})
    return rows


def write_results_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "snr_db", "seed", "accuracy"])
        w.writeheader()
        w.writerows(rows)
    return path


def summarize(rows: list[dict]) -> dict[tuple[str, float], tuple[float, float]]:
    """``(model, snr) -> (mean, std)`` of accuracy."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["model"], r["snr_db"]), []).append(r["accuracy"])
    return {k: (float(np.mean(v)), float(np.std(v))) for k, v in groups.items()}
