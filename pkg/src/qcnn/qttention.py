"""Neuron-induced attention maps ("qttention") for quadratic convolution layers.

For a quadratic kernel with weights ``w_r, w_g, w_b`` the input-dependent part
of the neuron is ``x * w_b + w_g * (x . w_r)`` over one receptive field. A map
over the whole signal is built by evaluating that vector at every window,
taking a discrete derivative along the window and its absolute value, then
averaging the windows back onto the input timeline.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .layers import NeuronVariant, QuadraticParams
from .network import Model
from .tensor import unfold_batch


class GradMode(enum.Enum):
    TEMPORAL_DIFF = "temporal_diff"
    EXACT_SUM_DERIVATIVE = "exact_sum_derivative"


class Aggregation(enum.Enum):
    MEAN_ABS_CHANNELS = "mean"
    MAX_ABS_CHANNELS = "max"


@dataclass
class QttentionMap:
    layer_index: int
    values: np.ndarray
    coverage: np.ndarray
    aggregation: Aggregation = Aggregation.MEAN_ABS_CHANNELS
    grad_mode: GradMode = GradMode.TEMPORAL_DIFF

    def __len__(self) -> int:
        return self.values.size

    @property
    def uncovered(self) -> np.ndarray:
        return self.coverage == 0


def raw_qtt_window(x, w_r, w_g, w_b) -> np.ndarray:
    """``x * w_b + w_g * (x . w_r)`` for one flattened receptive field (biases excluded)."""
    arrs = [np.asarray(a, dtype=np.float64).ravel() for a in (x, w_r, w_g, w_b)]
    if len({a.size for a in arrs}) != 1:
        raise ValueError(f"length mismatch: {[a.size for a in arrs]}")
    x, w_r, w_g, w_b = arrs
    return x * w_b + w_g * (x @ w_r)


def qtt_grad(raw, mode: GradMode = GradMode.TEMPORAL_DIFF, *, w_r=None, w_g=None, w_b=None,
             axis: int = -1) -> np.ndarray:
    """Absolute derivative of a raw qttention vector.

    TEMPORAL_DIFF differentiates along ``axis`` (central inside, one-sided at
    both ends). EXACT_SUM_DERIVATIVE ignores ``raw`` and returns
    ``|w_b + sum(w_g) * w_r|``, the input-independent derivative of ``sum(raw)``.
    """
    mode = GradMode(mode)
    if mode is GradMode.EXACT_SUM_DERIVATIVE:
        if w_r is None or w_g is None or w_b is None:
            raise ValueError("EXACT_SUM_DERIVATIVE needs w_r, w_g and w_b")
        w_r, w_g, w_b = (np.asarray(a, dtype=np.float64) for a in (w_r, w_g, w_b))
        return np.abs(w_b + w_g.sum() * w_r)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[axis] < 2:
        raise ValueError("TEMPORAL_DIFF needs at least 2 samples per window")
    return np.abs(np.gradient(raw, axis=axis))


def _scatter_average(per_window: np.ndarray, length: int, stride: int, pad: int):
    """Average ``(B, n_out, C_out, C_in, K)`` window maps onto ``(B, C_out, C_in, length)``."""
    b, n_out, c_out, c_in, k = per_window.shape
    acc = np.zeros((b, c_out, c_in, length))
    coverage = np.zeros(length, dtype=np.int64)
    starts = np.arange(n_out) * stride - pad
    # descending j visits the windows covering any one position in ascending order
    for j in reversed(range(k)):
        pos = starts + j
        ok = (pos >= 0) & (pos < length)
        acc[..., pos[ok]] += per_window[..., j][:, ok].transpose(0, 2, 3, 1)
        coverage[pos[ok]] += 1
    acc /= np.maximum(coverage, 1)
    return acc, coverage


def _aggregate(maps: np.ndarray, aggregation: Aggregation) -> np.ndarray:
    if Aggregation(aggregation) is Aggregation.MAX_ABS_CHANNELS:
        return np.abs(maps).max(axis=(1, 2))
    return np.abs(maps).mean(axis=(1, 2))


def _window_maps(x, w_r, w_g, w_b, stride, pad, grad_mode):
    c_out, c_in, k = w_r.shape
    cols = unfold_batch(x, k, stride, pad)  # (B, n_out, C_in, K)
    b, n_out = cols.shape[:2]
    if GradMode(grad_mode) is GradMode.EXACT_SUM_DERIVATIVE:
        sums = w_g.reshape(c_out, -1).sum(axis=1)
        per = np.abs(w_b + sums[:, None, None] * w_r)
        return np.broadcast_to(per, (b, n_out, c_out, c_in, k))
    flat = cols.reshape(b, n_out, -1)
    w_flat = w_r.reshape(c_out, -1)
    # left-to-right accumulation keeps x . w_r identical to a per-window loop
    dots = np.zeros((b, n_out, c_out))
    for i in range(flat.shape[2]):
        dots += flat[:, :, i, None] * w_flat[:, i]
    raw = cols[:, :, None] * w_b[None, None] + w_g[None, None] * dots[..., None, None]
    return qtt_grad(raw, GradMode.TEMPORAL_DIFF, axis=-1)


def assemble_maps(
    layer_input: np.ndarray,
    params: QuadraticParams,
    stride: int = 1,
    pad: int = 0,
    aggregation: Aggregation = Aggregation.MEAN_ABS_CHANNELS,
    grad_mode: GradMode = GradMode.TEMPORAL_DIFF,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`assemble_map` on ``(B, C_in, L)``; returns ``(values (B, L), coverage (L,))``."""
    if params.variant is NeuronVariant.CONVENTIONAL:
        raise ValueError("conventional layer has no qttention; use conventional_saliency")
    w_r = params.w_r.value
    w_g = params.w_g.value if params.w_g is not None else np.zeros_like(w_r)
    w_b = params.w_b.value if params.w_b is not None else np.zeros_like(w_r)
    return _assemble(layer_input, w_r, w_g, w_b, stride, pad, aggregation, grad_mode)


def _assemble(x, w_r, w_g, w_b, stride, pad, aggregation, grad_mode):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != w_r.shape[1]:
        raise ValueError(f"expected (B, {w_r.shape[1]}, L) input, got {x.shape}")
    per = _window_maps(x, w_r, w_g, w_b, stride, pad, grad_mode)
    maps, coverage = _scatter_average(per, x.shape[2], stride, pad)
    return _aggregate(maps, aggregation), coverage


def _as_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, None] if x.ndim == 1 else x[None]


def assemble_map(
    layer_input, params: QuadraticParams, stride: int = 1, pad: int = 0,
    aggregation: Aggregation = Aggregation.MEAN_ABS_CHANNELS,
    grad_mode: GradMode = GradMode.TEMPORAL_DIFF, layer_index: int = 0,
) -> QttentionMap:
    """Qttention map of one quadratic layer over a ``(C_in, L)`` input.

    Every (output channel, input channel) pair yields a per-window map that is
    averaged over overlapping windows; pairs are then combined by
    ``aggregation``. Padded positions are dropped, uncovered positions stay 0.
    """
    values, coverage = assemble_maps(_as_signal(layer_input), params, stride, pad,
                                     aggregation, grad_mode)
    return QttentionMap(layer_index, values[0], coverage, Aggregation(aggregation), GradMode(grad_mode))


def conventional_saliency(
    layer_input, w_r, b_r=None, stride: int = 1, pad: int = 0,
    aggregation: Aggregation = Aggregation.MEAN_ABS_CHANNELS,
    grad_mode: GradMode = GradMode.TEMPORAL_DIFF, layer_index: int = 0,
) -> QttentionMap:
    """Conventional-conv analogue: per-window contributions ``x * w_r`` through the same pipeline.

    ``b_r`` is accepted for symmetry and ignored (bias carries no input dependence).
    """
    w_r = np.asarray(w_r, dtype=np.float64)
    if w_r.ndim == 1:
        w_r = w_r[None, None]
    zeros = np.zeros_like(w_r)
    # w_r enters as the power weight with w_g = 0, so the raw vector is exactly x * w_r
    values, coverage = _assemble(_as_signal(layer_input), zeros, zeros, w_r, stride, pad,
                                 aggregation, grad_mode)
    return QttentionMap(layer_index, values[0], coverage, Aggregation(aggregation), GradMode(grad_mode))


def _conv_layer(model: Model, layer_index: int):
    convs = model.conv_layers
    if not 0 <= layer_index < len(convs):
        raise IndexError(f"layer_index {layer_index} out of range (0..{len(convs) - 1})")
    return convs[layer_index]


def layer_qttention_batch(model: Model, signals, layer_index: int = 0,
                          aggregation=Aggregation.MEAN_ABS_CHANNELS,
                          grad_mode=GradMode.TEMPORAL_DIFF, batch_size: int = 128):
    """Maps for a batch of model inputs; returns ``(values (B, L_layer), coverage)``."""
    conv = _conv_layer(model, layer_index)
    out, coverage = [], None
    for lo in range(0, len(signals), batch_size):
        x = model.conv_input(np.asarray(signals[lo : lo + batch_size], dtype=np.float64), layer_index)
        v, coverage = assemble_maps(x, conv.params, conv.stride, conv.pad, aggregation, grad_mode)
        out.append(v)
    return np.concatenate(out), coverage


def layer_qttention(model: Model, signal, layer_index: int = 0,
                    aggregation=Aggregation.MEAN_ABS_CHANNELS,
                    grad_mode=GradMode.TEMPORAL_DIFF) -> QttentionMap:
    """Map of quadratic conv layer ``layer_index`` for one input signal, on that layer's input timeline."""
    signal = np.asarray(signal, dtype=np.float64)
    batch = signal[None] if signal.ndim == 2 else signal[None, None]
    conv = _conv_layer(model, layer_index)
    x = model.conv_input(batch, layer_index)[0]
    return assemble_map(x, conv.params, conv.stride, conv.pad, aggregation, grad_mode, layer_index)


def layer_saliency(model: Model, signal, layer_index: int = 0,
                   aggregation=Aggregation.MEAN_ABS_CHANNELS,
                   grad_mode=GradMode.TEMPORAL_DIFF) -> QttentionMap:
    """:func:`conventional_saliency` of conv layer ``layer_index`` using its ``w_r``."""
    signal = np.asarray(signal, dtype=np.float64)
    batch = signal[None] if signal.ndim == 2 else signal[None, None]
    conv = _conv_layer(model, layer_index)
    x = model.conv_input(batch, layer_index)[0]
    return conventional_saliency(x, conv.params.w_r.value, conv.params.b_r.value, conv.stride,
                                 conv.pad, aggregation, grad_mode, layer_index)


def upsample_map(qmap: QttentionMap, target_len: int) -> QttentionMap:
    """Linear interpolation onto ``target_len`` points (endpoints kept); coverage from the nearest source."""
    n = len(qmap)
    if target_len < n:
        raise ValueError(f"target_len {target_len} is shorter than the map ({n})")
    if n == 1:
        pos = np.zeros(target_len)
    else:
        pos = np.linspace(0.0, n - 1, target_len)
    values = np.interp(pos, np.arange(n), qmap.values)
    coverage = qmap.coverage[np.rint(pos).astype(np.int64)]
    return replace(qmap, values=values, coverage=coverage)


def export_map(qmap: QttentionMap, path) -> Path:
    """CSV with header ``index,value,coverage``; values at 9 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value", "coverage"])
        for i, (v, c) in enumerate(zip(qmap.values, qmap.coverage)):
            w.writerow([i, f"{v:.9g}", int(c)])
    return path


def load_map(path, layer_index: int = -1) -> QttentionMap:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    values = np.array([float(r["value"]) for r in rows])
    coverage = np.array([int(r["coverage"]) for r in rows], dtype=np.int64)
    return QttentionMap(layer_index, values, coverage)
