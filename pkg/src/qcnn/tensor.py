"""Array plumbing shared by every layer: parameters, window unfolding, gradient checks.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order, float64 by
default. This module adds the few pieces numpy does not provide directly.
"""

from __future__ import annotations

import contextlib
import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import ThreadpoolController


class LRGroup(enum.Enum):
    """Learning-rate group of a parameter.

    ``R_GROUP`` trains at the base rate; ``GB_GROUP`` (the quadratic terms
    ``w_g, b_g, w_b, c``) trains at ``alpha`` times the base rate.
    """

    R_GROUP = "r"
    GB_GROUP = "gb"


@dataclass(eq=False)
class Parameter:
    value: np.ndarray
    lr_group: LRGroup = LRGroup.R_GROUP
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __setattr__(self, name, val):
        if name == "lr_group" and "lr_group" in self.__dict__:
            raise AttributeError("lr_group is immutable after construction")
        super().__setattr__(name, val)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equally shaped arrays (no broadcasting)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def conv_output_length(length: int, kernel_len: int, stride: int, pad: int) -> int:
    if kernel_len < 1 or stride < 1 or pad < 0:
        raise ValueError(f"invalid window geometry kernel={kernel_len} stride={stride} pad={pad}")
    span = length + 2 * pad - kernel_len
    if span < 0:
        raise ValueError(
            f"signal of length {length} with pad {pad} is shorter than kernel {kernel_len}"
        )
    return span // stride + 1


def window_ranges(length: int, kernel_len: int, stride: int, pad: int) -> np.ndarray:
    """``(num_windows, 2)`` half-open index ranges each window covers in the unpadded
    timeline, clipped to ``[0, length)``."""
    n = conv_output_length(length, kernel_len, stride, pad)
    starts = np.arange(n) * stride - pad
    lo = np.clip(starts, 0, length)
    hi = np.clip(starts + kernel_len, 0, length)
    return np.stack([lo, hi], axis=1)


def unfold(signal: np.ndarray, kernel_len: int, stride: int = 1, pad: int = 0):
    """Slide a window over a ``(C_in, L)`` signal.

    Returns ``(windows, ranges)`` where ``windows`` has shape
    ``(num_windows, C_in * kernel_len)`` (channel-major inside each row, windows
    left to right, zeros at padded positions) and ``ranges`` is the output of
    :func:`window_ranges`.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[None, :]
    if signal.ndim != 2:
        raise ValueError(f"unfold expects (C_in, L), got shape {signal.shape}")
    c_in, length = signal.shape
    cols = unfold_batch(signal[None], kernel_len, stride, pad)[0]
    return cols.reshape(cols.shape[0], c_in * kernel_len), window_ranges(
        length, kernel_len, stride, pad
    )


def unfold_batch(x: np.ndarray, kernel_len: int, stride: int, pad: int) -> np.ndarray:
    """Batched unfold: ``(B, C_in, L)`` -> ``(B, L_out, C_in, K)`` (contiguous copy)."""
    b, c_in, length = x.shape
    n_out = conv_output_length(length, kernel_len, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    view = np.lib.stride_tricks.sliding_window_view(x, kernel_len, axis=2)
    view = view[:, :, : (n_out - 1) * stride + 1 : stride, :]
    return np.ascontiguousarray(view.transpose(0, 2, 1, 3))


def fold_batch(cols: np.ndarray, length: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`unfold_batch`: scatter-add ``(B, L_out, C_in, K)`` windows
    back onto a ``(B, C_in, length)`` timeline, dropping padded positions."""
    b, n_out, c_in, k = cols.shape
    out = np.zeros((b, c_in, length + 2 * pad + stride), dtype=cols.dtype)
    span = (n_out - 1) * stride + 1
    for j in range(k):
        out[:, :, j : j + span : stride] += cols[:, :, :, j].transpose(0, 2, 1)
    return out[:, :, pad : pad + length]


# Model arithmetic runs single-threaded BLAS over fixed blocks of samples. The
# block layout does not depend on the worker count, so results are bit-identical
# for any thread setting, and each sample's forward pass never depends on the
# other samples in its batch.
SAMPLE_BLOCK = 16
_BLAS = ThreadpoolController()
_pool: dict = {"threads": None, "executor": None}


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def set_num_threads(n: int | None = None) -> int:
    """Cap worker threads for block-parallel arithmetic (``None``: all available cores)."""
    n = available_cores() if n is None else int(n)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    if _pool["executor"] is not None and n != _pool["threads"]:
        _pool["executor"].shutdown()
        _pool["executor"] = None
    _pool["threads"] = n
    return n


def get_num_threads() -> int:
    return _pool["threads"] or set_num_threads()


@contextlib.contextmanager
def single_threaded_blas():
    with _BLAS.limit(limits=1, user_api="blas"):
        yield


def _run_blocks(fn, n: int) -> list:
    blocks = [slice(lo, min(lo + SAMPLE_BLOCK, n)) for lo in range(0, n, SAMPLE_BLOCK)]
    threads = get_num_threads()
    with single_threaded_blas():
        if threads == 1 or len(blocks) < 2:
            return [fn(b) for b in blocks]
        if _pool["executor"] is None:
            _pool["executor"] = ThreadPoolExecutor(threads)
        return list(_pool["executor"].map(fn, blocks))


def sample_matmul(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``(B, M, K) @ (K, N)`` as one product per sample."""
    out = np.empty(a.shape[:2] + (w.shape[1],))

    def work(s):
        np.matmul(a[s], w, out=out[s])

    _run_blocks(work, a.shape[0])
    return out


def sample_gram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_i a[i].T @ b[i]`` for ``(B, M, P)`` and ``(B, M, Q)``, summed block by block in order."""
    p, q = a.shape[2], b.shape[2]
    parts = _run_blocks(lambda s: a[s].reshape(-1, p).T @ b[s].reshape(-1, q), a.shape[0])
    total = parts[0].copy() if parts else np.zeros((p, q))
    for part in parts[1:]:
        total += part
    return total


def check_gradient(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Compare ``f``'s analytic gradient against central finite differences.

    ``f(x)`` must return ``(value, grad)``. The return value is the largest
    per-coordinate ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("check_gradient: non-finite input")
    value, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} != input shape {x.shape}")
    if not (np.isfinite(value) and np.all(np.isfinite(analytic))):
        raise ValueError("check_gradient: non-finite function value or gradient")

    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x.copy())[0]
        flat[i] = orig - eps
        f_minus = f(x.copy())[0]
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"check_gradient: non-finite value at coordinate {i}")
        num_flat[i] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0
