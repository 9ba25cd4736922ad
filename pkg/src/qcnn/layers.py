"""Forward/backward passes for quadratic and conventional 1-D layers.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` during ``backward``.
Inputs are batched: conv-style layers take ``(B, C, L)``, dense layers ``(B, n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import (
    LRGroup,
    Parameter,
    conv_output_length,
    fold_batch,
    sample_gram,
    sample_matmul,
    unfold_batch,
)


class NeuronVariant(enum.Enum):
    QUADRATIC_BASE = "quadratic"
    NO_G = "no_g"
    NO_POWER = "no_power"
    CONVENTIONAL = "conventional"

    @property
    def has_g(self) -> bool:
        return self in (NeuronVariant.QUADRATIC_BASE, NeuronVariant.NO_POWER)

    @property
    def has_power(self) -> bool:
        return self in (NeuronVariant.QUADRATIC_BASE, NeuronVariant.NO_G)

    @property
    def is_quadratic(self) -> bool:
        return self is not NeuronVariant.CONVENTIONAL

    @property
    def inner_products(self) -> int:
        return 1 + self.has_g + self.has_power


@dataclass(eq=False)
class QuadraticParams:
    """Weights of one quadratic layer, ``(C_out, C_in, K)`` plus ``(C_out,)`` biases.

    Groups absent from ``variant`` are stored as ``None``.
    """

    variant: NeuronVariant
    w_r: Parameter
    b_r: Parameter
    w_g: Parameter | None = None
    b_g: Parameter | None = None
    w_b: Parameter | None = None
    c: Parameter | None = None

    def __post_init__(self):
        shape = self.w_r.shape
        if len(shape) != 3:
            raise ValueError(f"w_r must be (C_out, C_in, K), got {shape}")
        want = {"w_g": self.variant.has_g, "b_g": self.variant.has_g,
                "w_b": self.variant.has_power, "c": self.variant.has_power}
        for name, needed in want.items():
            present = getattr(self, name) is not None
            if needed != present:
                raise ValueError(f"{self.variant.name} layer: {name} {'missing' if needed else 'not allowed'}")
        for name in ("w_g", "w_b"):
            p = getattr(self, name)
            if p is not None and p.shape != shape:
                raise ValueError(f"{name} shape {p.shape} != w_r shape {shape}")
        for name in ("b_r", "b_g", "c"):
            p = getattr(self, name)
            if p is not None and p.shape != (shape[0],):
                raise ValueError(f"{name} shape {p.shape} != ({shape[0]},)")

    @classmethod
    def zeros(cls, c_out: int, c_in: int, k: int, variant: NeuronVariant) -> "QuadraticParams":
        """Allocate a layer in ReLinear form with ``w_r = b_r = 0``."""
        wshape = (c_out, c_in, k)
        kw = {}
        if variant.has_g:
            kw["w_g"] = Parameter(np.zeros(wshape), LRGroup.GB_GROUP)
            kw["b_g"] = Parameter(np.ones(c_out), LRGroup.GB_GROUP)
        if variant.has_power:
            kw["w_b"] = Parameter(np.zeros(wshape), LRGroup.GB_GROUP)
            kw["c"] = Parameter(np.zeros(c_out), LRGroup.GB_GROUP)
        return cls(variant, Parameter(np.zeros(wshape)), Parameter(np.zeros(c_out)), **kw)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.w_r.shape

    def parameters(self) -> dict[str, Parameter]:
        names = ("w_r", "b_r", "w_g", "b_g", "w_b", "c")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def num_weights(self) -> int:
        return self.variant.inner_products * self.w_r.value.size

    def num_biases(self) -> int:
        return sum(p.value.size for n, p in self.parameters().items() if n.startswith(("b", "c")))

    def is_relinear_init(self) -> bool:
        """True when the quadratic groups sit at ``w_g=0, b_g=1, w_b=0, c=0``."""
        ok = True
        if self.w_g is not None:
            ok &= bool(np.all(self.w_g.value == 0.0) and np.all(self.b_g.value == 1.0))
        if self.w_b is not None:
            ok &= bool(np.all(self.w_b.value == 0.0) and np.all(self.c.value == 0.0))
        return ok


def quadratic_neuron_forward(
    x, w_r, b_r, w_g=None, b_g=None, w_b=None, c=None,
    variant: NeuronVariant = NeuronVariant.QUADRATIC_BASE,
) -> float:
    """Pre-activation of a single neuron on input vector ``x``.

    QUADRATIC_BASE: ``(x.w_r + b_r)(x.w_g + b_g) + (x*x).w_b + c``;
    NO_G drops the second factor, NO_POWER drops the power term, CONVENTIONAL
    keeps only ``x.w_r + b_r``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    w_r = np.asarray(w_r, dtype=np.float64).ravel()
    if x.shape != w_r.shape:
        raise ValueError(f"input length {x.size} != weight length {w_r.size}")
    out = float(x @ w_r + b_r)
    if variant.has_g:
        w_g = np.asarray(w_g, dtype=np.float64).ravel()
        if w_g.shape != x.shape:
            raise ValueError(f"input length {x.size} != w_g length {w_g.size}")
        out = out * float(x @ w_g + b_g)
    if variant.has_power:
        w_b = np.asarray(w_b, dtype=np.float64).ravel()
        if w_b.shape != x.shape:
            raise ValueError(f"input length {x.size} != w_b length {w_b.size}")
        out = out + float((x * x) @ w_b + c)
    return out


class _QuadraticAffine:
    """Shared math for quadratic conv and dense layers on a ``(M, n)`` row matrix."""

    def __init__(self, params: QuadraticParams):
        self.params = params
        self._cache = None

    def parameters(self) -> dict[str, Parameter]:
        return self.params.parameters()

    def _flat(self, p: Parameter | None) -> np.ndarray | None:
        return None if p is None else p.value.reshape(p.value.shape[0], -1)

    def _apply(self, cols: np.ndarray) -> np.ndarray:
        """``cols`` is ``(B, M, n)``: ``M`` receptive fields of ``n`` values per sample."""
        p = self.params
        r = sample_matmul(cols, self._flat(p.w_r).T) + p.b_r.value
        out = r
        g = sq = None
        if p.w_g is not None:
            g = sample_matmul(cols, self._flat(p.w_g).T) + p.b_g.value
            out = r * g
        if p.w_b is not None:
            sq = cols * cols
            out = out + (sample_matmul(sq, self._flat(p.w_b).T) + p.c.value)
        self._cache = (cols, r, g, sq)
        return out

    def _apply_backward(self, dout: np.ndarray) -> np.ndarray:
        p = self.params
        cols, r, g, sq = self._cache
        wshape = p.w_r.shape
        dr = dout if g is None else dout * g
        p.w_r.grad += sample_gram(dr, cols).reshape(wshape)
        p.b_r.grad += dr.sum(axis=(0, 1))
        dcols = sample_matmul(dr, self._flat(p.w_r))
        if g is not None:
            dg = dout * r
            p.w_g.grad += sample_gram(dg, cols).reshape(wshape)
            p.b_g.grad += dg.sum(axis=(0, 1))
            dcols += sample_matmul(dg, self._flat(p.w_g))
        if sq is not None:
            p.w_b.grad += sample_gram(dout, sq).reshape(wshape)
            p.c.grad += dout.sum(axis=(0, 1))
            dcols += 2.0 * cols * sample_matmul(dout, self._flat(p.w_b))
        return dcols


class QuadraticConv1d(_QuadraticAffine):
    """1-D convolution whose kernels are quadratic neurons (any ``NeuronVariant``)."""

    def __init__(self, params: QuadraticParams, stride: int = 1, pad: int = 0):
        super().__init__(params)
        self.stride = stride
        self.pad = pad
        self._in_shape = None

    @property
    def variant(self) -> NeuronVariant:
        return self.params.variant

    def output_length(self, length: int) -> int:
        return conv_output_length(length, self.params.shape[2], self.stride, self.pad)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        c_out, c_in, k = self.params.shape
        if x.ndim != 3 or x.shape[1] != c_in:
            raise ValueError(f"conv expects (B, {c_in}, L), got {x.shape}")
        b = x.shape[0]
        cols = unfold_batch(x, k, self.stride, self.pad)
        n_out = cols.shape[1]
        out = self._apply(cols.reshape(b, n_out, c_in * k))
        self._in_shape = x.shape
        return np.ascontiguousarray(out.transpose(0, 2, 1))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, c_in, length = self._in_shape
        c_out, _, k = self.params.shape
        n_out = dout.shape[2]
        d2 = np.ascontiguousarray(dout.transpose(0, 2, 1))
        dcols = self._apply_backward(d2).reshape(b, n_out, c_in, k)
        return fold_batch(dcols, length, self.stride, self.pad)


def quadratic_conv1d(
    x: np.ndarray, params: QuadraticParams, stride: int = 1, pad: int = 0
) -> np.ndarray:
    """Functional form on a single ``(C_in, L)`` signal; returns ``(C_out, L_out)``."""
    x = np.asarray(x, dtype=np.float64)
    return QuadraticConv1d(params, stride, pad).forward(x[None])[0]


class QuadraticDense(_QuadraticAffine):
    """Fully connected layer; ``params`` has shape ``(C_out, 1, n)``."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n = self.params.shape[2]
        if x.ndim != 2 or x.shape[1] != n:
            raise ValueError(f"dense expects (B, {n}), got {x.shape}")
        return self._apply(x[:, None, :])[:, 0, :]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return self._apply_backward(dout[:, None, :])[:, 0, :]


def quadratic_dense(x: np.ndarray, params: QuadraticParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    return QuadraticDense(params).forward(x[None])[0]


class ReLU:
    def __init__(self):
        self._mask = None

    def parameters(self) -> dict[str, Parameter]:
        return {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0.0)


def relu(x) -> np.ndarray:
    return ReLU().forward(np.asarray(x, dtype=np.float64))


class MaxPool1d:
    """Width-2, stride-2 max pooling on ``(B, C, L)``.

    Odd lengths get one right pad of ``-inf`` so the pad never wins; the output
    length is ``ceil(L / 2)``. ``argmax`` holds the winning input index per output.
    """

    width = 2

    def __init__(self):
        self.argmax = None
        self._length = None

    def parameters(self) -> dict[str, Parameter]:
        return {}

    @staticmethod
    def output_length(length: int) -> int:
        return -(-length // 2)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        b, ch, length = x.shape
        if length % 2:
            x = np.concatenate([x, np.full((b, ch, 1), -np.inf)], axis=2)
        pairs = x.reshape(b, ch, -1, 2)
        pick = np.argmax(pairs, axis=3)
        self._length = length
        self.argmax = 2 * np.arange(pairs.shape[2]) + pick
        return np.take_along_axis(pairs, pick[..., None], axis=3)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, ch, n = dout.shape
        dx = np.zeros((b, ch, 2 * n))
        np.put_along_axis(dx, self.argmax, dout, axis=2)
        return dx[:, :, : self._length]


def maxpool1d(x) -> tuple[np.ndarray, np.ndarray]:
    """Pool a ``(L,)`` or ``(C, L)`` signal; returns ``(pooled, argmax_indices)``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x3 = x.reshape((1, 1, -1) if squeeze else (1,) + x.shape)
    pool = MaxPool1d()
    out = pool.forward(x3)[0]
    idx = pool.argmax[0]
    return (out[0], idx[0]) if squeeze else (out, idx)


class BatchNorm1d:
    """Per-channel batch normalization for ``(B, C, L)`` or ``(B, C)`` inputs.

    Normalizes with the biased batch variance; running statistics use the
    unbiased estimate with ``running = (1 - momentum) * running + momentum * batch``.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def parameters(self) -> dict[str, Parameter]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    @staticmethod
    def _axes(x):
        return (0, 2) if x.ndim == 3 else (0,)

    @staticmethod
    def _bc(v, x):
        return v[None, :, None] if x.ndim == 3 else v[None, :]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        axes = self._axes(x)
        if train:
            count = x.shape[0] * (x.shape[2] if x.ndim == 3 else 1)
            if x.shape[0] < 2:
                raise ValueError("batchnorm in training mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var * count / (count - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean, x)) * self._bc(inv_std, x)
        self._cache = (xhat, inv_std, train)
        return xhat * self._bc(self.gamma.value, x) + self._bc(self.beta.value, x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, train = self._cache
        axes = self._axes(dout)
        self.gamma.grad += (dout * xhat).sum(axis=axes)
        self.beta.grad += dout.sum(axis=axes)
        dxhat = dout * self._bc(self.gamma.value, dout)
        if not train:
            return dxhat * self._bc(inv_std, dout)
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * self._bc(inv_std, dout)


class Flatten:
    def __init__(self):
        self._shape = None

    def parameters(self) -> dict[str, Parameter]:
        return {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)
