"""Shared oracles and builders for the test suite."""

import numpy as np

from qcnn.layers import NeuronVariant, QuadraticParams

QUADRATIC_VARIANTS = [NeuronVariant.QUADRATIC_BASE, NeuronVariant.NO_G, NeuronVariant.NO_POWER]
ALL_VARIANTS = QUADRATIC_VARIANTS + [NeuronVariant.CONVENTIONAL]


def random_params(rng, c_out, c_in, k, variant=NeuronVariant.QUADRATIC_BASE, scale=0.5):
    """Layer params with every present group drawn at random (not ReLinear)."""
    qp = QuadraticParams.zeros(c_out, c_in, k, variant)
    for p in qp.parameters().values():
        p.value[...] = rng.normal(0.0, scale, p.value.shape)
    return qp


def direct_conv(x, qp, stride, pad):
    """Per-position loop over zero-padded input, one neuron at a time."""
    c_in, length = x.shape
    c_out, _, k = qp.shape
    xp = np.pad(x, ((0, 0), (pad, pad)))
    n_out = (length + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, n_out))
    v = qp.variant
    for o in range(c_out):
        for t in range(n_out):
            win = xp[:, t * stride : t * stride + k]
            val = np.sum(win * qp.w_r.value[o]) + qp.b_r.value[o]
            if v.has_g:
                val *= np.sum(win * qp.w_g.value[o]) + qp.b_g.value[o]
            if v.has_power:
                val += np.sum(win * win * qp.w_b.value[o]) + qp.c.value[o]
            out[o, t] = val
    return out


def layer_input_grad(layer, train=True, seed=0):
    """``f(x) = sum(R * layer(x))`` with a fixed random ``R``, for check_gradient."""
    r = None

    def f(z):
        nonlocal r
        out = layer.forward(z, train)
        if r is None:
            r = np.random.default_rng(seed).normal(size=out.shape)
        for p in layer.parameters().values():
            p.zero_grad()
        return float(np.sum(r * out)), layer.backward(r)

    return f


def layer_param_grad(layer, name, x, train=True, seed=0):
    """Same objective as :func:`layer_input_grad`, differentiated w.r.t. one parameter."""
    p = layer.parameters()[name]
    r = None

    def f(v):
        nonlocal r
        p.value[...] = v
        out = layer.forward(x, train)
        if r is None:
            r = np.random.default_rng(seed).normal(size=out.shape)
        for q in layer.parameters().values():
            q.zero_grad()
        layer.backward(r)
        return float(np.sum(r * out)), p.grad.copy()

    return f, p.value.copy()


def brute_force_qttention(x, w_r, w_g, w_b, stride, pad, aggregation="mean"):
    """Enumerate windows and positions one at a time; ``np.gradient`` per kernel slice."""
    c_in, length = x.shape
    c_out, _, k = w_r.shape
    xp = np.pad(x, ((0, 0), (pad, pad)))
    n_out = (length + 2 * pad - k) // stride + 1
    total = np.zeros((c_out, c_in, length))
    count = np.zeros(length)
    for t in range(n_out):
        win = xp[:, t * stride : t * stride + k]
        for o in range(c_out):
            dot = 0.0
            for a, w in zip(win.ravel(), w_r[o].ravel()):
                dot += a * w
            raw = win * w_b[o] + w_g[o] * dot
            g = np.abs(np.gradient(raw, axis=-1))
            for j in range(k):
                pos = t * stride + j - pad
                if 0 <= pos < length:
                    total[o, :, pos] += g[:, j]
        for j in range(k):
            pos = t * stride + j - pad
            if 0 <= pos < length:
                count[pos] += 1
    maps = total / np.maximum(count, 1)
    agg = np.abs(maps).max(axis=(0, 1)) if aggregation == "max" else np.abs(maps).mean(axis=(0, 1))
    return agg, count.astype(np.int64)
