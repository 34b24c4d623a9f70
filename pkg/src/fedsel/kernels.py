"""Local SGD inner loops.

Each kernel runs ``n_batches`` consecutive minibatch steps in place on
``params``. Batch ``b`` of an epoch covers ``order[b*bs:(b+1)*bs]``.

The numba versions are used when numba imports and ``FEDSEL_DISABLE_NUMBA``
is unset (or "0"); otherwise the pure-numpy versions run. The two paths agree
to rounding error but not bit-for-bit, so a single run never mixes them.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .model import Arch, params_loss_and_gradient

_flag = os.environ.get("FEDSEL_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag not in ("", "0", "false", "no")

try:
    if NUMBA_DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def numpy_sgd_steps(arch: Arch, params, x, y, order, start_batch, n_batches, batch_size, lr):
    n = order.shape[0]
    for b in range(start_batch, start_batch + n_batches):
        idx = order[b * batch_size: min(n, (b + 1) * batch_size)]
        _, g = params_loss_and_gradient(arch, params, x[idx], y[idx])
        params -= lr * g


if HAVE_NUMBA:

    @njit(cache=True)
    def _sigmoid(z):
        if z >= 0.0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)

    @njit(cache=True)
    def _logistic_steps(params, x, y, order, start_batch, n_batches, batch_size, lr):
        n = order.shape[0]
        f = x.shape[1]
        grad = np.empty(f + 1)
        for b in range(start_batch, start_batch + n_batches):
            lo = b * batch_size
            hi = min(n, lo + batch_size)
            m = hi - lo
            grad[:] = 0.0
            for r in range(lo, hi):
                i = order[r]
                z = params[f]
                for j in range(f):
                    z += x[i, j] * params[j]
                d = (_sigmoid(z) - y[i]) / m
                for j in range(f):
                    grad[j] += d * x[i, j]
                grad[f] += d
            for j in range(f + 1):
                params[j] -= lr * grad[j]

    @njit(cache=True)
    def _mlp_steps(params, x, y, order, start_batch, n_batches, batch_size, hidden, lr):
        n = order.shape[0]
        f = x.shape[1]
        h = hidden
        o_b1 = f * h
        o_w2 = o_b1 + h
        o_b2 = o_w2 + h
        grad = np.empty(params.shape[0])
        act = np.empty(h)
        for b in range(start_batch, start_batch + n_batches):
            lo = b * batch_size
            hi = min(n, lo + batch_size)
            m = hi - lo
            grad[:] = 0.0
            for r in range(lo, hi):
                i = order[r]
                z = params[o_b2]
                for k in range(h):
                    a = params[o_b1 + k]
                    for j in range(f):
                        a += x[i, j] * params[j * h + k]
                    act[k] = math.tanh(a)
                    z += act[k] * params[o_w2 + k]
                d = (_sigmoid(z) - y[i]) / m
                grad[o_b2] += d
                for k in range(h):
                    grad[o_w2 + k] += d * act[k]
                    dh = d * params[o_w2 + k] * (1.0 - act[k] * act[k])
                    grad[o_b1 + k] += dh
                    for j in range(f):
                        grad[j * h + k] += dh * x[i, j]
            for j in range(params.shape[0]):
                params[j] -= lr * grad[j]


def sgd_steps(arch: Arch, params: np.ndarray, x: np.ndarray, y: np.ndarray, order: np.ndarray,
              start_batch: int, n_batches: int, batch_size: int, lr: float, use_numba: bool | None = None):
    """Run ``n_batches`` SGD steps of one epoch in place, starting at batch ``start_batch``."""
    if n_batches <= 0:
        return
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba kernels requested but numba is unavailable or disabled")
    if not use_numba:
        numpy_sgd_steps(arch, params, x, y, order, start_batch, n_batches, batch_size, lr)
    elif arch.kind == "logistic":
        _logistic_steps(params, x, y, order, start_batch, n_batches, batch_size, lr)
    else:
        _mlp_steps(params, x, y, order, start_batch, n_batches, batch_size, arch.hidden_width, lr)
