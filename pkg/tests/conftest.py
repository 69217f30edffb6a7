"""Shared oracles for the test suite.

The gradient and convolution oracles here are intentionally written as
plain nested loops / nditer sweeps, independent of the library's vectorized
paths, so they can serve as references.
"""

import numpy as np
import pytest


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def numerical_gradient(loss_fn, arr, h=1e-5):
    """Central finite differences of a scalar loss w.r.t. every entry."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        old = arr[ix]
        arr[ix] = old + h
        plus = loss_fn()
        arr[ix] = old - h
        minus = loss_fn()
        arr[ix] = old
        grad[ix] = (plus - minus) / (2.0 * h)
        it.iternext()
    return grad


def conv2d_direct(x, w, stride=1):
    """Brute-force valid cross-correlation, NHWC."""
    n, h, wd, c = x.shape
    k = w.shape[0]
    f = w.shape[3]
    oh = (h - k) // stride + 1
    ow = (wd - k) // stride + 1
    y = np.zeros((n, oh, ow, f), dtype=np.float64)
    for ni in range(n):
        for oi in range(oh):
            for oj in range(ow):
                patch = x[ni, oi * stride : oi * stride + k,
                          oj * stride : oj * stride + k, :]
                for fi in range(f):
                    y[ni, oi, oj, fi] = np.sum(patch * w[:, :, :, fi])
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
