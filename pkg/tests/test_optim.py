"""Adam against the closed-form update."""

import numpy as np
import pytest

from angiosynth.layers import Parameter
from angiosynth.optim import Adam


def test_single_step_matches_closed_form():
    """One step on f(w) = w^2 from w=3: g=6, mhat=g, vhat=g^2, so the
    update is exactly lr * g / (|g| + eps)."""
    p = Parameter("w", np.array([3.0]))
    opt = Adam([p], lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8)
    p.grad[...] = 2.0 * p.data
    opt.step()
    expected = 3.0 - 2e-4 * 6.0 / (np.sqrt(36.0) + 1e-8)
    assert p.data[0] == pytest.approx(expected, abs=1e-12)


def test_three_steps_match_reference():
    """Hand-rolled reference loop with explicit bias correction."""
    lr, b1, b2, eps = 1e-2, 0.5, 0.9, 1e-8
    w = np.array([1.5, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    p = Parameter("w", w.copy())
    opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    for t in range(1, 4):
        g = np.array([2.0 * w[0], np.cos(w[1])])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

        p.grad[...] = [2.0 * p.data[0], np.cos(p.data[1])]
        opt.step()
        p.zero_grad()
    assert np.max(np.abs(p.data - w)) < 1e-12


def test_moments_shape_match_params():
    p = Parameter("w", np.zeros((3, 4)))
    opt = Adam([p])
    assert opt.m["w"].shape == (3, 4)
    assert opt.v["w"].shape == (3, 4)


def test_state_roundtrip():
    p = Parameter("w", np.array([1.0, 2.0]))
    opt = Adam([p], lr=0.1)
    p.grad[...] = [0.5, -0.5]
    opt.step()
    stash = {k: a.copy() for k, a in opt.state_arrays()}
    opt2 = Adam([p], lr=0.1)
    opt2.load_state_arrays(stash, t=opt.t)
    assert opt2.t == 1
    assert np.array_equal(opt2.m["w"], opt.m["w"])
    assert np.array_equal(opt2.v["w"], opt.v["w"])
