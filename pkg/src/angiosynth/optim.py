"""Adam optimizer over named Parameter lists."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam with bias correction.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
    update = lr * mhat / (sqrt(vhat) + eps)
    """

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        """Flat (key, array) pairs for checkpointing."""
        out = []
        for p in self.params:
            out.append((p.name + "/m", self.m[p.name]))
            out.append((p.name + "/v", self.v[p.name]))
        return out

    def load_state_arrays(self, mapping, t):
        self.t = t
        for p in self.params:
            self.m[p.name][...] = mapping[p.name + "/m"]
            self.v[p.name][...] = mapping[p.name + "/v"]
