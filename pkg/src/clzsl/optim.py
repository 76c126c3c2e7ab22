"""RMSprop and Adam with fixed conventional constants.

Parameters are updated in place between tape passes.  Gradients arrive as
a map keyed by parameter tensor identity; an absent entry means zero.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def clip_global_norm(grads: dict[Tensor, Tensor], max_norm: float) -> dict[Tensor, Tensor]:
    """Rescale all gradients jointly so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.values * g.values))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {p: Tensor(g.values * factor) for p, g in grads.items()}


class RMSprop:
    """Squared-gradient EMA scaling: v <- decay*v + (1-decay)*g^2, step g/sqrt(v+eps)."""

    def __init__(self, params: list[Tensor], lr: float, decay: float = 0.99, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.decay = float(decay)
        self.eps = float(eps)
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, grads: dict[Tensor, Tensor]) -> None:
        for i, p in enumerate(self.params):
            g = grads.get(p)
            gv = g.values if g is not None else np.zeros_like(p.values)
            if gv.shape != p.values.shape:
                raise ValueError(f"gradient shape {gv.shape} does not match parameter {p.shape}")
            self.v[i] = self.decay * self.v[i] + (1.0 - self.decay) * gv * gv
            p.values -= self.lr * gv / np.sqrt(self.v[i] + self.eps)

    def state_arrays(self) -> list[np.ndarray]:
        return self.v

    def load_state(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != len(self.v):
            raise ValueError("optimizer state length mismatch")
        self.v = [np.array(a, dtype=np.float64) for a in arrays]


class Adam:
    """First/second moment EMAs with bias correction."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, grads: dict[Tensor, Tensor]) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = grads.get(p)
            gv = g.values if g is not None else np.zeros_like(p.values)
            if gv.shape != p.values.shape:
                raise ValueError(f"gradient shape {gv.shape} does not match parameter {p.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gv
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gv * gv
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state(self, arrays: list[np.ndarray], t: int) -> None:
        n = len(self.params)
        if len(arrays) != 2 * n:
            raise ValueError("optimizer state length mismatch")
        self.m = [np.array(a, dtype=np.float64) for a in arrays[:n]]
        self.v = [np.array(a, dtype=np.float64) for a in arrays[n:]]
        self.t = int(t)
