"""Adam with bias correction."""

from __future__ import annotations

import numpy as np


def adam_step(params, grads, state: dict, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One in-place Adam update.

    ``params`` and ``grads`` are parallel lists of arrays; ``state`` holds
    ``step`` plus first/second moment lists, and is created on first use
    when empty. Returns the state.
    """
    if not state:
        state["step"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    """Adam bound to a list of :class:`Parameter` objects."""

    def __init__(self, parameters, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.parameters = list(parameters)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state: dict = {}

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.parameters]
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        adam_step([p.data for p in self.parameters], grads, self.state,
                  self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None
