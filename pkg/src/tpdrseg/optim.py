"""AdamW with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
    """Update ``params`` (numpy arrays) in place and return them with the advanced state.

    ``grads`` entries may be None, meaning zero gradient.
    """
    beta1, beta2 = betas
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(state.m) == len(grads)):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        g = g.astype(p.dtype, copy=False)
        if weight_decay:
            p -= lr * weight_decay * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
    return params, state


class AdamW:
    """Stateful wrapper over :func:`adamw_step` for a fixed list of tensors."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adamw_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.betas,
            self.eps,
            self.weight_decay,
        )
