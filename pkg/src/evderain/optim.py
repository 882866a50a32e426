"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params, lr=4.8e-4, weight_decay=5e-3,
                 betas=(0.9, 0.999), eps=1e-8):
        """params: {path: Tensor}; only requires_grad entries are updated."""
        self.params = {k: t for k, t in params.items() if t.requires_grad}
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name in sorted(self.params):
            t = self.params[name]
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= lr * self.weight_decay * t.data
            t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self):
        out = {}
        for name in sorted(self.params):
            out[f"optim/m/{name}"] = self.m[name]
            out[f"optim/v/{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors, step_count):
        for name in self.params:
            self.m[name] = tensors[f"optim/m/{name}"].copy()
            self.v[name] = tensors[f"optim/v/{name}"].copy()
        self.step_count = step_count


def cosine_lr(step, total_steps, lr0, lr_min):
    """Cosine decay from lr0 to lr_min over total_steps (step is 0-based)."""
    if total_steps <= 1:
        return lr0
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * frac))
