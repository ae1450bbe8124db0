"""Adam optimiser and step-wise exponential learning-rate decay."""

from __future__ import annotations

import math

import numpy as np

from gazerefine.errors import TrainingDivergenceError


def lr_schedule(base_lr, decay_factor, decay_interval, progress):
    """``base_lr * decay_factor ** floor(progress / decay_interval)``.

    ``progress`` and ``decay_interval`` share a unit (usually epochs).  A 1e-9
    slack keeps values such as ``3 * (1/6) / 0.5`` from flooring one step short.
    """
    if not 0.0 < decay_factor <= 1.0:
        raise ValueError(f"decay_factor must be in (0, 1], got {decay_factor}")
    if decay_interval <= 0:
        raise ValueError(f"decay_interval must be positive, got {decay_interval}")
    steps = math.floor(progress / decay_interval + 1e-9)
    return base_lr * decay_factor ** max(steps, 0)


class Adam:
    """Adam with classic l2 decay: ``weight_decay * p`` is added to the gradient
    before the moment updates.

    ``params`` is a mapping name -> Var.  Optional ``clip_norm`` rescales the
    global gradient norm before the update.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0,
                 clip_norm=None):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(v.value) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in self.params.items()}

    def step(self, grads=None, lr=None):
        """Apply one update.  ``grads`` defaults to each parameter's ``.grad``."""
        lr = self.lr if lr is None else lr
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        grads = {k: (np.zeros_like(p.value) if grads.get(k) is None else grads[k])
                 for k, p in self.params.items()}
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"non-finite gradient for parameter {k!r} at step {self.t + 1}")
        if self.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k].astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype, copy=False)
            p.value = p.value - update

    def state_dict(self):
        out = {"t": self.t}
        for k in self.params:
            out[f"m.{k}"] = self.m[k].copy()
            out[f"v.{k}"] = self.v[k].copy()
        return out
