from __future__ import annotations

import logging

import numpy as np

from dexgain.nets.params import ParamSet

log = logging.getLogger(__name__)


class Adam:
    """Bias-corrected Adam over a ParamSet.

    A parameter whose gradient is non-finite is left untouched for that step
    and counted in ``skipped``.
    """

    def __init__(self, params: ParamSet, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.step_count = 0
        self.skipped = 0

    def step(self, grads=None) -> None:
        grads = self.params.grads() if grads is None else grads
        self.step_count += 1
        adam_update(self.params, grads, self.lr, self.beta1, self.beta2, self.eps, self.step_count,
                    self.m, self.v, self)

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}


def adam_update(params: ParamSet, grads, lr, beta1, beta2, eps, step, m, v, counter=None) -> None:
    """One in-place Adam step; ``m``/``v`` are the per-parameter moment dicts."""
    if step < 1:
        raise ValueError("step must be >= 1")
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for k, t in params.items():
        g = grads[k]
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient for %s; update skipped", k)
            if counter is not None:
                counter.skipped += 1
            continue
        m[k] = beta1 * m[k] + (1.0 - beta1) * g
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        t.value = t.value - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if np.isfinite(total) and total > max_norm:
        s = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= s
    return total
