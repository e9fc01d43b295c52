"""Shared test utilities: finite-difference gradient checks and brute-force oracles."""

from __future__ import annotations

import numpy as np

from dexgain.nets.params import ParamSet
from dexgain.nets.tensor import Tensor

FD_STEP = 1e-5
REL_FLOOR = 1e-6  # analytic gradients that are exactly zero (e.g. key biases) compare against this scale


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck_params(params: ParamSet, loss_fn, h: float = FD_STEP) -> float:
    """Max relative error between tape gradients and central differences over every parameter entry."""
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)).copy() for k, t in params.items()}
    worst = 0.0
    for k, t in params.items():
        num = np.zeros_like(t.value)
        flat = t.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().value
            flat[i] = orig - h
            fm = loss_fn().value
            flat[i] = orig
            num.reshape(-1)[i] = (fp - fm) / (2 * h)
        worst = max(worst, rel_error(analytic[k], num))
    return worst


def gradcheck_input(fn, x: np.ndarray, h: float = FD_STEP) -> float:
    """Same check for a function of one input tensor."""
    t = Tensor(x.copy(), requires_grad=True)
    fn(t).backward()
    analytic = t.grad.copy()
    num = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[i] += h
        xm.reshape(-1)[i] -= h
        num.reshape(-1)[i] = (fn(Tensor(xp)).value - fn(Tensor(xm)).value) / (2 * h)
    return rel_error(analytic, num)


def weighted_sum(out, rng: np.random.Generator):
    """Scalar loss sum(w * out) with fixed random weights, so every output channel matters."""
    from dexgain.nets import tensor as T

    w = rng.normal(size=out.shape)
    return T.tsum(T.mul(out, w))


def gae_brute_force(rewards, values, dones, last_values, gamma, lam):
    """Per-env, per-step explicit sum of discounted TD residuals up to the next done."""
    T_, N = rewards.shape
    adv = np.zeros((T_, N))
    for n in range(N):
        for t in range(T_):
            total, coef = 0.0, 1.0
            for k in range(t, T_):
                nonterm = 1.0 - dones[k, n]
                v_next = values[k + 1, n] if k + 1 < T_ else last_values[n]
                delta = rewards[k, n] + gamma * v_next * nonterm - values[k, n]
                total += coef * delta
                if dones[k, n]:
                    break
                coef *= gamma * lam
            adv[t, n] = total
    return adv, adv + values
