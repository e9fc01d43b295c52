"""PPO for the privileged oracle that outputs joint deltas and PD gains together.

The policy is a diagonal Gaussian over pre-squash actions ``u`` of size
``3 * num_joints``: the first block becomes ``delta_max * tanh(u)``, the other
two become stiffness and damping through a sigmoid into the gain bounds. With
``fixed_gains`` the gain block is ignored and excluded from the likelihood.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from dexgain.controller import GainBounds, GainVector, MANUAL_KD, MANUAL_KP
from dexgain.dynamics import SceneConfig
from dexgain.nets import tensor as T
from dexgain.nets.checkpoint import load_checkpoint, save_checkpoint
from dexgain.nets.layers import init_mlp, mlp_forward
from dexgain.nets.optim import Adam, clip_grad_norm
from dexgain.nets.params import ParamSet
from dexgain.tasks import OBJ_INFO_DIM, TaskConfig, VecEnv, oracle_state_dim

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
CURVE_COLUMNS = ["iteration", "steps", "mean_reward", "rot_term", "contact_term", "smooth_term", "term_term",
                 "entropy"]


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatches: int = 8
    lr: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    n_envs: int = 64
    horizon: int = 128
    total_steps: int = 1_000_000
    seed: int = 0
    hidden: tuple = (64, 64)
    max_grad_norm: float = 0.5
    init_log_std: float = -0.5
    init_log_std_gain: float = -2.5
    gain_jitter: float = 0.1
    reward_scale: float = 0.1  # critic targets live on this scale; policy gradient is unaffected
    ratio_mode: str = "factored"  # "joint": one ratio over all dims; "factored": action and gain ratios clipped apart

    def validate(self) -> None:
        from dexgain.errors import ConfigError

        if not 0 < self.gamma <= 1:
            raise ConfigError("ppo.gamma", "need 0 < gamma <= 1")
        if not 0 <= self.lam <= 1:
            raise ConfigError("ppo.lam", "need 0 <= lam <= 1")
        if not self.clip_eps > 0:
            raise ConfigError("ppo.clip_eps", "must be > 0")
        if self.n_envs < 1 or self.horizon < 1 or self.minibatches < 1 or self.epochs < 0:
            raise ConfigError("ppo", "n_envs, horizon, minibatches must be >= 1 and epochs >= 0")
        if self.total_steps < 0:
            raise ConfigError("ppo.total_steps", "must be >= 0")
        if self.ratio_mode not in ("joint", "factored"):
            raise ConfigError("ppo.ratio_mode", "must be 'joint' or 'factored'")


def _logit(p: float) -> float:
    return math.log(p / (1 - p))


def robot_frame_normalizer(rest_pose, bounds: GainBounds) -> tuple[np.ndarray, np.ndarray]:
    """(offset, scale) for one (q, q_des, kp, kd) frame."""
    rest = np.array(rest_pose, dtype=np.float64)
    nj = len(rest)
    off = np.concatenate([rest, rest, np.full(nj, 0.5 * (bounds.kp_min + bounds.kp_max)),
                          np.full(nj, 0.5 * (bounds.kd_min + bounds.kd_max))])
    scale = np.concatenate([np.full(2 * nj, 2.0), np.full(nj, 2.0 / (bounds.kp_max - bounds.kp_min)),
                            np.full(nj, 2.0 / (bounds.kd_max - bounds.kd_min))])
    return off, scale


def oracle_obs_normalizer(task: TaskConfig, scene: SceneConfig, bounds: GainBounds) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (offset, scale) so that ``(obs - offset) * scale`` is O(1) per feature."""
    r = task.randomization
    robot_off, robot_scale = robot_frame_normalizer(scene.rest_pose, bounds)

    def rng_norm(lo, hi):
        return 0.5 * (lo + hi), (2.0 / (hi - lo) if hi > lo else 0.0)

    x0, y0, _ = scene.object_start
    mids, scales = zip(*(rng_norm(*getattr(r, k)) for k in ("scale", "mass", "friction")))
    obj_off = np.array([x0, y0, 0.0, *mids])
    obj_scale = np.array([20.0, 20.0, 1.0 / math.pi, *scales])
    assert len(obj_off) == OBJ_INFO_DIM
    k = task.oracle_stack
    off = np.tile(np.concatenate([robot_off, obj_off]), k)
    scale = np.tile(np.concatenate([robot_scale, obj_scale]), k)
    return off, scale


class OraclePolicy:
    """Actor-critic parameters plus everything needed to turn network outputs into commands."""

    def __init__(self, params: ParamSet, meta: dict):
        self.params = params
        self.meta = meta
        self.nj = meta["num_joints"]
        self.delta_max = meta["delta_max"]
        self.bounds = GainBounds(**meta["bounds"])
        self.fixed_gains = meta.get("fixed_gains")
        self.obs_offset = np.array(meta["obs_offset"])
        self.obs_scale = np.array(meta["obs_scale"])

    @classmethod
    def create(cls, task: TaskConfig, scene: SceneConfig, bounds: GainBounds, cfg: PpoConfig,
               fixed_gains: Optional[GainVector], rng: np.random.Generator) -> "OraclePolicy":
        nj = scene.num_joints
        obs_dim = oracle_state_dim(task, nj)
        params = ParamSet()
        init_mlp(params, "pi", (obs_dim, *cfg.hidden, 3 * nj), rng, out_scale=0.01)
        init_mlp(params, "vf", (obs_dim, *cfg.hidden, 1), rng, out_scale=1.0)
        last = f"pi.{len(cfg.hidden)}.b"
        b = params[last].value
        # start the gain channels at the manual-tuning gains
        b[nj:2 * nj] = _logit((MANUAL_KP - bounds.kp_min) / (bounds.kp_max - bounds.kp_min))
        b[2 * nj:] = _logit((MANUAL_KD - bounds.kd_min) / (bounds.kd_max - bounds.kd_min))
        params.add("log_std", np.concatenate([np.full(nj, cfg.init_log_std), np.full(2 * nj, cfg.init_log_std_gain)]))
        off, scale = oracle_obs_normalizer(task, scene, bounds)
        meta = {
            "kind": "oracle",
            "num_joints": nj,
            "obs_dim": obs_dim,
            "delta_max": task.delta_max,
            "bounds": asdict(bounds),
            "fixed_gains": None if fixed_gains is None else [fixed_gains.kp.tolist(), fixed_gains.kd.tolist()],
            "obs_offset": off.tolist(),
            "obs_scale": scale.tolist(),
            "task": task.task,
            "gain_jitter": cfg.gain_jitter if fixed_gains is not None else 0.0,
        }
        return cls(params, meta)

    @classmethod
    def load(cls, path) -> "OraclePolicy":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "oracle":
            raise ValueError(f"{path} is not an oracle checkpoint")
        return cls(params, meta)

    def save(self, path) -> Path:
        return save_checkpoint(path, self.params, self.meta)

    @property
    def n_active(self) -> int:
        """Number of action dimensions that carry likelihood."""
        return self.nj if self.fixed_gains is not None else 3 * self.nj

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return (obs - self.obs_offset) * self.obs_scale

    def _np_mlp(self, prefix: str, x: np.ndarray) -> np.ndarray:
        p = self.params
        i = 0
        while f"{prefix}.{i}.W" in p:
            x = x @ p[f"{prefix}.{i}.W"].value + p[f"{prefix}.{i}.b"].value
            i += 1
            if f"{prefix}.{i}.W" in p:
                x = np.tanh(x)
        return x

    def mean_and_value(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = self.normalize(np.atleast_2d(obs))
        return self._np_mlp("pi", x), self._np_mlp("vf", x)[:, 0]

    def squash(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nj, b = self.nj, self.bounds
        dq = self.delta_max * np.tanh(u[..., :nj])
        if self.fixed_gains is not None:
            shape = u.shape[:-1] + (nj,)
            kp = np.broadcast_to(np.asarray(self.fixed_gains[0]), shape).copy()
            kd = np.broadcast_to(np.asarray(self.fixed_gains[1]), shape).copy()
        else:
            s = 0.5 * (1.0 + np.tanh(0.5 * u[..., nj:]))
            kp = b.kp_min + (b.kp_max - b.kp_min) * s[..., :nj]
            kd = b.kd_min + (b.kd_max - b.kd_min) * s[..., nj:]
        return dq, kp, kd

    def squash_log_det(self, u: np.ndarray) -> np.ndarray:
        """log |d squash / du| summed over the likelihood-carrying dimensions."""
        nj, b = self.nj, self.bounds
        th = np.tanh(u[..., :nj])
        out = np.sum(np.log(self.delta_max * (1.0 - th * th) + 1e-300), axis=-1)
        if self.fixed_gains is None:
            s = 0.5 * (1.0 + np.tanh(0.5 * u[..., nj:]))
            rng = np.concatenate([np.full(nj, b.kp_max - b.kp_min), np.full(nj, b.kd_max - b.kd_min)])
            out = out + np.sum(np.log(rng * s * (1.0 - s) + 1e-300), axis=-1)
        return out

    def gaussian_log_prob(self, u: np.ndarray, mean: np.ndarray) -> np.ndarray:
        k = self.n_active
        log_std = self.params["log_std"].value[:k]
        z = (u[..., :k] - mean[..., :k]) / np.exp(log_std)
        return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)

    def entropy(self) -> float:
        k = self.n_active
        return float(np.sum(self.params["log_std"].value[:k] + 0.5 * (LOG_2PI + 1.0)))

    def act(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Deterministic (mean) command for a batch of oracle states."""
        mean, _ = self.mean_and_value(obs)
        return self.squash(mean)


def sample_action(policy: OraclePolicy, oracle_state: np.ndarray, rng: np.random.Generator) -> dict:
    """Sample pre-squash actions; returns u, delta_q, gains, log_prob (squash-corrected), value."""
    mean, value = policy.mean_and_value(oracle_state)
    std = np.exp(policy.params["log_std"].value)
    u = mean + std * rng.standard_normal(mean.shape)
    dq, kp, kd = policy.squash(u)
    logp_u = policy.gaussian_log_prob(u, mean)
    nj = policy.nj
    ls = policy.params["log_std"].value[:nj]
    za = (u[..., :nj] - mean[..., :nj]) / np.exp(ls)
    return {
        "u": u,
        "delta_q": dq,
        "gains": GainVector(kp, kd),
        "log_prob": logp_u - policy.squash_log_det(u),
        "log_prob_u": logp_u,
        "log_prob_u_action": np.sum(-0.5 * za * za - ls - 0.5 * LOG_2PI, axis=-1),
        "value": value,
    }


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, N, obs_dim)
    u: np.ndarray  # (T, N, 3 * nj)
    log_prob: np.ndarray  # (T, N), pre-squash Gaussian log density
    value: np.ndarray  # (T, N)
    reward: np.ndarray  # (T, N)
    done: np.ndarray  # (T, N)
    advantage: Optional[np.ndarray] = None
    ret: Optional[np.ndarray] = None
    log_prob_a: Optional[np.ndarray] = None  # (T, N), action-channel part of log_prob

    @classmethod
    def empty(cls, horizon: int, n: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        z = lambda *s: np.zeros(s)
        return cls(z(horizon, n, obs_dim), z(horizon, n, act_dim), z(horizon, n), z(horizon, n),
                   z(horizon, n), z(horizon, n), log_prob_a=z(horizon, n))


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over (T, N) arrays; ``dones[t]`` ends the episode after step t."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    T_ = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_v = np.asarray(last_values, dtype=np.float64)
    next_a = np.zeros_like(next_v)
    for t in range(T_ - 1, -1, -1):
        delta = rewards[t] + gamma * next_v * notdone[t] - values[t]
        next_a = delta + gamma * lam * notdone[t] * next_a
        adv[t] = next_a
        next_v = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-12:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / std


def ppo_loss(policy: OraclePolicy, obs, u, logp_old, adv, ret, cfg: PpoConfig,
             logp_old_a=None) -> tuple[T.Tensor, dict]:
    """Clipped surrogate + value + entropy loss on one minibatch (tape graph).

    ``logp_old_a`` is the action-channel part of ``logp_old``; without it the ratio is joint.
    """
    p = policy.params
    k = policy.n_active
    x = policy.normalize(obs)
    mean = mlp_forward(p, x, "pi")
    log_std = p["log_std"]
    ls = T.getitem(log_std, slice(0, k))
    z = T.div(T.sub(u[:, :k], T.getitem(mean, (slice(None), slice(0, k)))), T.exp(ls))
    per_dim = T.sub(T.mul(T.square(z), -0.5), T.add(ls, 0.5 * LOG_2PI))
    logp = T.tsum(per_dim, axis=-1)
    nj = policy.nj
    if cfg.ratio_mode == "factored" and k > nj and logp_old_a is not None:
        # pi(dq, K | s) = pi(dq | s) pi(K | s): clip each factor's ratio on its own so the
        # low-noise gain channels cannot use up the trust region of the action channels
        logp_a = T.tsum(T.getitem(per_dim, (slice(None), slice(0, nj))), axis=-1)
        logp_g = T.sub(logp, logp_a)
        parts = [(logp_a, logp_old_a), (logp_g, logp_old - logp_old_a)]
    else:
        parts = [(logp, logp_old)]
    surr, ratios = None, []
    for lp, lp_old in parts:
        ratio = T.exp(T.sub(lp, lp_old))
        term = T.minimum(T.mul(ratio, adv), T.mul(T.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps), adv))
        surr = term if surr is None else T.add(surr, term)
        ratios.append(ratio.value)
    pg_loss = T.mul(T.mean(surr), -1.0)
    v = T.reshape(mlp_forward(p, x, "vf"), (obs.shape[0],))
    v_loss = T.mean(T.square(T.sub(v, ret)))
    ent = T.tsum(T.add(ls, 0.5 * (LOG_2PI + 1.0)))
    loss = T.add(T.add(pg_loss, T.mul(v_loss, cfg.value_coef)), T.mul(ent, -cfg.entropy_coef))
    clipped = np.any([np.abs(r - 1.0) > cfg.clip_eps for r in ratios], axis=0)
    stats = {
        "loss": float(loss.value),
        "pg_loss": float(pg_loss.value),
        "v_loss": float(v_loss.value),
        "entropy": float(ent.value),
        "clip_frac": float(np.mean(clipped)),
        "approx_kl": float(np.mean(logp_old - logp.value)),
    }
    return loss, stats


class NonFiniteLoss(RuntimeError):
    pass


def ppo_update(policy: OraclePolicy, buf: RolloutBuffer, cfg: PpoConfig, opt: Adam,
               rng: np.random.Generator) -> dict:
    """Epochs x minibatches of clipped-surrogate updates; returns averaged loss stats."""
    n = buf.obs.shape[0] * buf.obs.shape[1]
    obs = buf.obs.reshape(n, -1)
    u = buf.u.reshape(n, -1)
    logp_old = buf.log_prob.reshape(n)
    logp_old_a = None if buf.log_prob_a is None else buf.log_prob_a.reshape(n)
    adv = normalize_advantages(buf.advantage.reshape(n))
    ret = buf.ret.reshape(n)
    mb = max(1, n // cfg.minibatches)
    groups = {
        "pi": [k for k in policy.params if k.startswith("pi.") or k == "log_std"],
        "vf": [k for k in policy.params if k.startswith("vf.")],
    }
    agg: dict = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            policy.params.zero_grad()
            old_a = None if logp_old_a is None else logp_old_a[idx]
            loss, stats = ppo_loss(policy, obs[idx], u[idx], logp_old[idx], adv[idx], ret[idx], cfg, old_a)
            if not np.isfinite(loss.value):
                raise NonFiniteLoss("non-finite PPO loss")
            loss.backward()
            grads = policy.params.grads()
            for names in groups.values():
                clip_grad_norm({k: grads[k] for k in names}, cfg.max_grad_norm)
            opt.step(grads)
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    return {k: v / max(count, 1) for k, v in agg.items()}


@dataclass
class TrainResult:
    policy: OraclePolicy
    curve: list = field(default_factory=list)
    aborted: bool = False


def _episode_stats(done_terms: list) -> dict:
    if not done_terms:
        return {}
    arr = np.array(done_terms)
    return {
        "mean_reward": float(arr[:, :4].sum(axis=1).mean()),
        "rot_term": float(arr[:, 0].mean()),
        "contact_term": float(arr[:, 1].mean()),
        "smooth_term": float(arr[:, 2].mean()),
        "term_term": float(arr[:, 3].mean()),
    }


def train_oracle(
    task: TaskConfig,
    scene: SceneConfig,
    cfg: PpoConfig,
    bounds: GainBounds = GainBounds(),
    fixed_gains: Optional[GainVector] = None,
    out_dir=None,
    init_policy: Optional[OraclePolicy] = None,
) -> TrainResult:
    """Train the oracle with PPO.

    With ``fixed_gains`` the gain outputs are masked to those gains and the
    applied controller is jittered per episode by ``cfg.gain_jitter``.
    Writes ``oracle.ckpt`` and ``curve.csv`` under ``out_dir`` when given.
    """
    cfg.validate()
    task.validate()
    rng = np.random.default_rng(cfg.seed)
    policy = init_policy or OraclePolicy.create(task, scene, bounds, cfg, fixed_gains, rng)
    nj = scene.num_joints
    env = VecEnv(task, scene, cfg.n_envs, bounds=bounds, seed=cfg.seed + 1_000_003,
                 gain_jitter=cfg.gain_jitter if fixed_gains is not None else 0.0)
    obs = env.reset_all()
    opt = Adam(policy.params, lr=cfg.lr)
    steps_per_iter = cfg.n_envs * cfg.horizon
    n_iter = cfg.total_steps // steps_per_iter
    result = TrainResult(policy)
    ep_terms = np.zeros((cfg.n_envs, 4))
    recent: list = []
    last_good = policy.params.copy()
    out = Path(out_dir) if out_dir is not None else None
    term_keys = ("rotation", "contact", "smoothness", "terminate")
    for it in range(n_iter):
        buf = RolloutBuffer.empty(cfg.horizon, cfg.n_envs, policy.meta["obs_dim"], 3 * nj)
        finished: list = []
        for t in range(cfg.horizon):
            s = sample_action(policy, obs, rng)
            info = env.step(s["delta_q"], s["gains"].kp, s["gains"].kd)
            buf.obs[t], buf.u[t], buf.log_prob[t], buf.value[t] = obs, s["u"], s["log_prob_u"], s["value"]
            buf.log_prob_a[t] = s["log_prob_u_action"]
            buf.reward[t] = info["reward"] * cfg.reward_scale
            buf.done[t] = info["done"]
            ep_terms += np.stack([info["terms"][k] for k in term_keys], axis=1)
            for i in np.flatnonzero(info["done"]):
                finished.append(ep_terms[i].copy())
                ep_terms[i] = 0.0
                env.reset_env(i)
            obs = env.oracle_obs()
        _, last_v = policy.mean_and_value(obs)
        buf.advantage, buf.ret = compute_gae(buf.reward, buf.value, buf.done, last_v, cfg.gamma, cfg.lam)
        try:
            stats = ppo_update(policy, buf, cfg, opt, rng)
        except NonFiniteLoss:
            log.error("non-finite loss at iteration %d; keeping last good parameters", it)
            policy.params.set_values(last_good.values())
            result.aborted = True
            break
        if not policy.params.all_finite():
            policy.params.set_values(last_good.values())
            result.aborted = True
            break
        last_good = policy.params.copy()
        recent = (recent + finished)[-max(cfg.n_envs, 16):]
        row = {"iteration": it + 1, "steps": (it + 1) * steps_per_iter, "entropy": policy.entropy()}
        ep = _episode_stats(recent)
        for k in CURVE_COLUMNS[2:7]:
            row[k] = ep.get(k, float("nan"))
        result.curve.append(row)
        log.info("iter %d steps %d reward %.3f rot %.3f ent %.2f kl %.4f", it + 1, row["steps"],
                 row["mean_reward"], row["rot_term"], row["entropy"], stats.get("approx_kl", 0.0))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        policy.meta["aborted"] = result.aborted
        policy.save(out / "oracle.ckpt")
        write_curve(out / "curve.csv", result.curve)
    return result


def write_curve(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k not in ("iteration", "steps") else int(r[k]))
                        for k in CURVE_COLUMNS})
