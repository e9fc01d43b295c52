"""Rotation and flipping environments on top of the planar simulator.

``VecEnv`` steps a batch of independent environments through one compiled
kernel call. ``reset``/``env_step`` wrap a batch of one for the single-env API.
Each environment owns its random generator, so an episode's randomness depends
only on its seed, never on batch size or neighbours.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Optional

import numpy as np

from dexgain import _kernels as K
from dexgain.controller import GainBounds, GainMap, manual_gains
from dexgain.dynamics import (
    PhysProps,
    SceneConfig,
    SceneModel,
    SimState,
    kernel_args,
    resolve_object_start,
)
from dexgain.errors import ConfigError, ContractError

TRACE_SCHEMA = "dexgain.trace/1"
OBJ_INFO_DIM = 6  # x, y, theta, scale, mass, friction


@dataclass(frozen=True)
class RewardWeights:
    w_rot: float = 1.0
    w_contact: float = 0.1
    w_action: float = 0.01
    w_torque: float = 0.05
    w_term: float = 10.0


@dataclass(frozen=True)
class Disturbance:
    enabled: bool = False
    force_std: float = 0.5
    probability: float = 0.1


@dataclass(frozen=True)
class Randomization:
    scale: tuple = (0.8, 1.2)
    mass: tuple = (0.05, 0.4)
    friction: tuple = (0.3, 1.2)
    pose_jitter: float = 0.05


@dataclass(frozen=True)
class TaskConfig:
    task: str = "rotation"
    episode_len: int = 300
    control_dt: float = 0.05
    substeps: int = 50
    target_omega: float = 1.0
    rotation_sign: float = 1.0
    delta_max: float = 0.05
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    disturbance: Disturbance = field(default_factory=Disturbance)
    randomization: Randomization = field(default_factory=Randomization)
    fail_drop_y: float = 0.07
    fail_travel: float = 0.15
    history_len: int = 10
    oracle_stack: int = 3
    contact_threshold: float = 0.01
    settle_steps: int = 4

    def validate(self) -> None:
        if self.task not in ("rotation", "flipping"):
            raise ConfigError("task.task", f"unknown task {self.task!r}")
        if self.episode_len <= 0:
            raise ConfigError("task.episode_len", "must be > 0")
        if not (self.control_dt > 0 and self.substeps >= 1):
            raise ConfigError("task.control_dt", "need control_dt > 0 and substeps >= 1")
        if not self.target_omega > 0:
            raise ConfigError("task.target_omega", "must be > 0")
        if not self.delta_max > 0:
            raise ConfigError("task.delta_max", "must be > 0")
        for k, v in asdict(self.reward_weights).items():
            if v < 0:
                raise ConfigError(f"task.reward_weights.{k}", "must be >= 0")
        r = self.randomization
        for k in ("scale", "mass", "friction"):
            lo, hi = getattr(r, k)
            if not (0 < lo <= hi):
                raise ConfigError(f"task.randomization.{k}", f"need 0 < lo <= hi, got ({lo}, {hi})")
        if r.friction[1] > 2.0:
            raise ConfigError("task.randomization.friction", "friction must stay <= 2.0")
        if r.pose_jitter < 0:
            raise ConfigError("task.randomization.pose_jitter", "must be >= 0")
        d = self.disturbance
        if d.force_std < 0 or not 0 <= d.probability <= 1:
            raise ConfigError("task.disturbance", "need force_std >= 0 and probability in [0, 1]")
        if self.history_len < 1 or self.oracle_stack < 1:
            raise ConfigError("task.history_len", "history lengths must be >= 1")

    @property
    def sim_dt(self) -> float:
        return self.control_dt / self.substeps


def oracle_state_dim(cfg: TaskConfig, num_joints: int) -> int:
    return cfg.oracle_stack * (4 * num_joints + OBJ_INFO_DIM)


@dataclass
class Observation:
    oracle_state: np.ndarray
    student_history: np.ndarray  # (H, 4 * num_joints), oldest first


@dataclass
class StepRecord:
    obs: Observation
    action: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    reward_terms: dict
    torque_applied: np.ndarray
    obj_omega: float
    obj_speed: float
    obj_theta: float
    done: bool
    fail: bool
    step: int

    def to_json(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "step": self.step,
            "action": self.action.tolist(),
            "kp": self.kp.tolist(),
            "kd": self.kd.tolist(),
            "reward_terms": {k: float(v) for k, v in self.reward_terms.items()},
            "torque_applied": self.torque_applied.tolist(),
            "obj_omega": self.obj_omega,
            "obj_speed": self.obj_speed,
            "obj_theta": self.obj_theta,
            "done": self.done,
            "fail": self.fail,
        }


def compute_reward(omega, n_contacts, num_fingers: int, action, torque, fail, cfg: TaskConfig) -> dict:
    """The four reward terms; works on scalars or on batches (leading axis)."""
    w = cfg.reward_weights
    omega = np.asarray(omega, dtype=np.float64)
    rot = w.w_rot * np.clip(cfg.rotation_sign * omega, -cfg.target_omega, cfg.target_omega)
    contact = w.w_contact * (np.asarray(n_contacts, dtype=np.float64) / num_fingers)
    a = np.asarray(action, dtype=np.float64)
    t = np.asarray(torque, dtype=np.float64)
    smooth = -w.w_action * np.sum(a * a, axis=-1) - w.w_torque * np.sum(t * t, axis=-1)
    term = np.where(np.asarray(fail, dtype=bool), -w.w_term, 0.0)
    return {"rotation": rot, "contact": contact, "smoothness": smooth, "terminate": term}


def total_reward(terms: dict):
    return terms["rotation"] + terms["contact"] + terms["smoothness"] + terms["terminate"]


def _fail_mask(obj_pose: np.ndarray, init_pose: np.ndarray, cfg: TaskConfig) -> np.ndarray:
    if cfg.task == "rotation":
        return obj_pose[..., 1] < cfg.fail_drop_y
    travel = np.hypot(obj_pose[..., 0] - init_pose[..., 0], obj_pose[..., 1] - init_pose[..., 1])
    return travel > cfg.fail_travel


def check_termination(s: SimState, cfg: TaskConfig, initial_obj_pose, step_index: int = 0) -> tuple[bool, bool]:
    """(done, fail): rotation fails below ``fail_drop_y``; flipping fails beyond ``fail_travel``."""
    fail = bool(_fail_mask(np.asarray(s.obj_pose), np.asarray(initial_obj_pose, dtype=np.float64), cfg))
    return fail or step_index >= cfg.episode_len, fail


def wrap_angle(a):
    return (np.asarray(a) + math.pi) % (2 * math.pi) - math.pi


class VecEnv:
    """A batch of independent environments sharing one scene layout.

    ``gain_jitter`` scales the applied gains by a per-episode uniform factor in
    [1 - j, 1 + j] (controller randomization); ``gain_map`` maps commanded
    gains onto a different controller regime before they reach the simulator.
    Observations always record the commanded gains.
    """

    def __init__(
        self,
        task: TaskConfig,
        scene: SceneConfig,
        n: int,
        bounds: GainBounds = GainBounds(),
        seed: int = 0,
        gain_map: Optional[GainMap] = None,
        gain_jitter: float = 0.0,
        props_override: Optional[PhysProps] = None,
    ):
        task.validate()
        bounds.validate()
        self.task = task
        self.scene = scene
        self.bounds = bounds
        self.n = n
        self.gain_map = gain_map
        self.gain_jitter = gain_jitter
        self.props_override = props_override
        self.model = SceneModel(scene, PhysProps())
        nj, nf = scene.num_joints, scene.num_fingers
        self.nj, self.nf = nj, nf
        self.hlen = max(task.history_len, task.oracle_stack)
        self.q = np.zeros((n, nj))
        self.dq = np.zeros((n, nj))
        self.obj = np.zeros((n, 3))
        self.objv = np.zeros((n, 3))
        self.q_des = np.zeros((n, nj))
        self.kp = np.zeros((n, nj))
        self.kd = np.zeros((n, nj))
        self.gain_scale = np.ones((n, 2))
        self.dims = np.zeros((n, 2))
        self.omass = np.ones(n)
        self.oinertia = np.ones(n)
        self.mu = np.zeros((n, 3))  # scale, mass, friction
        self.cont = np.zeros((n, nf, 3))
        self.gcont = np.zeros((n, self.model.num_ground_points, 3))
        self.tau_mean = np.zeros((n, nj))
        self.status = np.zeros(n, dtype=np.int64)
        self.init_obj = np.zeros((n, 3))
        self.t = np.zeros(n, dtype=np.int64)
        self.done = np.ones(n, dtype=bool)
        self.robot_hist = np.zeros((n, self.hlen, 4 * nj))
        self.obj_hist = np.zeros((n, task.oracle_stack, OBJ_INFO_DIM))
        root = np.random.SeedSequence(seed)
        self.rngs = [np.random.default_rng(s) for s in root.spawn(n)]
        self._kargs = kernel_args(self.model)

    # -- observation helpers -------------------------------------------------
    def _robot_frame(self, idx) -> np.ndarray:
        return np.concatenate([self.q[idx], self.q_des[idx], self.kp[idx], self.kd[idx]], axis=-1)

    def _obj_frame(self, idx) -> np.ndarray:
        o = self.obj[idx]
        pose = np.stack([o[..., 0], o[..., 1], wrap_angle(o[..., 2])], axis=-1)
        return np.concatenate([pose, self.mu[idx]], axis=-1)

    def oracle_obs(self) -> np.ndarray:
        k = self.task.oracle_stack
        robot = self.robot_hist[:, -k:, :]
        return np.concatenate([robot, self.obj_hist], axis=-1).reshape(self.n, -1)

    def student_obs(self) -> np.ndarray:
        return self.robot_hist[:, -self.task.history_len:, :].copy()

    def observation(self, i: int) -> Observation:
        return Observation(self.oracle_obs()[i].copy(), self.student_obs()[i])

    def props(self, i: int) -> PhysProps:
        return PhysProps(scale=self.mu[i, 0], mass=self.mu[i, 1], friction=self.mu[i, 2])

    # -- reset -----------------------------------------------------------------
    def sample_props(self, rng: np.random.Generator) -> PhysProps:
        r = self.task.randomization
        scale = rng.uniform(*r.scale)
        mass = rng.uniform(*r.mass)
        friction = rng.uniform(*r.friction)
        return PhysProps(scale=scale, mass=mass, friction=friction)

    def reset_env(self, i: int, seed: Optional[int] = None) -> None:
        if seed is not None:
            self.rngs[i] = np.random.default_rng(seed)
        rng = self.rngs[i]
        props = self.sample_props(rng)
        if self.props_override is not None:
            props = self.props_override
        model = SceneModel(self.scene, props)
        r = self.task.randomization
        q = np.array(self.scene.rest_pose, dtype=np.float64)
        q = q + rng.uniform(-r.pose_jitter, r.pose_jitter, size=q.shape)
        q = np.clip(q, model.jlim[:, 0], model.jlim[:, 1])
        jit = self.gain_jitter
        self.gain_scale[i] = rng.uniform(1 - jit, 1 + jit, size=2) if jit > 0 else 1.0
        self.q[i] = q
        self.dq[i] = 0.0
        self.obj[i] = resolve_object_start(model, q)
        self.objv[i] = 0.0
        self.dims[i] = model.dims
        self.omass[i] = props.mass
        self.oinertia[i] = model.inertia
        self.mu[i] = (props.scale, props.mass, props.friction)
        g = manual_gains(self.nj)
        self.kp[i], self.kd[i] = g.kp, g.kd
        self.q_des[i] = q
        # let the object come to rest on the hand or the ground
        for _ in range(self.task.settle_steps):
            self._advance_one(i, np.zeros(2))
        self.q_des[i] = self.q[i]
        self.init_obj[i] = self.obj[i]
        self.t[i] = 0
        self.done[i] = False
        self.robot_hist[i] = self._robot_frame(i)
        self.obj_hist[i] = self._obj_frame(i)

    def reset_all(self, seeds=None) -> np.ndarray:
        for i in range(self.n):
            self.reset_env(i, None if seeds is None else seeds[i])
        return self.oracle_obs()

    def _applied_gains(self, idx):
        kp = self.kp[idx] * self.gain_scale[idx, 0:1]
        kd = self.kd[idx] * self.gain_scale[idx, 1:2]
        m = self.gain_map
        if m is not None:
            kp = np.clip(m.kp_scale * kp + m.kp_offset, m.target.kp_min, m.target.kp_max)
            kd = np.clip(m.kd_scale * kd + m.kd_offset, m.target.kd_min, m.target.kd_max)
        return kp, kd

    def _advance_one(self, i: int, fext: np.ndarray) -> int:
        kp, kd = self._applied_gains(slice(i, i + 1))
        c = self.scene.contact
        return K.advance(
            self.q[i], self.dq[i], self.obj[i], self.objv[i], self.q_des[i], kp[0], kd[0],
            self.tau_mean[i], True, fext, *self._kargs,
            self.dims[i], self.omass[i], self.oinertia[i], self.mu[i, 2],
            c.k_n, c.c_n, c.slip_vel_eps, self.bounds.tau_max, self.task.sim_dt, self.task.substeps,
            self.cont[i], self.gcont[i], self.tau_mean[i],
        )

    # -- step ------------------------------------------------------------------
    def step(self, actions: np.ndarray, kp: np.ndarray, kd: np.ndarray) -> dict:
        """Advance every not-done environment one control step.

        Returns a dict of per-env arrays: reward, the four reward terms, action
        (clamped delta), torque, omega, vel, speed, theta, n_contacts, done, fail,
        active.
        """
        task, b = self.task, self.bounds
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n, self.nj)
        kp = np.asarray(kp, dtype=np.float64).reshape(self.n, self.nj)
        kd = np.asarray(kd, dtype=np.float64).reshape(self.n, self.nj)
        if not (np.all(np.isfinite(actions)) and np.all(np.isfinite(kp)) and np.all(np.isfinite(kd))):
            raise ContractError("actions and gains must be finite")
        active = ~self.done
        a = np.clip(actions, -task.delta_max, task.delta_max)
        a[~active] = 0.0
        lim = self.model.jlim
        self.q_des = np.where(active[:, None], np.clip(self.q_des + a, lim[:, 0], lim[:, 1]), self.q_des)
        self.kp = np.where(active[:, None], np.clip(kp, b.kp_min, b.kp_max), self.kp)
        self.kd = np.where(active[:, None], np.clip(kd, b.kd_min, b.kd_max), self.kd)
        fext = np.zeros((self.n, 2))
        if task.disturbance.enabled:
            d = task.disturbance
            for i in np.flatnonzero(active):
                rng = self.rngs[i]
                if rng.random() < d.probability:
                    fext[i] = rng.normal(0.0, d.force_std, size=2)
        theta0 = self.obj[:, 2].copy()
        xy0 = self.obj[:, :2].copy()
        kp_app, kd_app = self._applied_gains(slice(None))
        c = self.scene.contact
        self.status[:] = 0
        K.advance_batch(
            self.q, self.dq, self.obj, self.objv, self.q_des, kp_app, kd_app, self.tau_mean, True, fext,
            *self._kargs, self.dims, self.omass, self.oinertia, np.ascontiguousarray(self.mu[:, 2]),
            c.k_n, c.c_n, c.slip_vel_eps, b.tau_max, task.sim_dt, task.substeps,
            self.cont, self.gcont, self.tau_mean, self.status, active,
        )
        diverged = active & (self.status != K.STATUS_OK)
        if np.any(diverged):
            # keep the batch finite; the episode is over anyway
            for arr in (self.q, self.dq, self.obj, self.objv, self.tau_mean):
                arr[diverged] = np.nan_to_num(arr[diverged], nan=0.0, posinf=0.0, neginf=0.0)
        omega = np.where(active, (self.obj[:, 2] - theta0) / task.control_dt, 0.0)
        vel = np.where(active[:, None], (self.obj[:, :2] - xy0) / task.control_dt, 0.0)
        speed = np.hypot(vel[:, 0], vel[:, 1])
        self.t[active] += 1
        fail = active & (_fail_mask(self.obj, self.init_obj, task) | diverged)
        done = active & (fail | (self.t >= task.episode_len))
        n_contacts = np.sum(self.cont[:, :, 1] > task.contact_threshold, axis=1)
        terms = compute_reward(omega, n_contacts, self.nf, a, self.tau_mean, fail, task)
        for k in terms:
            terms[k] = np.where(active, terms[k], 0.0)
        # shift histories of the envs that moved
        idx = np.flatnonzero(active)
        self.robot_hist[idx, :-1] = self.robot_hist[idx, 1:]
        self.robot_hist[idx, -1] = self._robot_frame(idx)
        self.obj_hist[idx, :-1] = self.obj_hist[idx, 1:]
        self.obj_hist[idx, -1] = self._obj_frame(idx)
        self.done |= done
        return {
            "reward": total_reward(terms),
            "terms": terms,
            "action": a,
            "torque": self.tau_mean.copy(),
            "omega": omega,
            "vel": vel,
            "speed": speed,
            "theta": self.obj[:, 2] - self.init_obj[:, 2],
            "n_contacts": n_contacts,
            "done": done,
            "fail": fail,
            "active": active,
        }

    def sim_state(self, i: int) -> SimState:
        return SimState(
            self.q[i].copy(), self.dq[i].copy(), self.obj[i].copy(), self.objv[i].copy(),
            self.cont[i].copy(), self.gcont[i].copy(), float(self.t[i] * self.task.control_dt),
            SceneModel(self.scene, self.props(i)),
        )


def reset(
    cfg: TaskConfig,
    scene: SceneConfig,
    seed: int,
    bounds: GainBounds = GainBounds(),
    **kwargs,
) -> tuple[VecEnv, Observation]:
    env = VecEnv(cfg, scene, 1, bounds=bounds, seed=seed, **kwargs)
    env.reset_env(0, seed=seed)
    return env, env.observation(0)


def env_step(env: VecEnv, action, gains, trace: Optional[IO[str]] = None) -> tuple[Observation, float, StepRecord]:
    """Single-environment step; ``gains`` is a GainVector."""
    if env.n != 1:
        raise ContractError("env_step drives a single environment; use VecEnv.step for batches")
    if env.done[0]:
        raise ContractError("episode is done; call reset")
    out = env.step(np.asarray(action)[None], np.asarray(gains.kp)[None], np.asarray(gains.kd)[None])
    obs = env.observation(0)
    rec = StepRecord(
        obs=obs,
        action=out["action"][0].copy(),
        kp=env.kp[0].copy(),
        kd=env.kd[0].copy(),
        reward_terms={k: float(v[0]) for k, v in out["terms"].items()},
        torque_applied=out["torque"][0],
        obj_omega=float(out["omega"][0]),
        obj_speed=float(out["speed"][0]),
        obj_theta=float(out["theta"][0]),
        done=bool(out["done"][0]),
        fail=bool(out["fail"][0]),
        step=int(env.t[0]),
    )
    if trace is not None:
        trace.write(json.dumps(rec.to_json()) + "\n")
    return obs, float(out["reward"][0]), rec
