"""Evaluation metrics, baseline orchestration, physics sweeps and comparison tables.

Three methods are evaluated with students:

* ``ours``: action module plus gain module (gains queried by the predicted action)
* ``ours_no_pd``: the same action module with the manual-tuning gains
* ``manual_tuning``: an action module distilled from the fixed-gain oracle, run with
  the manual-tuning gains

Fixed-gain methods keep the per-episode controller jitter of the fixed-gain oracle.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from dexgain.controller import GainBounds, GainMap, manual_gains
from dexgain.distill import StudentModule, StudentPolicy, episode_seed, write_rows
from dexgain.dynamics import PhysProps, SceneConfig
from dexgain.errors import ConfigError, ContractError
from dexgain.ppo import OraclePolicy
from dexgain.tasks import TaskConfig, VecEnv

METHODS = ("manual_tuning", "ours_no_pd", "ours")
METRICS = ("rotr", "ttf", "objvel", "torque", "net_rad")
EPISODE_COLUMNS = ["method", "seed", "episode", "disturbance", "scale", "mass", "friction", *METRICS, "mean_kp",
                   "mean_kd"]
SWEEP_COLUMNS = ["grid_mass", "grid_friction", "grid_scale", *EPISODE_COLUMNS]
COMPARE_COLUMNS = ["method", "disturbance", "n"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]


@dataclass
class Trajectory:
    """Per-step record of one episode, truncated at done."""

    rotation: np.ndarray  # (T,) rotation reward term
    fail: np.ndarray  # (T,) bool
    obj_vel: np.ndarray  # (T, 2) object linear velocity
    torque: np.ndarray  # (T, J) mean applied torque
    theta: np.ndarray  # (T,) object angle relative to the start
    kp: np.ndarray  # (T, J) commanded
    kd: np.ndarray
    task: str = "rotation"
    w_torque: float = 0.05
    rotation_sign: float = 1.0

    def __len__(self) -> int:
        return len(self.rotation)


def metric_rotr(traj: Trajectory) -> float:
    """Sum of the per-step rotation reward over the episode."""
    if len(traj) == 0:
        raise ContractError("empty trajectory")
    return float(np.sum(traj.rotation))


def metric_ttf(traj: Trajectory, episode_len: int) -> int:
    """1-based step of the first failure, or ``episode_len`` if the object never failed."""
    hits = np.flatnonzero(np.asarray(traj.fail, dtype=bool))
    return int(hits[0]) + 1 if len(hits) else int(episode_len)


def metric_objvel(traj: Trajectory) -> float:
    if traj.task != "rotation":
        raise ContractError("object velocity is only defined for the rotation task")
    v = np.asarray(traj.obj_vel, dtype=np.float64)
    return float(np.mean(np.hypot(v[:, 0], v[:, 1]))) if len(v) else 0.0


def metric_torque(traj: Trajectory) -> float:
    """Mean per-step torque penalty magnitude, w_torque * ||tau||^2 (lower is better)."""
    t = np.asarray(traj.torque, dtype=np.float64)
    return float(np.mean(traj.w_torque * np.sum(t * t, axis=-1))) if len(t) else 0.0


def metric_net_rad(traj: Trajectory) -> float:
    """Net object rotation in the target direction, in radians."""
    return float(traj.rotation_sign * traj.theta[-1]) if len(traj) else 0.0


def episode_metrics(traj: Trajectory, episode_len: int) -> dict:
    return {
        "rotr": metric_rotr(traj),
        "ttf": metric_ttf(traj, episode_len),
        "objvel": metric_objvel(traj) if traj.task == "rotation" else float("nan"),
        "torque": metric_torque(traj),
        "net_rad": metric_net_rad(traj),
        "mean_kp": float(np.mean(traj.kp)),
        "mean_kd": float(np.mean(traj.kd)),
    }


# -- rollouts ---------------------------------------------------------------------

PolicyFn = Callable[[VecEnv], tuple]


def rollout(
    policy_fn: PolicyFn,
    task: TaskConfig,
    scene: SceneConfig,
    n_episodes: int,
    seed: int,
    bounds: GainBounds = GainBounds(),
    gain_jitter: float = 0.0,
    gain_map: Optional[GainMap] = None,
    props_override: Optional[PhysProps] = None,
    batch: int = 50,
    stream: int = 2,
) -> list:
    """Run seeded episodes in batches; returns ``(episode, props, Trajectory)`` in episode order.

    Episode ``e`` always sees the same initial state and disturbances for a
    given seed, whatever the batch size.
    """
    out = []
    w = task.reward_weights
    for start in range(0, n_episodes, batch):
        eps = list(range(start, min(start + batch, n_episodes)))
        env = VecEnv(task, scene, len(eps), bounds=bounds, seed=seed, gain_map=gain_map,
                     gain_jitter=gain_jitter, props_override=props_override)
        for j, e in enumerate(eps):
            env.reset_env(j, seed=episode_seed(seed, e, stream))
        props = [env.props(j) for j in range(len(eps))]
        logs = {k: [] for k in ("rotation", "fail", "vel", "torque", "theta", "kp", "kd", "active")}
        while not env.done.all():
            dq, kp, kd = policy_fn(env)
            info = env.step(dq, kp, kd)
            logs["rotation"].append(info["terms"]["rotation"])
            logs["fail"].append(info["fail"])
            logs["vel"].append(info["vel"])
            logs["torque"].append(info["torque"])
            logs["theta"].append(info["theta"])
            logs["kp"].append(env.kp.copy())
            logs["kd"].append(env.kd.copy())
            logs["active"].append(info["active"])
        arr = {k: np.stack(v, axis=1) for k, v in logs.items()}
        for j, e in enumerate(eps):
            n = int(arr["active"][j].sum())
            traj = Trajectory(
                rotation=arr["rotation"][j, :n], fail=arr["fail"][j, :n], obj_vel=arr["vel"][j, :n],
                torque=arr["torque"][j, :n], theta=arr["theta"][j, :n], kp=arr["kp"][j, :n],
                kd=arr["kd"][j, :n], task=task.task, w_torque=w.w_torque, rotation_sign=task.rotation_sign,
            )
            out.append((e, props[j], traj))
    return out


def student_policy_fn(policy: StudentPolicy) -> PolicyFn:
    return lambda env: policy.act(env.student_obs())


def oracle_policy_fn(policy: OraclePolicy) -> PolicyFn:
    return lambda env: policy.act(env.oracle_obs())


# -- reports ----------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    method: str = "ours"
    n_episodes: int = 50
    seed: int = 0
    disturbance: bool = False
    props_override: Optional[PhysProps] = None
    gain_map: Optional[GainMap] = None
    fixed_gain_jitter: float = 0.1
    batch: int = 50

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError("eval.method", f"must be one of {METHODS}, got {self.method!r}")
        if self.n_episodes <= 0:
            raise ConfigError("eval.n_episodes", "must be > 0")
        if not 0 <= self.fixed_gain_jitter < 1:
            raise ConfigError("eval.fixed_gain_jitter", "must be in [0, 1)")


@dataclass
class EvalReport:
    method: str
    seed: int
    rows: list = field(default_factory=list)

    def values(self, metric: str, disturbance: bool = False) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["disturbance"] == disturbance], dtype=np.float64)

    def mean(self, metric: str, disturbance: bool = False) -> float:
        v = self.values(metric, disturbance)
        return float(np.mean(v)) if len(v) else float("nan")

    def aggregate(self) -> dict:
        out = {}
        for dist in sorted({r["disturbance"] for r in self.rows}):
            agg = {"n": len(self.values("rotr", dist))}
            for m in METRICS:
                v = self.values(m, dist)
                agg[m] = (float(np.mean(v)), float(np.std(v)))
            out[dist] = agg
        return out

    def to_csv(self, path) -> Path:
        return write_rows(path, EPISODE_COLUMNS, self.rows)


def _rows_from(method: str, seed: int, disturbance: bool, results: list, episode_len: int) -> list:
    rows = []
    for e, props, traj in results:
        row = {"method": method, "seed": seed, "episode": e, "disturbance": disturbance, "scale": props.scale,
               "mass": props.mass, "friction": props.friction}
        row.update(episode_metrics(traj, episode_len))
        rows.append(row)
    return rows


def _module(ref, what: str) -> StudentModule:
    if ref is None:
        raise ContractError(f"missing {what} checkpoint")
    if isinstance(ref, StudentModule):
        return ref
    if not Path(ref).is_file():
        raise ContractError(f"{what} checkpoint not found: {ref}")
    return StudentModule.load(ref)


def build_policy(method: str, checkpoints: dict) -> StudentPolicy:
    """``checkpoints`` maps ``action`` (and ``gain`` for ``ours``) to paths or loaded modules."""
    action = _module(checkpoints.get("action"), f"{method} action")
    if method == "ours":
        return StudentPolicy(action, _module(checkpoints.get("gain"), "ours gain"))
    return StudentPolicy(action, fixed_gains=manual_gains(action.nj))


def _episodes(policy_fn, cfg: EvalConfig, task: TaskConfig, scene: SceneConfig, bounds: GainBounds,
              jitter: float, method: str) -> list:
    tasks = [(False, task)]
    if cfg.disturbance:
        tasks.append((True, dataclasses.replace(task, disturbance=dataclasses.replace(task.disturbance,
                                                                                      enabled=True))))
    elif task.disturbance.enabled:
        tasks = [(True, task)]
    rows = []
    for flag, t in tasks:
        res = rollout(policy_fn, t, scene, cfg.n_episodes, cfg.seed, bounds, jitter, cfg.gain_map,
                      cfg.props_override, cfg.batch)
        rows += _rows_from(method, cfg.seed, flag, res, t.episode_len)
    return rows


def run_eval(cfg: EvalConfig, task: TaskConfig, scene: SceneConfig, checkpoints: dict,
             bounds: GainBounds = GainBounds(), out_csv=None) -> EvalReport:
    """Seeded closed-loop evaluation of one method (undisturbed and disturbed as a pair when requested)."""
    cfg.validate()
    policy = build_policy(cfg.method, checkpoints)
    jitter = 0.0 if cfg.method == "ours" else cfg.fixed_gain_jitter
    report = EvalReport(cfg.method, cfg.seed,
                        _episodes(student_policy_fn(policy), cfg, task, scene, bounds, jitter, cfg.method))
    if out_csv is not None:
        report.to_csv(out_csv)
    return report


def evaluate_oracle(policy: OraclePolicy, task: TaskConfig, scene: SceneConfig, n_episodes: int = 50,
                    seed: int = 0, **kw) -> EvalReport:
    """Deterministic oracle evaluation; a fixed-gain oracle keeps its training jitter."""
    cfg = EvalConfig(n_episodes=n_episodes, seed=seed, **kw)
    jitter = float(policy.meta.get("gain_jitter", 0.0))
    name = "oracle_fixed" if policy.fixed_gains is not None else "oracle"
    return EvalReport(name, seed, _episodes(oracle_policy_fn(policy), cfg, task, scene, policy.bounds, jitter,
                                            name))


def sweep_physics(grid: dict, cfg: EvalConfig, task: TaskConfig, scene: SceneConfig, checkpoints: dict,
                  bounds: GainBounds = GainBounds(), out_csv=None) -> list:
    """run_eval at every (mass, friction, scale) grid point; missing axes use the range midpoints."""
    r = task.randomization
    axes = {k: list(grid.get(k) or [0.5 * (getattr(r, k)[0] + getattr(r, k)[1])]) for k in ("mass", "friction", "scale")}
    rows = []
    for m in axes["mass"]:
        for f in axes["friction"]:
            for s in axes["scale"]:
                point = dataclasses.replace(cfg, props_override=PhysProps(scale=float(s), mass=float(m),
                                                                          friction=float(f)))
                rep = run_eval(point, task, scene, checkpoints, bounds)
                for row in rep.rows:
                    rows.append(dict(row, grid_mass=float(m), grid_friction=float(f), grid_scale=float(s)))
    if out_csv is not None:
        write_rows(out_csv, SWEEP_COLUMNS, rows)
    return rows


def compare(reports: list, out_csv=None) -> str:
    """Methods as rows, metrics as columns (mean and std); returns the plain-text table."""
    rows = []
    for rep in reports:
        for dist, agg in rep.aggregate().items():
            row = {"method": rep.method, "disturbance": dist, "n": agg["n"]}
            for m in METRICS:
                row[f"{m}_mean"], row[f"{m}_std"] = agg[m]
            rows.append(row)
    if out_csv is not None:
        write_rows(out_csv, COMPARE_COLUMNS, rows)
    buf = io.StringIO()
    head = f"{'method':<16}{'dist':<6}" + "".join(f"{m:>20}" for m in METRICS)
    buf.write(head + "\n" + "-" * len(head) + "\n")
    for row in rows:
        cells = []
        for m in METRICS:
            mu, sd = row[f"{m}_mean"], row[f"{m}_std"]
            cells.append(f"{'n/a':>20}" if math.isnan(mu) else f"{mu:>11.3f} ± {sd:<6.3f}")
        buf.write(f"{row['method']:<16}{'yes' if row['disturbance'] else 'no':<6}" + "".join(cells) + "\n")
    return buf.getvalue()


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
