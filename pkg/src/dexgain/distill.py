"""Oracle-to-student distillation.

The action module (self-attention over the proprioceptive history) predicts
joint deltas. The gain module (cross-attention, queried by the action) predicts
normalized PD gains. Both train open-loop on a dataset of deterministic oracle
rollouts and run closed-loop through :class:`StudentPolicy`.

Dataset directory layout::

    manifest.json   canonical JSON: configs, seed, episode lengths, stats
    samples.bin     packed records (see below), or
    samples.jsonl   one sample per line

``samples.bin`` uses the checkpoint record container with magic
``DXGDATA\\0`` and the arrays ``history (N, H, 4J)``, ``action (N, J)``,
``kp (N, J)``, ``kd (N, J)``, ``episode (N,)``, ``step (N,)`` and
``props (N, 3)`` = (scale, mass, friction), all float64 little-endian.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from dexgain.controller import GainBounds, GainVector, clamp_gains, denormalize_gains, normalize_gains
from dexgain.dynamics import PhysProps, SceneConfig
from dexgain.errors import ContractError
from dexgain.nets import tensor as T
from dexgain.nets.checkpoint import (
    canonical_json,
    decode_records,
    encode_records,
    load_checkpoint,
    save_checkpoint,
)
from dexgain.nets.layers import (
    AttentionSpec,
    cross_attention_forward,
    init_cross_attention,
    init_self_attention,
    self_attention_forward,
)
from dexgain.nets.optim import Adam, clip_grad_norm
from dexgain.nets.params import ParamSet
from dexgain.ppo import OraclePolicy, robot_frame_normalizer
from dexgain.tasks import TaskConfig, VecEnv, oracle_state_dim

log = logging.getLogger(__name__)

DATA_MAGIC = b"DXGDATA\x00"
DATASET_SCHEMA = "dexgain.dataset/1"
ARRAYS = ("history", "action", "kp", "kd", "episode", "step", "props")
PROBE_COLUMNS = ["episode", "step", "joint", "kp", "kd", "mass", "friction", "scale"]
LOSS_COLUMNS = ["epoch", "train_mse", "val_mse"]


@dataclass(frozen=True)
class NoiseSpec:
    sigma_q: float = 0.005

    def validate(self) -> None:
        if not self.sigma_q >= 0:
            raise ContractError("sigma_q must be >= 0")


@dataclass(frozen=True)
class StudentTrainConfig:
    epochs: int = 6
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    val_fraction: float = 0.1
    max_grad_norm: float = 1.0
    embed_dim: int = 32
    num_heads: int = 2
    hidden: int = 64


@dataclass
class Dataset:
    history: np.ndarray
    action: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    episode: np.ndarray
    step: np.ndarray
    props: np.ndarray
    manifest: dict

    def __len__(self) -> int:
        return int(self.action.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.manifest["num_joints"])

    def subset(self, idx) -> "Dataset":
        return Dataset(*(getattr(self, k)[idx] for k in ARRAYS), manifest=self.manifest)

    def gains(self) -> GainVector:
        return GainVector(self.kp, self.kd)


# -- persistence ------------------------------------------------------------------

def _float_list(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def _sample_json(ds: Dataset, i: int) -> dict:
    return {
        "episode": int(ds.episode[i]),
        "step": int(ds.step[i]),
        "history": [_float_list(row) for row in ds.history[i]],
        "target_action": _float_list(ds.action[i]),
        "target_gains": {"kp": _float_list(ds.kp[i]), "kd": _float_list(ds.kd[i])},
        "mu": {"scale": float(ds.props[i, 0]), "mass": float(ds.props[i, 1]), "friction": float(ds.props[i, 2])},
    }


def save_dataset(ds: Dataset, out_dir, fmt: str = "bin") -> Path:
    """Write manifest + samples; ``fmt`` is ``bin`` (packed) or ``jsonl``."""
    if fmt not in ("bin", "jsonl"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(ds.manifest, format=fmt, n_samples=len(ds))
    (out / "manifest.json").write_bytes(canonical_json(manifest) + b"\n")
    for stale in ("samples.bin", "samples.jsonl"):
        (out / stale).unlink(missing_ok=True)
    if fmt == "bin":
        arrays = [(k, getattr(ds, k)) for k in ARRAYS]
        (out / "samples.bin").write_bytes(encode_records(DATA_MAGIC, arrays, {"schema": DATASET_SCHEMA}))
    else:
        with open(out / "samples.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for i in range(len(ds)):
                fh.write(json.dumps(_sample_json(ds, i), separators=(",", ":")) + "\n")
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    nj, h = int(manifest["num_joints"]), int(manifest["history_len"])
    if manifest.get("format", "bin") == "bin":
        records, _ = decode_records(DATA_MAGIC, (path / "samples.bin").read_bytes())
        arr = dict(records)
        missing = set(ARRAYS) - set(arr)
        if missing:
            raise ValueError(f"dataset missing arrays {sorted(missing)}")
        ds = Dataset(*(arr[k] for k in ARRAYS), manifest=manifest)
        ds.episode = ds.episode.astype(np.int64)
        ds.step = ds.step.astype(np.int64)
    else:
        rows = [json.loads(line) for line in (path / "samples.jsonl").read_text().splitlines() if line]
        ds = _empty_dataset(nj, h, manifest) if not rows else Dataset(
            history=np.array([r["history"] for r in rows], dtype=np.float64),
            action=np.array([r["target_action"] for r in rows], dtype=np.float64),
            kp=np.array([r["target_gains"]["kp"] for r in rows], dtype=np.float64),
            kd=np.array([r["target_gains"]["kd"] for r in rows], dtype=np.float64),
            episode=np.array([r["episode"] for r in rows], dtype=np.int64),
            step=np.array([r["step"] for r in rows], dtype=np.int64),
            props=np.array([[r["mu"]["scale"], r["mu"]["mass"], r["mu"]["friction"]] for r in rows]),
            manifest=manifest,
        )
    if len(ds) != manifest["n_samples"]:
        raise ValueError(f"manifest says {manifest['n_samples']} samples, found {len(ds)}")
    return ds


def _empty_dataset(nj: int, h: int, manifest: dict) -> Dataset:
    return Dataset(np.zeros((0, h, 4 * nj)), np.zeros((0, nj)), np.zeros((0, nj)), np.zeros((0, nj)),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 3)), manifest)


# -- collection -------------------------------------------------------------------

def episode_seed(seed: int, episode: int, stream: int) -> np.random.SeedSequence:
    """Seed for one episode; ``stream`` separates collection from evaluation."""
    return np.random.SeedSequence([int(seed), int(stream), int(episode)])


def check_oracle_compat(oracle: OraclePolicy, task: TaskConfig, scene: SceneConfig) -> None:
    m = oracle.meta
    problems = []
    if m["num_joints"] != scene.num_joints:
        problems.append(f"num_joints {m['num_joints']} != scene {scene.num_joints}")
    if m["obs_dim"] != oracle_state_dim(task, scene.num_joints):
        problems.append(f"obs_dim {m['obs_dim']} != task {oracle_state_dim(task, scene.num_joints)}")
    if m["delta_max"] != task.delta_max:
        problems.append(f"delta_max {m['delta_max']} != task {task.delta_max}")
    if m.get("task", task.task) != task.task:
        problems.append(f"oracle trained on {m['task']!r}, task is {task.task!r}")
    if problems:
        raise ContractError("oracle/task mismatch: " + "; ".join(problems))


def collect_dataset(
    oracle: OraclePolicy,
    task: TaskConfig,
    scene: SceneConfig,
    n_episodes: int,
    seed: int,
    batch: int = 32,
    props_override: Optional[PhysProps] = None,
) -> Dataset:
    """Deterministic (mean-action) oracle rollouts, every step recorded as a sample."""
    check_oracle_compat(oracle, task, scene)
    if n_episodes < 0:
        raise ContractError("n_episodes must be >= 0")
    nj, h = scene.num_joints, task.history_len
    per_episode: list = []
    lengths, fails, rotr = [], [], []
    for start in range(0, n_episodes, batch):
        eps = list(range(start, min(start + batch, n_episodes)))
        env = VecEnv(task, scene, len(eps), bounds=oracle.bounds, seed=seed,
                     gain_jitter=oracle.meta.get("gain_jitter", 0.0), props_override=props_override)
        for j, e in enumerate(eps):
            env.reset_env(j, seed=episode_seed(seed, e, 1))
        bufs = [{k: [] for k in ("history", "action", "kp", "kd", "step")} for _ in eps]
        rot = np.zeros(len(eps))
        failed = np.zeros(len(eps), dtype=bool)
        while not env.done.all():
            hist = env.student_obs()
            active = np.flatnonzero(~env.done)
            dq, kp, kd = oracle.act(env.oracle_obs())
            for j in active:
                b = bufs[j]
                b["history"].append(hist[j])
                b["action"].append(dq[j])
                b["kp"].append(kp[j])
                b["kd"].append(kd[j])
                b["step"].append(int(env.t[j]))
            info = env.step(dq, kp, kd)
            rot += info["terms"]["rotation"]
            failed |= info["fail"]
        for j, e in enumerate(eps):
            b = bufs[j]
            n = len(b["step"])
            per_episode.append((e, b, np.tile(env.mu[j], (n, 1))))
            lengths.append(n)
            fails.append(bool(failed[j]))
            rotr.append(float(rot[j]))
    manifest = {
        "schema": DATASET_SCHEMA,
        "task": asdict(task),
        "scene": asdict(scene),
        "bounds": asdict(oracle.bounds),
        "oracle_fixed_gains": oracle.fixed_gains is not None,
        "seed": int(seed),
        "n_episodes": int(n_episodes),
        "episode_lengths": lengths,
        "num_joints": nj,
        "history_len": h,
        "delta_max": task.delta_max,
        "props_override": None if props_override is None else asdict(props_override),
        "stats": {
            "fail_rate": float(np.mean(fails)) if fails else 0.0,
            "mean_rotr": float(np.mean(rotr)) if rotr else 0.0,
            "mean_len": float(np.mean(lengths)) if lengths else 0.0,
        },
    }
    if not per_episode or sum(lengths) == 0:
        return _empty_dataset(nj, h, dict(manifest, n_samples=0))
    def cat(key: str, tail: tuple) -> np.ndarray:
        return np.concatenate([np.asarray(b[key], dtype=np.float64).reshape((-1,) + tail) for _, b, _ in per_episode])

    ds = Dataset(
        history=cat("history", (h, 4 * nj)),
        action=cat("action", (nj,)),
        kp=cat("kp", (nj,)),
        kd=cat("kd", (nj,)),
        episode=np.concatenate([np.full(len(b["step"]), e, dtype=np.int64) for e, b, _ in per_episode]),
        step=np.concatenate([np.asarray(b["step"], dtype=np.int64) for _, b, _ in per_episode]),
        props=np.concatenate([p for _, _, p in per_episode]),
        manifest=dict(manifest, n_samples=int(sum(lengths))),
    )
    return ds


# -- student modules --------------------------------------------------------------

class StudentModule:
    """One trained student network (``kind`` is ``action`` or ``gain``) with its input normalization."""

    def __init__(self, params: ParamSet, meta: dict):
        self.params = params
        self.meta = meta
        self.kind = meta["kind"]
        self.spec = AttentionSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["spec"].items()})
        self.nj = meta["num_joints"]
        self.history_len = meta["history_len"]
        self.delta_max = meta["delta_max"]
        self.bounds = GainBounds(**meta["bounds"])
        self.tok_off = np.array(meta["token_offset"])
        self.tok_scale = np.array(meta["token_scale"])
        self._frozen = params.frozen()

    @classmethod
    def create(cls, kind: str, nj: int, history_len: int, delta_max: float, bounds: GainBounds,
               rest_pose, cfg: StudentTrainConfig, rng: np.random.Generator) -> "StudentModule":
        if kind not in ("action", "gain"):
            raise ValueError(kind)
        spec = AttentionSpec(
            token_dim_in=4 * nj,
            output_dim=nj if kind == "action" else 2 * nj,
            query_dim_in=nj if kind == "gain" else 0,
            embed_dim=cfg.embed_dim,
            num_heads=cfg.num_heads,
            mlp_head_dims=(cfg.hidden,),
            n_positions=max(16, history_len),
        )
        params = ParamSet()
        if kind == "action":
            init_self_attention(params, spec, rng, prefix="sa")
        else:
            init_cross_attention(params, spec, rng, prefix="ca")
        off, scale = robot_frame_normalizer(rest_pose, bounds)
        meta = {
            "kind": kind,
            "spec": asdict(spec),
            "num_joints": nj,
            "history_len": history_len,
            "delta_max": delta_max,
            "bounds": asdict(bounds),
            "token_offset": _float_list(off),
            "token_scale": _float_list(scale),
        }
        return cls(params, meta)

    @classmethod
    def load(cls, path) -> "StudentModule":
        params, meta = load_checkpoint(path)
        if meta.get("kind") not in ("action", "gain"):
            raise ContractError(f"{path} is not a student checkpoint")
        return cls(params, meta)

    def save(self, path) -> Path:
        return save_checkpoint(path, self.params, self.meta)

    def refresh(self) -> None:
        self._frozen = self.params.frozen()

    def check_history(self, history: np.ndarray) -> np.ndarray:
        history = np.asarray(history, dtype=np.float64)
        if history.ndim == 2:
            history = history[None]
        if history.ndim != 3 or history.shape[1:] != (self.history_len, 4 * self.nj):
            raise ContractError(f"history shape {history.shape[1:]} != ({self.history_len}, {4 * self.nj})")
        return history

    def tokens(self, history: np.ndarray) -> np.ndarray:
        return (history - self.tok_off) * self.tok_scale

    def forward(self, history, query=None, params: Optional[ParamSet] = None) -> T.Tensor:
        """Squashed output on the training scale: Δq / delta_max, or gains normalized to [0, 1]."""
        p = params if params is not None else self._frozen
        tok = self.tokens(history)
        if self.kind == "action":
            return T.tanh(self_attention_forward(p, tok, self.spec, prefix="sa"))
        q = np.asarray(query, dtype=np.float64) / self.delta_max
        return T.sigmoid(cross_attention_forward(p, q, tok, self.spec, prefix="ca"))

    def predict_action(self, history) -> np.ndarray:
        return self.delta_max * self.forward(self.check_history(history)).value

    def predict_gains(self, history, action) -> GainVector:
        history = self.check_history(history)
        action = np.asarray(action, dtype=np.float64).reshape(history.shape[0], self.nj)
        g = self.forward(history, action).value
        kp, kd = denormalize_gains(g[:, :self.nj], g[:, self.nj:], self.bounds)
        return clamp_gains(GainVector(kp, kd), self.bounds)


class StudentPolicy:
    """Action module first; its output queries the gain module. Without a gain module, gains are fixed."""

    def __init__(self, action: StudentModule, gain: Optional[StudentModule] = None,
                 fixed_gains: Optional[GainVector] = None):
        if gain is not None:
            for key in ("num_joints", "history_len"):
                if action.meta[key] != gain.meta[key]:
                    raise ContractError(f"action/gain checkpoints disagree on {key}")
        if gain is None and fixed_gains is None:
            raise ContractError("need a gain module or fixed gains")
        self.action = action
        self.gain = gain
        self.fixed_gains = fixed_gains

    def act(self, history) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        history = self.action.check_history(history)
        dq = self.action.predict_action(history)
        if self.gain is not None:
            g = self.gain.predict_gains(history, dq)
            return dq, g.kp, g.kd
        shape = dq.shape
        return dq, np.broadcast_to(self.fixed_gains.kp, shape).copy(), np.broadcast_to(self.fixed_gains.kd, shape).copy()


def student_act(action_ckpt, gain_ckpt, history) -> tuple[np.ndarray, GainVector]:
    """Single-history convenience wrapper; checkpoints may be paths or loaded modules."""
    a = action_ckpt if isinstance(action_ckpt, StudentModule) else StudentModule.load(action_ckpt)
    g = gain_ckpt if isinstance(gain_ckpt, StudentModule) else StudentModule.load(gain_ckpt)
    dq, kp, kd = StudentPolicy(a, g).act(history)
    return dq[0], GainVector(kp[0], kd[0])


# -- training ---------------------------------------------------------------------

def split_by_episode(episodes: np.ndarray, val_fraction: float, rng: np.random.Generator):
    uniq = np.unique(episodes)
    n_val = int(round(val_fraction * len(uniq))) if len(uniq) >= 2 else 0
    n_val = min(max(n_val, 1 if len(uniq) >= 2 and val_fraction > 0 else 0), len(uniq) - 1) if len(uniq) else 0
    val_eps = rng.permutation(uniq)[:n_val]
    is_val = np.isin(episodes, val_eps)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def add_q_noise(history: np.ndarray, nj: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise on the measured-joint (q^c) fields only."""
    if sigma == 0:
        return history
    out = history.copy()
    out[..., :nj] += rng.normal(0.0, sigma, size=out[..., :nj].shape)
    return out


def _targets(module: StudentModule, ds: Dataset) -> np.ndarray:
    if module.kind == "action":
        return ds.action / module.delta_max
    return np.concatenate(normalize_gains(ds.kp, ds.kd, module.bounds), axis=-1)


def _mse(module: StudentModule, ds: Dataset, idx: np.ndarray, chunk: int = 4096) -> float:
    if len(idx) == 0:
        return float("nan")
    y = _targets(module, ds)
    tot = 0.0
    for s in range(0, len(idx), chunk):
        j = idx[s:s + chunk]
        pred = module.forward(ds.history[j], ds.action[j]).value
        tot += float(np.sum((pred - y[j]) ** 2))
    return tot / (len(idx) * y.shape[1])


@dataclass
class StudentResult:
    module: StudentModule
    losses: list


def train_student_module(
    kind: str,
    ds: Dataset,
    noise: NoiseSpec = NoiseSpec(),
    cfg: StudentTrainConfig = StudentTrainConfig(),
    out_dir=None,
) -> StudentResult:
    """Open-loop regression of one student module; the gain module is teacher-forced with dataset actions.

    Losses are MSE on the module's output scale (Δq / delta_max, or gains
    normalized by the bounds). Writes ``<kind>.ckpt`` and ``<kind>_loss.csv``.
    """
    noise.validate()
    if len(ds) == 0:
        raise ContractError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    m = ds.manifest
    bounds = GainBounds(**m["bounds"])
    module = StudentModule.create(kind, ds.num_joints, int(m["history_len"]), float(m["delta_max"]), bounds,
                                  m["scene"]["rest_pose"], cfg, rng)
    tr, va = split_by_episode(ds.episode, cfg.val_fraction, rng)
    y = _targets(module, ds)
    opt = Adam(module.params, lr=cfg.lr)
    losses = []
    nj = ds.num_joints
    for epoch in range(cfg.epochs):
        hist = ds.history.copy()
        hist[tr] = add_q_noise(hist[tr], nj, noise.sigma_q, rng)
        perm = rng.permutation(tr)
        tot, cnt = 0.0, 0
        for s in range(0, len(perm), cfg.batch_size):
            j = perm[s:s + cfg.batch_size]
            module.params.zero_grad()
            pred = module.forward(hist[j], ds.action[j], params=module.params)
            loss = T.mean(T.square(T.sub(pred, y[j])))
            loss.backward()
            grads = module.params.grads()
            clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(grads)
            tot += float(loss.value) * len(j)
            cnt += len(j)
        module.refresh()
        row = {"epoch": epoch + 1, "train_mse": tot / max(cnt, 1), "val_mse": _mse(module, ds, va)}
        losses.append(row)
        log.info("%s epoch %d train %.5f val %.5f", kind, epoch + 1, row["train_mse"], row["val_mse"])
    module.meta["noise_sigma_q"] = noise.sigma_q
    module.meta["train"] = asdict(cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        module.save(out / f"{kind}.ckpt")
        write_rows(out / f"{kind}_loss.csv", LOSS_COLUMNS, losses)
    return StudentResult(module, losses)


def train_action_module(ds: Dataset, noise: NoiseSpec = NoiseSpec(), epochs: int = 6, lr: float = 1e-3,
                        seed: int = 0, out_dir=None, **kw) -> StudentResult:
    cfg = StudentTrainConfig(epochs=epochs, lr=lr, seed=seed, **kw)
    return train_student_module("action", ds, noise, cfg, out_dir)


def train_gain_module(ds: Dataset, noise: NoiseSpec = NoiseSpec(), epochs: int = 6, lr: float = 1e-3,
                      seed: int = 0, out_dir=None, **kw) -> StudentResult:
    cfg = StudentTrainConfig(epochs=epochs, lr=lr, seed=seed, **kw)
    return train_student_module("gain", ds, noise, cfg, out_dir)


# -- probing ----------------------------------------------------------------------

def probe_gain_module(gain: StudentModule, ds: Dataset, out_csv=None, per_joint: bool = False) -> list:
    """Gain predictions with the dataset's ground-truth actions as queries.

    One row per sample (``joint`` = ``mean``, gains averaged over joints), or
    one row per sample and joint with ``per_joint``.
    """
    if gain.kind != "gain":
        raise ContractError("probe needs a gain-module checkpoint")
    if len(ds) and ds.history.shape[1:] != (gain.history_len, 4 * gain.nj):
        raise ContractError(f"dataset history {ds.history.shape[1:]} does not fit the gain module")
    rows = []
    for s in range(0, len(ds), 4096):
        j = np.arange(s, min(s + 4096, len(ds)))
        g = gain.predict_gains(ds.history[j], ds.action[j])
        for r, i in enumerate(j):
            base = {"episode": int(ds.episode[i]), "step": int(ds.step[i]), "scale": float(ds.props[i, 0]),
                    "mass": float(ds.props[i, 1]), "friction": float(ds.props[i, 2])}
            if per_joint:
                for k in range(gain.nj):
                    rows.append(dict(base, joint=k, kp=float(g.kp[r, k]), kd=float(g.kd[r, k])))
            else:
                rows.append(dict(base, joint="mean", kp=float(g.kp[r].mean()), kd=float(g.kd[r].mean())))
    if out_csv is not None:
        write_rows(out_csv, PROBE_COLUMNS, rows)
    return rows


def write_rows(path, columns: list, rows: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def mass_buckets(masses: np.ndarray, n: int = 3) -> np.ndarray:
    """Bucket index per sample by equal-width mass bins."""
    lo, hi = float(np.min(masses)), float(np.max(masses))
    if math.isclose(lo, hi):
        return np.zeros(len(masses), dtype=int)
    return np.minimum(((masses - lo) / (hi - lo) * n).astype(int), n - 1)
