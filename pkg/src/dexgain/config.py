"""Experiment configuration: YAML files, ``--set`` overrides and the resolved snapshot.

Every section maps onto a frozen dataclass. Unknown keys are rejected with the
offending field path (and the YAML line when known). The scene section starts
from the preset for the chosen task, so a resolved snapshot, which spells out
every field, reloads to the same configuration.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from dexgain.controller import GainBounds
from dexgain.distill import NoiseSpec, StudentTrainConfig
from dexgain.dynamics import ContactParams, GroundPlane, ObjectShape, SceneConfig, flipping_scene, rotation_scene
from dexgain.errors import ConfigError
from dexgain.ppo import PpoConfig
from dexgain.tasks import Disturbance, Randomization, RewardWeights, TaskConfig


@dataclass(frozen=True)
class DistillSettings:
    n_episodes: int = 500
    collect_batch: int = 32
    format: str = "bin"
    sigma_q: float = 0.005
    epochs: int = 6
    lr: float = 1e-3
    batch_size: int = 256
    embed_dim: int = 32
    num_heads: int = 2
    hidden: int = 64

    def validate(self) -> None:
        if self.n_episodes < 0:
            raise ConfigError("distill.n_episodes", "must be >= 0")
        if self.format not in ("bin", "jsonl"):
            raise ConfigError("distill.format", "must be 'bin' or 'jsonl'")
        if self.sigma_q < 0:
            raise ConfigError("distill.sigma_q", "must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("distill.epochs", "need epochs >= 0 and batch_size >= 1")

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.sigma_q)

    def train_config(self, seed: int) -> StudentTrainConfig:
        return StudentTrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, seed=seed,
                                  embed_dim=self.embed_dim, num_heads=self.num_heads, hidden=self.hidden)


@dataclass(frozen=True)
class EvalSettings:
    n_episodes: int = 50
    seed: int = 1000
    disturbance: bool = False
    fixed_gain_jitter: float = 0.1
    batch: int = 50
    regime_scale: float = 1.0  # endpoints of the deployment gain regime, relative to the bounds

    def validate(self) -> None:
        if self.n_episodes <= 0:
            raise ConfigError("eval.n_episodes", "must be > 0")
        if self.regime_scale <= 0:
            raise ConfigError("eval.regime_scale", "must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    seed: int = 0
    output_dir: str = ""
    task: TaskConfig = field(default_factory=TaskConfig)
    scene: SceneConfig = field(default_factory=rotation_scene)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    distill: DistillSettings = field(default_factory=DistillSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    bounds: GainBounds = field(default_factory=GainBounds)

    def validate(self) -> None:
        self.task.validate()
        self.scene.validate()
        self.ppo.validate()
        self.distill.validate()
        self.eval.validate()
        try:
            self.bounds.validate()
        except ValueError as exc:
            raise ConfigError("bounds", str(exc)) from exc
        if self.task.task == "flipping" and not self.scene.ground_plane.present:
            raise ConfigError("scene.ground_plane.present", "flipping needs a ground plane")


SCENE_PRESETS = {"rotation": rotation_scene, "flipping": flipping_scene}


def _tupleize(v):
    return tuple(_tupleize(x) for x in v) if isinstance(v, (list, tuple)) else v


def _build(cls, data: Any, path: str, base=None, lines: Optional[dict] = None):
    """Recursively build dataclass ``cls`` from a mapping, starting from ``base`` (or the class defaults)."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else str(key)
            line = (lines or {}).get(where)
            raise ConfigError(where, "unknown key" + (f" (line {line})" if line else ""))
    obj = base if base is not None else cls()
    updates = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        hint = hints[key]
        current = getattr(obj, key)
        if is_dataclass(current) and not isinstance(current, type):
            updates[key] = _build(type(current), value, sub, current, lines)
        elif hint in (int, float, bool, str):
            updates[key] = _coerce(hint, value, sub, lines)
        else:
            updates[key] = _tupleize(value)
    try:
        return dataclasses.replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from exc


def _coerce(hint, value, path: str, lines):
    ok = (isinstance(value, bool) if hint is bool else
          isinstance(value, (int, float)) and not isinstance(value, bool) if hint is float else
          isinstance(value, int) and not isinstance(value, bool) if hint is int else isinstance(value, str))
    if not ok:
        line = (lines or {}).get(path)
        raise ConfigError(path, f"expected {hint.__name__}, got {value!r}" + (f" (line {line})" if line else ""))
    return float(value) if hint is float else value


def _key_lines(text: str) -> dict:
    """Dotted key path -> 1-based line number, from the YAML node tree."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[p] = k.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, "")
    return out


def parse_override(item: str) -> tuple[list, Any]:
    if "=" not in item:
        raise ConfigError(item, "override must look like a.b=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from exc
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = dict(data or {})
    for item in overrides or ():
        keys, value = parse_override(item)
        node = data
        for k in keys[:-1]:
            nxt = node.get(k)
            node[k] = dict(nxt) if isinstance(nxt, dict) else {}
            node = node[k]
        node[keys[-1]] = value
    return data


def config_from_dict(data: dict, lines: Optional[dict] = None) -> ExperimentConfig:
    data = dict(data or {})
    task_data = data.get("task") or {}
    task_name = task_data.get("task", "rotation") if isinstance(task_data, dict) else "rotation"
    if task_name not in SCENE_PRESETS:
        raise ConfigError("task.task", f"unknown task {task_name!r}")
    base = ExperimentConfig(scene=SCENE_PRESETS[task_name]())
    cfg = _build(ExperimentConfig, data, "", base, lines)
    cfg.validate()
    return cfg


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Parse a YAML file (or start from defaults) and apply ``a.b=c`` overrides."""
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text) if text else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "<yaml>"
        raise ConfigError(where, f"malformed YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return config_from_dict(apply_overrides(data, overrides), _key_lines(text))


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(asdict(cfg))


def dump_config(cfg: ExperimentConfig) -> str:
    """Resolved snapshot; loading it back gives an equal config."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=None)


__all__ = [
    "ContactParams",
    "DistillSettings",
    "Disturbance",
    "EvalSettings",
    "ExperimentConfig",
    "GroundPlane",
    "ObjectShape",
    "Randomization",
    "RewardWeights",
    "apply_overrides",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "load_config",
]
