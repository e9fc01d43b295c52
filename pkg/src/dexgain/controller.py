"""Joint-space PD torque law with per-step diagonal gains.

Desired joint velocities are always zero, so the law reduces to
``tau = kp * (q_d - q_c) - kd * qdot_c`` with elementwise saturation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dexgain.errors import ConfigError, ContractError

MANUAL_KP = 6.0
MANUAL_KD = 0.15


@dataclass
class GainVector:
    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=np.float64)
        self.kd = np.asarray(self.kd, dtype=np.float64)
        if self.kp.shape != self.kd.shape:
            raise ContractError(f"kp shape {self.kp.shape} != kd shape {self.kd.shape}")

    def __len__(self) -> int:
        return len(self.kp)

    def copy(self) -> "GainVector":
        return GainVector(self.kp.copy(), self.kd.copy())


@dataclass(frozen=True)
class GainBounds:
    kp_min: float = 0.5
    kp_max: float = 20.0
    kd_min: float = 0.01
    kd_max: float = 0.5
    tau_max: float = 0.8

    def validate(self) -> None:
        if not 0 < self.kp_min < self.kp_max:
            raise ConfigError("gains.kp_min/kp_max", "need 0 < kp_min < kp_max")
        if not 0 < self.kd_min < self.kd_max:
            raise ConfigError("gains.kd_min/kd_max", "need 0 < kd_min < kd_max")
        if not self.tau_max > 0:
            raise ConfigError("gains.tau_max", "must be > 0")

    def scaled(self, factor: float) -> "GainBounds":
        """Same bounds with every gain endpoint multiplied by ``factor``."""
        return GainBounds(self.kp_min * factor, self.kp_max * factor,
                          self.kd_min * factor, self.kd_max * factor, self.tau_max)

    def contains(self, g: GainVector, tol: float = 0.0) -> bool:
        return bool(
            np.all(g.kp >= self.kp_min - tol) and np.all(g.kp <= self.kp_max + tol)
            and np.all(g.kd >= self.kd_min - tol) and np.all(g.kd <= self.kd_max + tol)
        )


@dataclass
class GainMap:
    """Per-channel affine map ``out = scale * g + offset`` followed by a clamp to ``target``."""

    kp_scale: np.ndarray
    kp_offset: np.ndarray
    kd_scale: np.ndarray
    kd_offset: np.ndarray
    target: GainBounds

    def __post_init__(self):
        for name in ("kp_scale", "kp_offset", "kd_scale", "kd_offset"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.kp_scale <= 0) or np.any(self.kd_scale <= 0):
            raise ConfigError("gain_map.scale", "scales must be > 0")

    @classmethod
    def identity(cls, n: int, bounds: GainBounds) -> "GainMap":
        return cls(np.ones(n), np.zeros(n), np.ones(n), np.zeros(n), bounds)

    @classmethod
    def from_ranges(cls, src: GainBounds, dst: GainBounds, n: int) -> "GainMap":
        """Affine map sending the source gain range endpoints onto the target's."""
        kps = (dst.kp_max - dst.kp_min) / (src.kp_max - src.kp_min)
        kds = (dst.kd_max - dst.kd_min) / (src.kd_max - src.kd_min)
        return cls(
            np.full(n, kps), np.full(n, dst.kp_min - kps * src.kp_min),
            np.full(n, kds), np.full(n, dst.kd_min - kds * src.kd_min),
            dst,
        )

    def inverse(self, source: GainBounds) -> "GainMap":
        return GainMap(
            1.0 / self.kp_scale, -self.kp_offset / self.kp_scale,
            1.0 / self.kd_scale, -self.kd_offset / self.kd_scale,
            source,
        )


def manual_gains(n: int) -> GainVector:
    """The fixed hand-tuned gains used by the baselines."""
    return GainVector(np.full(n, MANUAL_KP), np.full(n, MANUAL_KD))


def pd_torque(q_d, q_c, qdot_c, gains: GainVector, tau_max: float) -> np.ndarray:
    q_d = np.asarray(q_d, dtype=np.float64)
    q_c = np.asarray(q_c, dtype=np.float64)
    qdot_c = np.asarray(qdot_c, dtype=np.float64)
    n = q_d.shape
    if q_c.shape != n or qdot_c.shape != n or gains.kp.shape != n:
        raise ContractError(
            f"length mismatch: q_d {q_d.shape}, q_c {q_c.shape}, qdot_c {qdot_c.shape}, gains {gains.kp.shape}"
        )
    tau = gains.kp * (q_d - q_c) - gains.kd * qdot_c
    return np.clip(tau, -tau_max, tau_max)


def clamp_gains(raw: GainVector, bounds: GainBounds) -> GainVector:
    if not (np.all(np.isfinite(raw.kp)) and np.all(np.isfinite(raw.kd))):
        raise ContractError("gains must be finite")
    return GainVector(
        np.clip(raw.kp, bounds.kp_min, bounds.kp_max),
        np.clip(raw.kd, bounds.kd_min, bounds.kd_max),
    )


def map_gains(g: GainVector, m: GainMap) -> GainVector:
    out = GainVector(m.kp_scale * g.kp + m.kp_offset, m.kd_scale * g.kd + m.kd_offset)
    return clamp_gains(out, m.target)


def action_to_setpoint(q_d_prev, a, delta_max: float, joint_limits) -> np.ndarray:
    """Integrate a clamped joint delta into the desired joint positions."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ContractError("action must be finite")
    lim = np.asarray(joint_limits, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(q_d_prev, dtype=np.float64) + np.clip(a, -delta_max, delta_max)
    return np.clip(q, lim[:, 0], lim[:, 1])


def normalize_gains(kp, kd, bounds: GainBounds) -> tuple[np.ndarray, np.ndarray]:
    """Affine map of gains into [0, 1] by the bounds."""
    return (
        (np.asarray(kp) - bounds.kp_min) / (bounds.kp_max - bounds.kp_min),
        (np.asarray(kd) - bounds.kd_min) / (bounds.kd_max - bounds.kd_min),
    )


def denormalize_gains(u_kp, u_kd, bounds: GainBounds) -> tuple[np.ndarray, np.ndarray]:
    return (
        bounds.kp_min + (bounds.kp_max - bounds.kp_min) * np.asarray(u_kp),
        bounds.kd_min + (bounds.kd_max - bounds.kd_min) * np.asarray(u_kd),
    )
