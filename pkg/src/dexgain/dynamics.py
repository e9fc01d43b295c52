"""Planar multi-finger simulator with penalty contacts and regularized Coulomb friction.

Each finger is a planar serial chain of one or two uniform rods driven by joint
torques. The manipulated object is a free rigid disk or box. Fingertips are
spheres of radius ``tip_radius`` centred on the distal link end; the object can
also touch a horizontal ground line. Integration is semi-implicit Euler with
1 ms substeps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Optional, Sequence

import numpy as np

from dexgain import _kernels as K
from dexgain.errors import ConfigError, ContractError, DivergenceError


@dataclass(frozen=True)
class ObjectShape:
    kind: str = "disk"  # "disk" | "box"
    radius: float = 0.05
    half_w: float = 0.03
    half_h: float = 0.03


@dataclass(frozen=True)
class GroundPlane:
    present: bool = False
    height: float = 0.0


@dataclass(frozen=True)
class ContactParams:
    k_n: float = 5000.0
    c_n: float = 10.0
    slip_vel_eps: float = 1e-3

    def validate(self) -> None:
        if not self.k_n > 0:
            raise ConfigError("contact.k_n", "must be > 0")
        if not self.c_n >= 0:
            raise ConfigError("contact.c_n", "must be >= 0")
        if not self.slip_vel_eps > 0:
            raise ConfigError("contact.slip_vel_eps", "must be > 0")


@dataclass(frozen=True)
class SceneConfig:
    num_fingers: int = 3
    links_per_finger: int = 2
    link_lengths: tuple = (0.06, 0.04)
    link_masses: tuple = (0.03, 0.02)
    finger_base_poses: tuple = ((-0.055, 0.0, math.pi / 2), (0.0, 0.0, math.pi / 2), (0.055, 0.0, math.pi / 2))
    joint_damping_passive: float = 0.01
    joint_armature: float = 1e-3
    joint_limits: tuple = ((-1.3, 1.3), (-1.8, 1.8)) * 3
    gravity: float = 9.81
    tip_radius: float = 0.008
    object_shape: ObjectShape = field(default_factory=ObjectShape)
    ground_plane: GroundPlane = field(default_factory=GroundPlane)
    # rest pose of all joints; object start (x, y, theta) and how y is resolved
    rest_pose: tuple = (0.0,) * 6
    object_start: tuple = (0.0, 0.13, 0.0)
    object_placement: str = "tips"  # "tips" | "ground" | "fixed"
    contact: ContactParams = field(default_factory=ContactParams)

    @property
    def num_joints(self) -> int:
        return self.num_fingers * self.links_per_finger

    def validate(self) -> None:
        if self.num_fingers < 1:
            raise ConfigError("scene.num_fingers", "must be >= 1")
        if self.links_per_finger not in (1, 2):
            raise ConfigError("scene.links_per_finger", f"must be 1 or 2, got {self.links_per_finger}")
        nl, nj = self.links_per_finger, self.num_joints
        if len(self.link_lengths) != nl or any(not v > 0 for v in self.link_lengths):
            raise ConfigError("scene.link_lengths", f"need {nl} positive lengths")
        if len(self.link_masses) != nl or any(not v > 0 for v in self.link_masses):
            raise ConfigError("scene.link_masses", f"need {nl} positive masses")
        if len(self.finger_base_poses) != self.num_fingers or any(len(p) != 3 for p in self.finger_base_poses):
            raise ConfigError("scene.finger_base_poses", f"need {self.num_fingers} (x, y, angle) triples")
        if len(self.joint_limits) != nj:
            raise ConfigError("scene.joint_limits", f"need {nj} (lo, hi) pairs")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ConfigError("scene.joint_limits", f"lo {lo} must be < hi {hi}")
        if len(self.rest_pose) != nj:
            raise ConfigError("scene.rest_pose", f"need {nj} joint angles")
        if self.joint_damping_passive < 0:
            raise ConfigError("scene.joint_damping_passive", "must be >= 0")
        if self.joint_armature < 0:
            raise ConfigError("scene.joint_armature", "must be >= 0")
        if self.tip_radius < 0:
            raise ConfigError("scene.tip_radius", "must be >= 0")
        shape = self.object_shape
        if shape.kind == "disk":
            if not shape.radius > 0:
                raise ConfigError("scene.object_shape.radius", "must be > 0")
        elif shape.kind == "box":
            if not (shape.half_w > 0 and shape.half_h > 0):
                raise ConfigError("scene.object_shape", "box half extents must be > 0")
        else:
            raise ConfigError("scene.object_shape.kind", f"unknown shape {shape.kind!r}")
        if self.object_placement not in ("tips", "ground", "fixed"):
            raise ConfigError("scene.object_placement", f"unknown placement {self.object_placement!r}")
        if self.object_placement == "ground" and not self.ground_plane.present:
            raise ConfigError("scene.object_placement", "ground placement needs a ground plane")
        self.contact.validate()


@dataclass(frozen=True)
class PhysProps:
    scale: float = 1.0
    mass: float = 0.1
    friction: float = 0.8

    def validate(self) -> None:
        for name in ("scale", "mass", "friction"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"props.{name}", f"must be finite and > 0, got {v}")
        if self.friction > 2.0:
            raise ConfigError("props.friction", f"must be <= 2.0, got {self.friction}")


def object_geometry(shape: ObjectShape, props: PhysProps) -> tuple[int, np.ndarray, float]:
    """Kernel shape id, scaled dims and rotational inertia for an object."""
    if shape.kind == "disk":
        r = shape.radius * props.scale
        return K.SHAPE_DISK, np.array([r, 0.0]), 0.5 * props.mass * r * r
    hw, hh = shape.half_w * props.scale, shape.half_h * props.scale
    return K.SHAPE_BOX, np.array([hw, hh]), props.mass * (4 * hw * hw + 4 * hh * hh) / 12.0


class SceneModel:
    """Immutable kernel-ready arrays for one (SceneConfig, PhysProps) pair."""

    def __init__(self, cfg: SceneConfig, props: PhysProps):
        cfg.validate()
        props.validate()
        self.cfg = cfg
        self.props = props
        nf, nl = cfg.num_fingers, cfg.links_per_finger
        self.base = np.array(cfg.finger_base_poses, dtype=np.float64).reshape(nf, 3)
        self.lens = np.tile(np.array(cfg.link_lengths, dtype=np.float64), (nf, 1))
        self.masses = np.tile(np.array(cfg.link_masses, dtype=np.float64), (nf, 1))
        self.jlim = np.array(cfg.joint_limits, dtype=np.float64).reshape(-1, 2)
        self.kind, self.dims, self.inertia = object_geometry(cfg.object_shape, props)
        self.num_ground_points = 1 if self.kind == K.SHAPE_DISK else 4
        for a in (self.base, self.lens, self.masses, self.jlim, self.dims):
            a.setflags(write=False)

    @property
    def num_joints(self) -> int:
        return self.cfg.num_joints

    @property
    def num_fingers(self) -> int:
        return self.cfg.num_fingers


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    obj_pose: np.ndarray  # x, y, theta
    obj_vel: np.ndarray  # vx, vy, omega
    contacts: np.ndarray  # (num_fingers, 3): active, normal force, tangential force
    ground_contacts: np.ndarray  # (num_ground_points, 3)
    time: float
    scene: SceneModel

    def copy(self) -> "SimState":
        return SimState(
            self.q.copy(), self.qdot.copy(), self.obj_pose.copy(), self.obj_vel.copy(),
            self.contacts.copy(), self.ground_contacts.copy(), self.time, self.scene,
        )

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "q": self.q.tolist(),
            "qdot": self.qdot.tolist(),
            "obj_pose": self.obj_pose.tolist(),
            "obj_vel": self.obj_vel.tolist(),
            "contacts": self.contacts.tolist(),
            "ground_contacts": self.ground_contacts.tolist(),
        }


def finger_ik(base: Sequence[float], lens: Sequence[float], target: Sequence[float], elbow: float = 1.0) -> tuple:
    """Joint angles placing a two-link fingertip at ``target`` (planar IK)."""
    bx, by, phi = base
    dx, dy = target[0] - bx, target[1] - by
    # express target in the finger base frame
    lx = math.cos(phi) * dx + math.sin(phi) * dy
    ly = -math.sin(phi) * dx + math.cos(phi) * dy
    l1, l2 = lens
    c2 = (lx * lx + ly * ly - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if abs(c2) > 1:
        raise ConfigError("scene.rest_pose", f"IK target {tuple(target)} out of reach")
    q2 = elbow * math.acos(c2)
    q1 = math.atan2(ly, lx) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    return q1, q2


def _tips_from(q: np.ndarray, base: np.ndarray, lens: np.ndarray) -> np.ndarray:
    nf, nl = lens.shape
    tips = np.empty((nf, 2))
    for f in range(nf):
        x, y, a = base[f]
        for k in range(nl):
            a += q[f * nl + k]
            x += lens[f, k] * math.cos(a)
            y += lens[f, k] * math.sin(a)
        tips[f] = (x, y)
    return tips


def fingertip_positions(s: SimState, cfg: Optional[SceneConfig] = None) -> np.ndarray:
    """Planar forward kinematics: (num_fingers, 2) distal link tip positions."""
    if cfg is None:
        model = s.scene
        return _tips_from(s.q, model.base, model.lens)
    nf, nl = cfg.num_fingers, cfg.links_per_finger
    base = np.array(cfg.finger_base_poses, dtype=np.float64).reshape(nf, 3)
    lens = np.tile(np.array(cfg.link_lengths, dtype=np.float64), (nf, 1))
    return _tips_from(np.asarray(s.q, dtype=np.float64), base, lens)


def resolve_object_start(model: SceneModel, q: np.ndarray) -> np.ndarray:
    """Object start pose: resting on the fingertips, on the ground, or as configured."""
    cfg = model.cfg
    x, y, th = cfg.object_start
    if cfg.object_placement == "ground":
        half = model.dims[0] if model.kind == K.SHAPE_DISK else model.dims[1]
        y = cfg.ground_plane.height + half
        th = 0.0 if model.kind == K.SHAPE_DISK else th
    elif cfg.object_placement == "tips":
        reach = model.dims[0] + cfg.tip_radius
        heights = []
        for tx, ty in _tips_from(q, model.base, model.lens):
            dx = tx - x
            if abs(dx) < reach:
                heights.append(ty + math.sqrt(reach * reach - dx * dx))
        if not heights:
            raise ConfigError("scene.object_start", "no fingertip lies under the object")
        y = max(heights)
    return np.array([x, y, th], dtype=np.float64)


def make_scene(cfg: SceneConfig, props: PhysProps, seed: int = 0, jitter: float = 0.0) -> SimState:
    """Fingers at rest pose (optionally jittered), object at its start pose, at rest."""
    model = SceneModel(cfg, props)
    rng = np.random.default_rng(seed)
    q = np.array(cfg.rest_pose, dtype=np.float64)
    if jitter > 0:
        q = q + rng.uniform(-jitter, jitter, size=q.shape)
    q = np.clip(q, model.jlim[:, 0], model.jlim[:, 1])
    return SimState(
        q=q,
        qdot=np.zeros_like(q),
        obj_pose=resolve_object_start(model, q),
        obj_vel=np.zeros(3),
        contacts=np.zeros((cfg.num_fingers, 3)),
        ground_contacts=np.zeros((model.num_ground_points, 3)),
        time=0.0,
        scene=model,
    )


def kernel_args(model: SceneModel) -> tuple:
    """Scene-level positional arguments shared by every kernel call."""
    c = model.cfg
    return (
        c.num_fingers, c.links_per_finger, model.base, model.lens, model.masses,
        c.joint_armature, c.joint_damping_passive, model.jlim, c.gravity, c.tip_radius,
        c.ground_plane.present, c.ground_plane.height, model.kind,
    )


def _advance(
    s: SimState,
    q_des: np.ndarray,
    kp: np.ndarray,
    kd: np.ndarray,
    tau: np.ndarray,
    pd_on: bool,
    external_force,
    dt: float,
    substeps: int,
    tau_max: float,
    trace: Optional[IO[str]],
) -> tuple[SimState, np.ndarray]:
    if not dt > 0:
        raise ContractError(f"dt must be > 0, got {dt}")
    if substeps < 1:
        raise ContractError(f"substeps must be >= 1, got {substeps}")
    model = s.scene
    nxt = s.copy()
    fext = np.asarray(external_force, dtype=np.float64).reshape(2)
    tau_mean = np.zeros(model.num_joints)
    c = model.cfg.contact
    status = K.advance(
        nxt.q, nxt.qdot, nxt.obj_pose, nxt.obj_vel, q_des, kp, kd, tau, pd_on, fext,
        *kernel_args(model), model.dims, model.props.mass, model.inertia, model.props.friction,
        c.k_n, c.c_n, c.slip_vel_eps, tau_max, dt, substeps,
        nxt.contacts, nxt.ground_contacts, tau_mean,
    )
    nxt.time = s.time + dt * substeps
    if trace is not None:
        trace.write(json.dumps(nxt.to_dict()) + "\n")
    if status != K.STATUS_OK:
        raise DivergenceError(f"non-finite state at t={nxt.time:.4f}s")
    return nxt, tau_mean


def step_dynamics(
    s: SimState,
    tau,
    external_force=(0.0, 0.0),
    dt: float = 1e-3,
    substeps: int = 50,
    trace: Optional[IO[str]] = None,
) -> SimState:
    """Advance ``substeps`` substeps of length ``dt`` with joint torques held constant.

    Returns a new state; ``s`` is not modified. Raises DivergenceError if the
    result is non-finite.
    """
    tau = np.asarray(tau, dtype=np.float64)
    nj = s.scene.num_joints
    if tau.shape != (nj,) or not np.all(np.isfinite(tau)):
        raise ContractError(f"tau must be {nj} finite values")
    zeros = np.zeros(nj)
    return _advance(s, zeros, zeros, zeros, tau, False, external_force, dt, substeps, np.inf, trace)[0]


def step_pd(
    s: SimState,
    q_des,
    kp,
    kd,
    tau_max: float,
    external_force=(0.0, 0.0),
    dt: float = 1e-3,
    substeps: int = 50,
    trace: Optional[IO[str]] = None,
) -> tuple[SimState, np.ndarray]:
    """Like step_dynamics, but re-evaluates the saturated PD torque every substep.

    Returns the new state and the mean applied torque over the substeps.
    """
    as64 = lambda v: np.ascontiguousarray(v, dtype=np.float64)
    return _advance(s, as64(q_des), as64(kp), as64(kd), np.zeros(s.scene.num_joints), True,
                    external_force, dt, substeps, tau_max, trace)


def finger_mass_matrix(model: SceneModel, q: np.ndarray) -> np.ndarray:
    """Block-diagonal joint-space mass matrix including armature."""
    nj, nl = model.num_joints, model.cfg.links_per_finger
    M = np.zeros((nj, nj))
    Mf, bias, J = np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2))
    tip, vtip = np.zeros(2), np.zeros(2)
    zero = np.zeros(nj)
    for f in range(model.num_fingers):
        i0 = f * nl
        K._finger_model(q, zero, i0, nl, *model.base[f], model.lens[f], model.masses[f],
                        model.cfg.joint_armature, 0.0, Mf, bias, J, tip, vtip)
        M[i0:i0 + nl, i0:i0 + nl] = Mf[:nl, :nl]
    return M


def _finger_potential(model: SceneModel, q: np.ndarray) -> float:
    g = model.cfg.gravity
    nl = model.cfg.links_per_finger
    pe = 0.0
    for f in range(model.num_fingers):
        x, y, a = model.base[f]
        for k in range(nl):
            a += q[f * nl + k]
            L, m = model.lens[f, k], model.masses[f, k]
            pe += m * g * (y + 0.5 * L * math.sin(a))
            y += L * math.sin(a)
    return pe


def mechanical_energy(s: SimState) -> float:
    """Kinetic plus gravitational energy of fingers and object (contact springs excluded)."""
    model = s.scene
    M = finger_mass_matrix(model, s.q)
    ke = 0.5 * s.qdot @ M @ s.qdot
    m = model.props.mass
    vx, vy, om = s.obj_vel
    ke += 0.5 * m * (vx * vx + vy * vy) + 0.5 * model.inertia * om * om
    pe = _finger_potential(model, s.q) + m * model.cfg.gravity * s.obj_pose[1]
    return float(ke + pe)


def total_normal_force(s: SimState, ground: bool = True) -> float:
    arr = s.ground_contacts if ground else s.contacts
    return float(arr[:, 1].sum())


def with_props(s: SimState, props: PhysProps) -> SimState:
    """Same mechanical state, different object properties."""
    out = s.copy()
    out.scene = SceneModel(s.scene.cfg, props)
    return out


def rotation_scene(**overrides) -> SceneConfig:
    """Three upward fingers cradling a disk from below."""
    base = ((-0.055, 0.0, math.pi / 2), (0.0, 0.0, math.pi / 2), (0.055, 0.0, math.pi / 2))
    lens = (0.06, 0.04)
    targets = ((-0.042, 0.090), (0.0, 0.072), (0.042, 0.090))
    elbows = (1.0, 1.0, -1.0)
    rest = tuple(a for b, t, e in zip(base, targets, elbows) for a in finger_ik(b, lens, t, e))
    cfg = SceneConfig(
        finger_base_poses=base,
        link_lengths=lens,
        rest_pose=rest,
        object_shape=ObjectShape(kind="disk", radius=0.05),
        ground_plane=GroundPlane(present=False),
        object_start=(0.0, 0.13, 0.0),
        object_placement="tips",
    )
    return replace(cfg, **overrides)


def flipping_scene(**overrides) -> SceneConfig:
    """Three downward fingers above a box resting on the ground."""
    base = ((-0.05, 0.16, -math.pi / 2), (0.0, 0.16, -math.pi / 2), (0.05, 0.16, -math.pi / 2))
    lens = (0.06, 0.04)
    targets = ((-0.035, 0.075), (0.0, 0.075), (0.035, 0.075))
    elbows = (1.0, 1.0, -1.0)
    rest = tuple(a for b, t, e in zip(base, targets, elbows) for a in finger_ik(b, lens, t, e))
    cfg = SceneConfig(
        finger_base_poses=base,
        link_lengths=lens,
        rest_pose=rest,
        joint_limits=((-1.3, 1.3), (-2.0, 2.0)) * 3,
        object_shape=ObjectShape(kind="box", half_w=0.03, half_h=0.03),
        ground_plane=GroundPlane(present=True, height=0.0),
        object_start=(0.0, 0.03, 0.0),
        object_placement="ground",
    )
    return replace(cfg, **overrides)
