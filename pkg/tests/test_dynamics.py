import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgain import _kernels as K
from dexgain.dynamics import (
    PhysProps,
    SceneConfig,
    flipping_scene,
    fingertip_positions,
    kernel_args,
    make_scene,
    mechanical_energy,
    rotation_scene,
    step_dynamics,
    step_pd,
    total_normal_force,
)
from dexgain.errors import ConfigError, ContractError, DivergenceError

G = 9.81


def pendulum_scene(length=0.1, mass=0.05):
    return SceneConfig(
        num_fingers=1, links_per_finger=1, link_lengths=(length,), link_masses=(mass,),
        finger_base_poses=((0.0, 0.5, -math.pi / 2),), joint_limits=((-3.0, 3.0),), rest_pose=(0.05,),
        joint_damping_passive=0.0, joint_armature=0.0, object_placement="fixed", object_start=(5.0, 5.0, 0.0),
    )


def pendulum_period(length: float, mass: float) -> float:
    s = make_scene(pendulum_scene(length, mass), PhysProps())
    qs = [s.q[0]]
    analytic = 2 * math.pi * math.sqrt(2 * length / (3 * G))
    for _ in range(int(5.5 * analytic / 1e-3)):
        s = step_dynamics(s, np.zeros(1), substeps=1)
        qs.append(s.q[0])
    qs = np.array(qs)
    t = np.arange(len(qs)) * 1e-3
    crossings = [t[i] - qs[i] * 1e-3 / (qs[i + 1] - qs[i]) for i in range(len(qs) - 1) if qs[i] > 0 >= qs[i + 1]]
    assert len(crossings) >= 6  # at least five full periods
    return float(np.mean(np.diff(crossings[:6])))


def hold_pd(s, steps, kp=6.0, kd=0.15):
    nj = s.scene.num_joints
    q_des = np.array(s.scene.cfg.rest_pose)
    for _ in range(steps):
        s, _ = step_pd(s, q_des, np.full(nj, kp), np.full(nj, kd), 0.8)
    return s


def test_make_scene_contract():
    cfg = rotation_scene()
    s = make_scene(cfg, PhysProps(), seed=0)
    assert np.array_equal(s.q, np.array(cfg.rest_pose))
    assert np.all(s.obj_vel == 0) and np.all(s.qdot == 0)
    s2 = make_scene(cfg, PhysProps(), seed=0)
    assert s.to_dict() == s2.to_dict()


def test_make_scene_invalid_config():
    with pytest.raises(ConfigError, match="links_per_finger"):
        make_scene(rotation_scene(links_per_finger=0), PhysProps())
    with pytest.raises(ConfigError, match="friction"):
        make_scene(rotation_scene(), PhysProps(friction=3.0))
    with pytest.raises(ConfigError, match="joint_limits"):
        make_scene(rotation_scene(joint_limits=((1.0, -1.0),) * 6), PhysProps())


def test_rotation_object_cradled_on_fingertips():
    s = make_scene(rotation_scene(), PhysProps())
    tips = fingertip_positions(s)
    assert s.obj_pose[1] > tips[:, 1].max()


def test_flipping_object_on_ground():
    cfg = flipping_scene()
    s = make_scene(cfg, PhysProps())
    assert s.obj_pose[1] == pytest.approx(cfg.object_shape.half_h)


def test_equilibrium_without_forces():
    cfg = rotation_scene(gravity=0.0, object_placement="fixed", object_start=(5.0, 5.0, 0.0))
    s = make_scene(cfg, PhysProps())
    s2 = step_dynamics(s, np.zeros(6))
    assert np.array_equal(s2.q, s.q) and np.array_equal(s2.qdot, s.qdot)
    assert np.array_equal(s2.obj_pose, s.obj_pose) and np.array_equal(s2.obj_vel, s.obj_vel)


def test_step_contracts():
    s = make_scene(rotation_scene(), PhysProps())
    with pytest.raises(ContractError):
        step_dynamics(s, np.zeros(6), dt=0.0)
    with pytest.raises(ContractError):
        step_dynamics(s, np.zeros(6), substeps=0)
    with pytest.raises(ContractError):
        step_dynamics(s, np.full(6, np.nan))
    with pytest.raises(ContractError):
        step_dynamics(s, np.zeros(5))


def test_divergence_raises():
    s = make_scene(rotation_scene(), PhysProps())
    with pytest.raises(DivergenceError):
        step_dynamics(s, np.zeros(6), external_force=(1e308, 1e308), dt=1.0)


def test_step_is_pure_and_deterministic():
    s = make_scene(rotation_scene(), PhysProps(), seed=3, jitter=0.05)
    before = s.to_dict()
    a = step_dynamics(s, np.full(6, 0.05), (0.1, -0.2))
    b = step_dynamics(s, np.full(6, 0.05), (0.1, -0.2))
    assert s.to_dict() == before
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize("length,mass", [(0.1, 0.05), (0.06, 0.03), (0.2, 0.1)])
def test_pendulum_period(length, mass):
    analytic = 2 * math.pi * math.sqrt(2 * length / (3 * G))  # uniform rod about its end
    assert abs(pendulum_period(length, mass) - analytic) / analytic < 0.02


@pytest.mark.parametrize("mass", [0.05, 0.1, 0.4])
def test_static_ground_normal_force(mass):
    s = hold_pd(make_scene(flipping_scene(), PhysProps(mass=mass)), 40)
    assert np.all(s.contacts[:, 1] == 0)  # fingers clear of the box
    assert abs(total_normal_force(s) - mass * G) / (mass * G) < 0.05


def _advance_with_friction(s, mu, steps):
    """Kernel-level stepping with an arbitrary friction coefficient (PhysProps forbids 0)."""
    m = s.scene
    c = m.cfg.contact
    nj = m.num_joints
    q_des, kp, kd = np.array(m.cfg.rest_pose), np.full(nj, 6.0), np.full(nj, 0.15)
    q, qdot, pose, vel = s.q.copy(), s.qdot.copy(), s.obj_pose.copy(), s.obj_vel.copy()
    cont, ground = s.contacts.copy(), s.ground_contacts.copy()
    history = []
    for k in range(steps):
        push = np.array([0.3 * math.sin(0.3 * k), 0.0])  # lateral push so tangential slip is excited
        status = K.advance(q, qdot, pose, vel, q_des, kp, kd, np.zeros(nj), True, push, *kernel_args(m),
                           m.dims, m.props.mass, m.inertia, mu, c.k_n, c.c_n, c.slip_vel_eps, 0.8, 1e-3, 50,
                           cont, ground, np.zeros(nj))
        assert status == K.STATUS_OK
        history.append((cont.copy(), ground.copy()))
    return history


@pytest.mark.parametrize("scene", [rotation_scene, flipping_scene])
def test_zero_friction_zero_tangential(scene):
    s = make_scene(scene(), PhysProps())
    hist = _advance_with_friction(s, 0.0, 30)
    assert any(c[:, 1].sum() + g[:, 1].sum() > 0 for c, g in hist)  # contacts did occur
    assert all(np.all(c[:, 2] == 0.0) and np.all(g[:, 2] == 0.0) for c, g in hist)
    hist = _advance_with_friction(s, 0.8, 30)
    assert any(np.any(c[:, 2] != 0.0) or np.any(g[:, 2] != 0.0) for c, g in hist)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.4), st.floats(0.3, 1.2))
def test_contact_force_signs(seed, mass, mu):
    s = make_scene(rotation_scene(), PhysProps(mass=mass, friction=mu), seed=seed, jitter=0.05)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        s, _ = step_pd(s, np.array(s.scene.cfg.rest_pose) + rng.normal(0, 0.05, 6), np.full(6, 6.0),
                       np.full(6, 0.15), 0.8)
        assert np.all(s.contacts[:, 1] >= 0)
        slack = 1e-9 + 1e-6 * s.contacts[:, 1]
        assert np.all(np.abs(s.contacts[:, 2]) <= mu * s.contacts[:, 1] + slack)


@pytest.mark.parametrize("seed", range(3))
def test_energy_non_increasing_with_damping(seed):
    cfg = rotation_scene(object_placement="fixed", object_start=(5.0, 5.0, 0.0), joint_damping_passive=0.01)
    s = make_scene(cfg, PhysProps(), seed=seed, jitter=0.3)
    s.qdot[:] = np.random.default_rng(seed).normal(0, 2, 6)
    e = mechanical_energy(s)
    for _ in range(30):
        s = step_dynamics(s, np.zeros(6))
        e2 = mechanical_energy(s)
        assert e2 <= e + 1e-9
        e = e2


def test_normal_force_scales_with_mass():
    f1 = total_normal_force(hold_pd(make_scene(flipping_scene(), PhysProps(mass=0.1)), 40))
    f3 = total_normal_force(hold_pd(make_scene(flipping_scene(), PhysProps(mass=0.3)), 40))
    assert abs(f3 / f1 - 3.0) / 3.0 < 0.05


def _fk_scene(base=(0.0, 0.0, 0.0)):
    return SceneConfig(num_fingers=1, links_per_finger=2, link_lengths=(0.06, 0.04), link_masses=(0.03, 0.02),
                       finger_base_poses=(base,), joint_limits=((-4.0, 4.0),) * 2, rest_pose=(0.0, 0.0),
                       object_placement="fixed", object_start=(5.0, 5.0, 0.0))


def test_fk_examples():
    cfg = _fk_scene()
    s = make_scene(cfg, PhysProps())
    assert np.allclose(fingertip_positions(s), [[0.10, 0.0]], atol=1e-15)
    s.q[:] = (math.pi / 2, 0.0)
    assert np.allclose(fingertip_positions(s), [[0.0, 0.10]], atol=1e-15)


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-3, 3))
def test_fk_matches_complex_rotation(q1, q2, bx, by, phi):
    cfg = _fk_scene((bx, by, phi))
    s = make_scene(cfg, PhysProps())
    s.q[:] = (q1, q2)
    z = complex(bx, by) + 0.06 * cmath.exp(1j * (phi + q1)) + 0.04 * cmath.exp(1j * (phi + q1 + q2))
    tip = fingertip_positions(s, cfg)[0]
    assert abs(tip[0] - z.real) < 1e-12 and abs(tip[1] - z.imag) < 1e-12
