from __future__ import annotations

import math

import numpy as np
import pytest

from harness import quiet
from johnnyvon import engine
from johnnyvon.model import ArmKind, Bond, BondKind, MachineState, UndefinedAngleError
from johnnyvon.physics import (
    CounterRNG,
    IntegrityError,
    SpatialIndex,
    WorldConfig,
    accumulate_forces,
    arm_tip,
    bond_energy,
    bond_force,
    bond_in_tolerance,
    brownian_kick,
    brownian_kicks,
    build_grid,
    desired_relative_angle,
    fields_overlap,
    geometry_in_tolerance,
    integrate_step,
    neighbours_within,
    wrap_angle,
)

CFG = WorldConfig()
SIDE = Bond(BondKind.SIDEWAYS, 0, 1, ArmKind.RIGHT, ArmKind.LEFT, 0.0)
UPB = Bond(BondKind.UP, 0, 1, ArmKind.UP, ArmKind.UP, math.pi)


def machine(i=0, x=0.0, y=0.0, angle=0.0, t=2, folded=0):
    return MachineState(type=t, id=i, x=x, y=y, angle=angle, folded=folded)


@pytest.mark.parametrize(
    "arm,angle,expected",
    [
        (ArmKind.RIGHT, 0.0, (1.0, 0.0)),
        (ArmKind.LEFT, 0.0, (-1.0, 0.0)),
        (ArmKind.UP, 0.0, (0.0, 0.75)),
        (ArmKind.REPELLOR, 0.0, (0.0, 0.5)),
        (ArmKind.OVERLAP, 0.0, (0.0, -0.5)),
        (ArmKind.RIGHT, math.pi / 2, (0.0, 1.0)),
        (ArmKind.UP, math.pi, (0.0, -0.75)),
        (ArmKind.LEFT, -math.pi / 2, (0.0, 1.0)),
    ],
)
def test_arm_tip(arm, angle, expected):
    x, y = arm_tip((0.0, 0.0), angle, arm, CFG)
    assert x == pytest.approx(expected[0], abs=1e-12)
    assert y == pytest.approx(expected[1], abs=1e-12)


def test_arm_tip_translates():
    x, y = arm_tip((3.0, -2.0), 0.0, ArmKind.RIGHT, CFG)
    assert (x, y) == pytest.approx((4.0, -2.0))


def test_field_overlap_is_strict():
    cfg = WorldConfig(field_radius=0.5)  # reach 1.0, exact in binary
    a = machine(0)
    # right tip of a at (1, 0); left tip of b at x - 1
    at = machine(1, x=3.0)
    inside = machine(1, x=np.nextafter(3.0, 0.0))
    assert not fields_overlap(a, ArmKind.RIGHT, at, ArmKind.LEFT, cfg)
    assert fields_overlap(a, ArmKind.RIGHT, inside, ArmKind.LEFT, cfg)


def test_tolerance_is_inclusive():
    p = CFG.to_params()
    limit = CFG.distance_tolerance + 2 * CFG.field_radius
    assert geometry_in_tolerance(limit, CFG.angle_tolerance, p)
    assert geometry_in_tolerance(limit, -CFG.angle_tolerance, p)
    assert not geometry_in_tolerance(np.nextafter(limit, 2 * limit), 0.0, p)
    assert not geometry_in_tolerance(0.0, np.nextafter(CFG.angle_tolerance, 1.0), p)


def test_bond_in_tolerance_uses_targets():
    a = machine(0, folded=1)
    # folded 2-2 bond wants b turned clockwise by 120 degrees
    b = machine(1, x=2.0, folded=1)
    assert not bond_in_tolerance(SIDE, a, b, CFG)
    b_turned = machine(1, x=2.0, angle=-math.radians(120), folded=1)
    # left tip of b must sit on the right tip of a
    lx, ly = arm_tip((0.0, 0.0), b_turned.angle, ArmKind.LEFT, CFG)
    b_turned = machine(1, x=1.0 - lx, y=-ly, angle=b_turned.angle, folded=1)
    assert bond_in_tolerance(SIDE, a, b_turned, CFG)


def test_desired_relative_angle():
    a, b = machine(0, folded=1), machine(1, folded=1)
    assert desired_relative_angle(SIDE, a, b) == pytest.approx(-math.radians(120))
    assert desired_relative_angle(SIDE, machine(0), b) == 0.0
    assert desired_relative_angle(UPB, a, b) == pytest.approx(math.pi)
    # the same bond seen from the other end
    rev = Bond(BondKind.SIDEWAYS, 1, 0, ArmKind.LEFT, ArmKind.RIGHT, 0.0)
    assert desired_relative_angle(rev, b, a) == pytest.approx(math.radians(120))
    with pytest.raises(UndefinedAngleError):
        desired_relative_angle(SIDE, machine(0, t=3, folded=1), machine(1, t=3, folded=1))


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 401):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_bond_force_newton_third_law():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = machine(0, *rng.uniform(-1, 1, 2), angle=rng.uniform(0, 6.3))
        b = machine(1, *rng.uniform(1, 3, 2), angle=rng.uniform(0, 6.3))
        for bond in (SIDE, UPB):
            fa, fb, ta, tb = bond_force(a, b, bond, CFG)
            assert np.allclose(fa, -fb)
            # no net torque about the origin
            total = ta + tb + a.x * fa[1] - a.y * fa[0] + b.x * fb[1] - b.y * fb[0]
            assert total == pytest.approx(0.0, abs=1e-12)


def test_bond_force_zero_at_rest():
    a = machine(0)
    b = machine(1, x=2.0)
    fa, fb, ta, tb = bond_force(a, b, SIDE, CFG)
    assert np.allclose(fa, 0) and ta == 0 and tb == 0
    assert bond_energy(a, b, SIDE, CFG) == 0.0


def _pair_state(dx=0.3, dtheta=0.4, **kw):
    cfg = quiet(repel_k=1e-12, **kw)
    ms = [dict(type=2, x=20.0, y=20.0, angle=0.0), dict(type=2, x=22.0 + dx, y=20.3, angle=dtheta)]
    return engine.from_machines(cfg, ms, [("side", 0, 1)])


def _energy(s):
    a, b = s.machine(0), s.machine(1)
    ke = 0.5 * float(np.sum(s.vel**2))
    return bond_energy(a, b, SIDE, s.config) + ke


def test_bond_energy_decays():
    s = _pair_state()
    e0 = _energy(s)
    trace = [e0]
    for _ in range(40):
        engine.run(s, 25, record_initial=False)
        trace.append(_energy(s))
    # damped motion: checkpoint energies never rise and the bond relaxes
    assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(trace, trace[1:]))
    assert trace[-1] < 1e-6 * e0


def test_forces_conserve_momentum_in_crowd():
    cfg = quiet(container_width=12.0, container_height=12.0)
    rng = np.random.default_rng(3)
    ms = [dict(type=2, x=x, y=y, angle=a) for x, y, a in
          zip(rng.uniform(2, 10, 40), rng.uniform(2, 10, 40), rng.uniform(0, 6.3, 40))]
    bonds = [("side", 0, 1), ("side", 1, 2), ("up", 5, 6), ("side", 10, 11)]
    s = engine.from_machines(cfg, ms, bonds)
    p = s.params
    start, items = build_grid(s.pose, p)
    force = np.zeros((s.n, 3))
    accumulate_forces(s.ist, s.pose, p, 0, np.uint64(0), start, items, force, False)
    assert np.abs(force[:, :2].sum(axis=0)).max() < 1e-12
    moment = force[:, 2].sum() + np.sum(s.pose[:, 0] * force[:, 1] - s.pose[:, 1] * force[:, 0])
    assert moment == pytest.approx(0.0, abs=1e-10)


def test_brownian_statistics():
    n = 1_000_000
    kicks = brownian_kicks(CounterRNG(7), CFG, n, machine_id=3)
    sig = np.array([CFG.brownian_force_sigma, CFG.brownian_force_sigma, CFG.brownian_torque_sigma])
    mean = kicks.mean(axis=0)
    assert np.all(np.abs(mean) <= 4 * sig / math.sqrt(n))
    assert np.allclose(kicks.std(axis=0), sig, rtol=0.01)
    # components are uncorrelated
    c = np.corrcoef(kicks.T)
    assert np.abs(c[np.triu_indices(3, 1)]).max() < 0.01


def test_rng_is_counter_based():
    rng = CounterRNG(11)
    assert rng.uniform(5, 2) == CounterRNG(11).uniform(5, 2)
    assert rng.uniform(5, 2) != rng.uniform(6, 2)
    assert rng.uniform(5, 2) != rng.uniform(5, 3)
    assert rng.uniform(5, 2) != CounterRNG(12).uniform(5, 2)
    f1, t1 = brownian_kick(rng, CFG, 9, 4)
    f2, t2 = brownian_kick(rng, CFG, 9, 4)
    assert np.array_equal(f1, f2) and t1 == t2
    vals = np.array([rng.uniform(k, 0) for k in range(20000)])
    assert 0.0 < vals.min() and vals.max() < 1.0
    assert abs(vals.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(vals))


def test_integrate_formula():
    cfg = quiet()
    pose = np.array([[10.0, 10.0, 1.0]])
    vel = np.array([[0.1, -0.2, 0.05]])
    force = np.array([[0.03, 0.01, -0.02]])
    keep = 1 - cfg.damping * cfg.dt
    v = (vel + force * cfg.dt) * keep
    p = pose + v * cfg.dt
    integrate_step(pose, vel, force, cfg)
    assert np.allclose(vel, v)
    assert np.allclose(pose, p)


def test_kinetic_energy_decay():
    cfg = quiet()
    s = engine.from_machines(cfg, [dict(type=1, x=30.0, y=30.0, angle=0.0)])
    s.vel[0] = (0.2, -0.1, 0.05)
    v0 = s.vel[0].copy()
    engine.run(s, 30, record_initial=False)
    assert np.allclose(s.vel[0], v0 * (1 - cfg.damping) ** 30)


def test_wall_clamp():
    cfg = quiet(container_width=10.0, container_height=10.0)
    pose = np.array([[0.05, 9.95, 0.0], [5.0, 5.0, 7.0]])
    vel = np.array([[-0.5, 0.5, 0.0], [0.0, 0.0, 0.0]])
    integrate_step(pose, vel, np.zeros((2, 3)), cfg)
    assert pose[0, 0] == 0.0 and pose[0, 1] == 10.0
    assert vel[0, 0] == 0.0 and vel[0, 1] == 0.0
    # angles are kept in [0, 2 pi)
    assert 0.0 <= pose[1, 2] < 2 * math.pi
    assert pose[1, 2] == pytest.approx(7.0 - 2 * math.pi)


def test_integrate_rejects_non_finite():
    pose = np.array([[1.0, 1.0, 0.0]])
    with pytest.raises(IntegrityError):
        integrate_step(pose, np.zeros((1, 3)), np.array([[np.nan, 0.0, 0.0]]), quiet())


def test_spatial_index_matches_brute_force():
    cfg = WorldConfig(container_width=40.0, container_height=30.0)
    rng = np.random.default_rng(42)
    pose = np.column_stack([rng.uniform(0, 40, 200), rng.uniform(0, 30, 200), rng.uniform(0, 6.3, 200)])
    index = SpatialIndex(pose, cfg)
    for _ in range(100):
        q = (rng.uniform(-1, 41), rng.uniform(-1, 31))
        r = rng.uniform(0, index.max_radius)
        d2 = (pose[:, 0] - q[0]) ** 2 + (pose[:, 1] - q[1]) ** 2
        expected = sorted(int(j) for j in np.flatnonzero(d2 < r * r))
        assert neighbours_within(index, q, r) == expected


def test_spatial_index_cells_partition():
    cfg = WorldConfig()
    rng = np.random.default_rng(5)
    pose = np.column_stack([rng.uniform(0, 24, 57), rng.uniform(0, 24, 57), np.zeros(57)])
    index = SpatialIndex(pose, cfg)
    members = np.concatenate(list(index.cell_members()))
    assert sorted(members.tolist()) == list(range(57))
    with pytest.raises(ValueError):
        neighbours_within(index, (1.0, 1.0), index.max_radius * 2)


def test_cell_covers_interaction_range():
    # two tips can interact when middles are up to 2 * (arm + field) apart
    assert CFG.cell_size >= 2 * (CFG.max_arm + CFG.field_radius)


@pytest.mark.parametrize(
    "bad",
    [dict(dt=0), dict(damping=0.0), dict(damping=10.0), dict(container_width=-1.0),
     dict(stress_limit=0), dict(field_radius=0.0), dict(brownian_force_sigma=-0.1), dict(rng_seed=-1)],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        WorldConfig(**bad)


def test_config_round_trip():
    cfg = WorldConfig(rng_seed=9, stress_limit=123)
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg
    assert WorldConfig.parse_overrides(cfg.to_text()) == cfg
    out = WorldConfig.parse_overrides("spring_k = 0.5  # stiffer\n\nfold_limit = 77\n")
    assert out.spring_k == 0.5 and out.fold_limit == 77
    with pytest.raises(ValueError):
        WorldConfig.parse_overrides("nope = 1")
    with pytest.raises(ValueError):
        WorldConfig.parse_overrides("spring_k 1")
