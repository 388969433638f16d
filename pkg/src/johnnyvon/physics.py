"""Continuous 2D dynamics of the machines.

Bond fields act as springs between arm tips plus an angular spring on the
relative orientation. Repellor fields and a short hard core push machines
apart, the liquid adds Gaussian kicks and damps velocity, and the container
walls confine machine middles.

The hot loops are numba kernels operating on flat arrays; the small Python
functions at the bottom of the module wrap the same kernels for use on
individual machines.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numba import njit

from .model import (
    ARM_DIRECTIONS,
    DEFAULT_ARM_LENGTHS,
    FOLD_ANGLE_RAD,
    FOLDED,
    LEFT,
    REPEL_COUNTER,
    RIGHT,
    TYPE,
    UP,
    ArmKind,
    Bond,
    BondKind,
    MachineState,
    UndefinedAngleError,
)

# Folds turn clockwise when a strand is traversed left to right, which puts
# the up arms on the outside of a phene and the overlap detectors inside.
FOLD_SIGN = -1.0

# parameter vector layout shared by all kernels
P_WIDTH = 0
P_HEIGHT = 1
P_DT = 2
P_DAMPING = 3
P_BROWN_F = 4
P_BROWN_T = 5
P_FIELD_R = 6
P_SPRING_K = 7
P_ANGULAR_K = 8
P_REPEL_K = 9
P_REPEL_STEPS = 10
P_FOLD_LIMIT = 11
P_STRESS_LIMIT = 12
P_BREAK_STREAK = 13
P_ANGLE_TOL = 14
P_DIST_TOL = 15
P_ARM_LEFT = 16
P_ARM_RIGHT = 17
P_ARM_UP = 18
P_ARM_REPEL = 19
P_ARM_OVERLAP = 20
P_HARD_CORE = 21
P_CELL = 22
P_STRAND_WALK = 23
N_PARAMS = 24

ARM_DIR = np.ascontiguousarray(ARM_DIRECTIONS)

# random-stream purposes
PURPOSE_BROWNIAN = 1


class IntegrityError(RuntimeError):
    """Non-finite forces or positions, or broken neighbour bookkeeping."""


@dataclass
class WorldConfig:
    container_width: float = 24.0
    container_height: float = 24.0
    dt: float = 1.0
    damping: float = 0.1
    brownian_force_sigma: float = 0.015
    brownian_torque_sigma: float = 0.005
    field_radius: float = 0.4
    spring_k: float = 0.2
    angular_k: float = 0.2
    repel_k: float = 0.2
    repel_steps: int = 100
    fold_limit: int = 10_000
    stress_limit: int = 2_000
    break_streak: int = 5_000
    angle_tolerance: float = math.radians(6.0)
    distance_tolerance: float = 0.2
    arm_left: float = DEFAULT_ARM_LENGTHS[ArmKind.LEFT]
    arm_right: float = DEFAULT_ARM_LENGTHS[ArmKind.RIGHT]
    arm_up: float = DEFAULT_ARM_LENGTHS[ArmKind.UP]
    arm_repellor: float = DEFAULT_ARM_LENGTHS[ArmKind.REPELLOR]
    arm_overlap: float = DEFAULT_ARM_LENGTHS[ArmKind.OVERLAP]
    hard_core_radius: float = 0.5
    max_strand_walk: int = 64
    rng_seed: int = 0
    metrics_every: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.damping * self.dt < 1:
            raise ValueError("damping * dt must lie in (0, 1)")
        if self.container_width <= 0 or self.container_height <= 0:
            raise ValueError("container dimensions must be positive")
        for name in ("repel_steps", "fold_limit", "stress_limit", "break_streak", "metrics_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("field_radius", "spring_k", "angular_k", "angle_tolerance", "arm_left", "arm_right",
                     "arm_up", "arm_repellor", "arm_overlap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.brownian_force_sigma < 0 or self.brownian_torque_sigma < 0 or self.distance_tolerance < 0:
            raise ValueError("noise scales and distance tolerance must be non-negative")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")

    @property
    def max_arm(self) -> float:
        return max(self.arm_left, self.arm_right, self.arm_up, self.arm_repellor, self.arm_overlap)

    @property
    def cell_size(self) -> float:
        return 2.0 * (self.max_arm + self.field_radius)

    def replace(self, **changes) -> "WorldConfig":
        return dataclasses.replace(self, **changes)

    def to_params(self) -> np.ndarray:
        p = np.zeros(N_PARAMS)
        p[P_WIDTH] = self.container_width
        p[P_HEIGHT] = self.container_height
        p[P_DT] = self.dt
        p[P_DAMPING] = self.damping
        p[P_BROWN_F] = self.brownian_force_sigma
        p[P_BROWN_T] = self.brownian_torque_sigma
        p[P_FIELD_R] = self.field_radius
        p[P_SPRING_K] = self.spring_k
        p[P_ANGULAR_K] = self.angular_k
        p[P_REPEL_K] = self.repel_k
        p[P_REPEL_STEPS] = self.repel_steps
        p[P_FOLD_LIMIT] = self.fold_limit
        p[P_STRESS_LIMIT] = self.stress_limit
        p[P_BREAK_STREAK] = self.break_streak
        p[P_ANGLE_TOL] = self.angle_tolerance
        p[P_DIST_TOL] = self.distance_tolerance
        p[P_ARM_LEFT] = self.arm_left
        p[P_ARM_RIGHT] = self.arm_right
        p[P_ARM_UP] = self.arm_up
        p[P_ARM_REPEL] = self.arm_repellor
        p[P_ARM_OVERLAP] = self.arm_overlap
        p[P_HARD_CORE] = self.hard_core_radius
        p[P_CELL] = self.cell_size
        p[P_STRAND_WALK] = self.max_strand_walk
        return p

    # flat "key = value" text, one key per field
    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in dataclasses.fields(self))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "WorldConfig":
        return cls(**values)

    @classmethod
    def parse_overrides(cls, text: str, base: "WorldConfig | None" = None) -> "WorldConfig":
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        changes = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            try:
                changes[key] = int(value, 0) if types[key] in ("int", int) else float(value)
            except ValueError:
                raise ValueError(f"line {lineno}: bad value for {key}: {value!r}") from None
        return base.replace(**changes)


# --------------------------------------------------------------------------
# geometry kernels


@njit(cache=True)
def wrap_angle(a):
    """Map an angle to (-pi, pi]."""
    two_pi = 2.0 * np.pi
    a = a - two_pi * np.floor((a + np.pi) / two_pi)
    if a <= -np.pi:
        a += two_pi
    return a


@njit(cache=True)
def arm_length(arm, params):
    return params[P_ARM_LEFT + arm]


@njit(cache=True)
def tip_xy(x, y, ang, arm, params):
    length = params[P_ARM_LEFT + arm]
    dx = ARM_DIR[arm, 0]
    dy = ARM_DIR[arm, 1]
    c = np.cos(ang)
    s = np.sin(ang)
    return x + length * (dx * c - dy * s), y + length * (dx * s + dy * c)


@njit(cache=True)
def machine_tip(pose, i, arm, params):
    return tip_xy(pose[i, 0], pose[i, 1], pose[i, 2], arm, params)


@njit(cache=True)
def tips_overlap(pose, i, arm_i, j, arm_j, params):
    ax, ay = machine_tip(pose, i, arm_i, params)
    bx, by = machine_tip(pose, j, arm_j, params)
    reach = 2.0 * params[P_FIELD_R]
    return (ax - bx) ** 2 + (ay - by) ** 2 < reach * reach


@njit(cache=True)
def sideways_target(ist, a, b):
    """Desired (b angle - a angle) for the bond a.right -- b.left."""
    if ist[a, FOLDED] == 1 and ist[b, FOLDED] == 1:
        return FOLD_SIGN * FOLD_ANGLE_RAD[ist[a, TYPE], ist[b, TYPE]]
    return 0.0


@njit(cache=True)
def bond_geometry(pose, a, arm_a, b, arm_b, target, params):
    """Tip separation and signed angle error of a bond."""
    ax, ay = machine_tip(pose, a, arm_a, params)
    bx, by = machine_tip(pose, b, arm_b, params)
    dist = np.sqrt((ax - bx) ** 2 + (ay - by) ** 2)
    err = wrap_angle(pose[b, 2] - pose[a, 2] - target)
    return dist, err


@njit(cache=True)
def geometry_in_tolerance(dist, err, params):
    return abs(err) <= params[P_ANGLE_TOL] and dist <= params[P_DIST_TOL] + 2.0 * params[P_FIELD_R]


@njit(cache=True)
def pair_spring(xa, ya, tha, arm_a, xb, yb, thb, arm_b, target, params):
    """Forces and torques of one bond; returns (fax, fay, ta, fbx, fby, tb)."""
    ax, ay = tip_xy(xa, ya, tha, arm_a, params)
    bx, by = tip_xy(xb, yb, thb, arm_b, params)
    k = params[P_SPRING_K]
    fx = k * (bx - ax)
    fy = k * (by - ay)
    ta = (ax - xa) * fy - (ay - ya) * fx
    tb = -((bx - xb) * fy - (by - yb) * fx)
    ang = params[P_ANGULAR_K] * wrap_angle(thb - tha - target)
    return fx, fy, ta + ang, -fx, -fy, tb - ang


# --------------------------------------------------------------------------
# counter-based random numbers: every draw is a pure function of
# (seed, step, machine id, purpose, lane)

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_C_ID = np.uint64(0xD1B54A32D192ED03)
_C_PURPOSE = np.uint64(0xABC98388FB8FAC03)


@njit(cache=True)
def mix64(z):
    z = z + _GAMMA
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def random_u64(seed, step, mid, purpose, lane):
    z = mix64(seed ^ mix64(np.uint64(step)))
    z = mix64(z ^ (np.uint64(mid) * _C_ID))
    return mix64(z ^ (np.uint64(purpose * 16 + lane) * _C_PURPOSE))


@njit(cache=True)
def random_uniform(seed, step, mid, purpose, lane):
    """Uniform in (0, 1)."""
    return (np.float64(random_u64(seed, step, mid, purpose, lane) >> _S11) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def random_normal_pair(seed, step, mid, purpose, lane):
    u1 = random_uniform(seed, step, mid, purpose, lane)
    u2 = random_uniform(seed, step, mid, purpose, lane + 1)
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


@njit(cache=True)
def brownian(seed, step, mid, params):
    g0, g1 = random_normal_pair(seed, step, mid, PURPOSE_BROWNIAN, 0)
    g2, _ = random_normal_pair(seed, step, mid, PURPOSE_BROWNIAN, 2)
    sf = params[P_BROWN_F]
    return sf * g0, sf * g1, params[P_BROWN_T] * g2


@njit(cache=True)
def brownian_block(seed, step0, mid, count, params):
    out = np.empty((count, 3))
    for k in range(count):
        fx, fy, t = brownian(seed, step0 + k, mid, params)
        out[k, 0] = fx
        out[k, 1] = fy
        out[k, 2] = t
    return out


# --------------------------------------------------------------------------
# uniform grid keyed by machine middles


@njit(cache=True)
def grid_shape(params):
    cell = params[P_CELL]
    ncx = max(1, int(np.ceil(params[P_WIDTH] / cell)))
    ncy = max(1, int(np.ceil(params[P_HEIGHT] / cell)))
    return ncx, ncy


@njit(cache=True)
def cell_coords(x, y, cell, ncx, ncy):
    cx = int(np.floor(x / cell))
    cy = int(np.floor(y / cell))
    cx = min(max(cx, 0), ncx - 1)
    cy = min(max(cy, 0), ncy - 1)
    return cx, cy


@njit(cache=True)
def build_grid(pose, params):
    """Counting sort of machines into cells; items within a cell ascend by id."""
    n = pose.shape[0]
    cell = params[P_CELL]
    ncx, ncy = grid_shape(params)
    start = np.zeros(ncx * ncy + 1, np.int64)
    cell_of = np.empty(n, np.int64)
    for i in range(n):
        cx, cy = cell_coords(pose[i, 0], pose[i, 1], cell, ncx, ncy)
        c = cy * ncx + cx
        cell_of[i] = c
        start[c + 1] += 1
    for c in range(ncx * ncy):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    items = np.empty(n, np.int64)
    for i in range(n):
        c = cell_of[i]
        items[fill[c]] = i
        fill[c] += 1
    return start, items


@njit(cache=True)
def grid_candidates(x, y, start, items, params, out):
    """Write ids from the 3x3 block around (x, y) into out; returns count."""
    cell = params[P_CELL]
    ncx, ncy = grid_shape(params)
    cx, cy = cell_coords(x, y, cell, ncx, ncy)
    m = 0
    for gy in range(max(cy - 1, 0), min(cy + 2, ncy)):
        for gx in range(max(cx - 1, 0), min(cx + 2, ncx)):
            c = gy * ncx + gx
            for k in range(start[c], start[c + 1]):
                out[m] = items[k]
                m += 1
    return m


@njit(cache=True)
def query_within(pose, start, items, params, px, py, radius):
    buf = np.empty(pose.shape[0], np.int64)
    m = grid_candidates(px, py, start, items, params, buf)
    keep = np.empty(m, np.int64)
    k = 0
    r2 = radius * radius
    for q in range(m):
        j = buf[q]
        if (pose[j, 0] - px) ** 2 + (pose[j, 1] - py) ** 2 < r2:
            keep[k] = j
            k += 1
    return np.sort(keep[:k])


# --------------------------------------------------------------------------
# force accumulation and integration


@njit(cache=True)
def _apply_bond(pose, a, arm_a, b, arm_b, target, params, force):
    fax, fay, ta, fbx, fby, tb = pair_spring(
        pose[a, 0], pose[a, 1], pose[a, 2], arm_a, pose[b, 0], pose[b, 1], pose[b, 2], arm_b, target, params
    )
    force[a, 0] += fax
    force[a, 1] += fay
    force[a, 2] += ta
    force[b, 0] += fbx
    force[b, 1] += fby
    force[b, 2] += tb


@njit(cache=True)
def accumulate_forces(ist, pose, params, step, seed, start, items, force, noise):
    """Fill force (n, 3) with net force and torque per machine.

    Order is fixed: bonds by owning machine id, then pair repulsion by the
    lower id, then Brownian kicks by id.
    """
    n = ist.shape[0]
    force[:, :] = 0.0
    for i in range(n):
        r = ist[i, RIGHT]
        if r >= 0:
            _apply_bond(pose, i, 1, r, 0, sideways_target(ist, i, r), params, force)
        u = ist[i, UP]
        if u > i:
            _apply_bond(pose, i, 2, u, 2, np.pi, params, force)

    repel_k = params[P_REPEL_K]
    core = params[P_HARD_CORE]
    reach = 2.0 * params[P_FIELD_R]
    repel_steps = params[P_REPEL_STEPS]
    buf = np.empty(n, np.int64)
    for i in range(n):
        m = grid_candidates(pose[i, 0], pose[i, 1], start, items, params, buf)
        active = ist[i, REPEL_COUNTER] < repel_steps
        rx = 0.0
        ry = 0.0
        if active:
            rx, ry = machine_tip(pose, i, 3, params)
        for q in range(m):
            j = buf[q]
            if j == i:
                continue
            if j > i:
                dx = pose[j, 0] - pose[i, 0]
                dy = pose[j, 1] - pose[i, 1]
                d = np.sqrt(dx * dx + dy * dy)
                if d < core and d > 1e-12:
                    mag = repel_k * (1.0 - d / core)
                    fx = mag * dx / d
                    fy = mag * dy / d
                    force[j, 0] += fx
                    force[j, 1] += fy
                    force[i, 0] -= fx
                    force[i, 1] -= fy
            if not active or j == ist[i, LEFT] or j == ist[i, RIGHT]:
                continue
            for arm in range(5):
                tx, ty = machine_tip(pose, j, arm, params)
                dx = tx - rx
                dy = ty - ry
                d = np.sqrt(dx * dx + dy * dy)
                if d < reach and d > 1e-12:
                    mag = repel_k * (1.0 - d / reach)
                    fx = mag * dx / d
                    fy = mag * dy / d
                    force[j, 0] += fx
                    force[j, 1] += fy
                    force[j, 2] += (tx - pose[j, 0]) * fy - (ty - pose[j, 1]) * fx
                    force[i, 0] -= fx
                    force[i, 1] -= fy
                    force[i, 2] -= (rx - pose[i, 0]) * fy - (ry - pose[i, 1]) * fx

    if noise:
        for i in range(n):
            fx, fy, t = brownian(seed, step, i, params)
            force[i, 0] += fx
            force[i, 1] += fy
            force[i, 2] += t


@njit(cache=True)
def integrate(pose, vel, force, params):
    """Damped semi-implicit Euler with wall clamping.

    Returns the id of the first machine with a non-finite pose, or -1.
    """
    n = pose.shape[0]
    dt = params[P_DT]
    retain = 1.0 - params[P_DAMPING] * dt
    width = params[P_WIDTH]
    height = params[P_HEIGHT]
    two_pi = 2.0 * np.pi
    bad = -1
    for i in range(n):
        for k in range(3):
            vel[i, k] = (vel[i, k] + force[i, k] * dt) * retain
            pose[i, k] += vel[i, k] * dt
        if pose[i, 0] < 0.0:
            pose[i, 0] = 0.0
            if vel[i, 0] < 0.0:
                vel[i, 0] = 0.0
        elif pose[i, 0] > width:
            pose[i, 0] = width
            if vel[i, 0] > 0.0:
                vel[i, 0] = 0.0
        if pose[i, 1] < 0.0:
            pose[i, 1] = 0.0
            if vel[i, 1] < 0.0:
                vel[i, 1] = 0.0
        elif pose[i, 1] > height:
            pose[i, 1] = height
            if vel[i, 1] > 0.0:
                vel[i, 1] = 0.0
        a = pose[i, 2] - two_pi * np.floor(pose[i, 2] / two_pi)
        if a >= two_pi:
            a = 0.0
        pose[i, 2] = a
        if bad < 0 and not (np.isfinite(pose[i, 0]) and np.isfinite(pose[i, 1]) and np.isfinite(pose[i, 2])):
            bad = i
    return bad


# --------------------------------------------------------------------------
# Python-level helpers


def arm_tip(position: tuple[float, float], angle: float, arm: ArmKind, config: WorldConfig) -> tuple[float, float]:
    x, y = tip_xy(float(position[0]), float(position[1]), float(angle), int(arm), config.to_params())
    return float(x), float(y)


def _tip_of(m: MachineState, arm: ArmKind, params: np.ndarray) -> tuple[float, float]:
    return tip_xy(m.x, m.y, m.angle, int(arm), params)


def fields_overlap(a: MachineState, a_arm: ArmKind, b: MachineState, b_arm: ArmKind, config: WorldConfig) -> bool:
    p = config.to_params()
    ax, ay = _tip_of(a, a_arm, p)
    bx, by = _tip_of(b, b_arm, p)
    return math.hypot(ax - bx, ay - by) < 2.0 * config.field_radius


def desired_relative_angle(bond: Bond, a: MachineState, b: MachineState) -> float:
    """Target of (b.angle - a.angle) in radians."""
    if bond.kind == BondKind.SIDEWAYS:
        if not (a.folded and b.folded):
            return 0.0
        if bond.a_arm == ArmKind.RIGHT:
            left, right = a, b
        else:
            left, right = b, a
        v = FOLD_ANGLE_RAD[left.type, right.type]
        if math.isnan(v):
            raise UndefinedAngleError(f"no fold angle for types ({left.type}, {right.type})")
        target = FOLD_SIGN * float(v)
        return target if left is a else -target
    if bond.kind == BondKind.UP:
        return math.pi
    return 0.0


def bond_force(a: MachineState, b: MachineState, bond: Bond, config: WorldConfig):
    """(force on a, force on b, torque on a, torque on b) for one bond."""
    p = config.to_params()
    target = desired_relative_angle(bond, a, b)
    fax, fay, ta, fbx, fby, tb = pair_spring(
        a.x, a.y, a.angle, int(bond.a_arm), b.x, b.y, b.angle, int(bond.b_arm), target, p
    )
    return np.array([fax, fay]), np.array([fbx, fby]), float(ta), float(tb)


def bond_in_tolerance(bond: Bond, a: MachineState, b: MachineState, config: WorldConfig) -> bool:
    p = config.to_params()
    ax, ay = _tip_of(a, bond.a_arm, p)
    bx, by = _tip_of(b, bond.b_arm, p)
    err = float(wrap_angle(b.angle - a.angle - desired_relative_angle(bond, a, b)))
    return bool(geometry_in_tolerance(math.hypot(ax - bx, ay - by), err, p))


def bond_energy(a: MachineState, b: MachineState, bond: Bond, config: WorldConfig) -> float:
    p = config.to_params()
    ax, ay = _tip_of(a, bond.a_arm, p)
    bx, by = _tip_of(b, bond.b_arm, p)
    err = float(wrap_angle(b.angle - a.angle - desired_relative_angle(bond, a, b)))
    return 0.5 * config.spring_k * ((ax - bx) ** 2 + (ay - by) ** 2) + 0.5 * config.angular_k * err**2


@dataclass
class CounterRNG:
    """Stateless generator: draws are keyed by (seed, step, machine id, purpose)."""

    seed: int

    def uniform(self, step: int, machine_id: int, purpose: int = 0, lane: int = 0) -> float:
        return float(random_uniform(np.uint64(self.seed), step, machine_id, purpose, lane))

    def normal_pair(self, step: int, machine_id: int, purpose: int = 0, lane: int = 0) -> tuple[float, float]:
        g0, g1 = random_normal_pair(np.uint64(self.seed), step, machine_id, purpose, lane)
        return float(g0), float(g1)


def brownian_kick(rng: CounterRNG, config: WorldConfig, step: int = 0, machine_id: int = 0):
    """(force 2-vector, torque) drawn for one machine at one step."""
    fx, fy, t = brownian(np.uint64(rng.seed), step, machine_id, config.to_params())
    return np.array([fx, fy]), float(t)


def brownian_kicks(rng: CounterRNG, config: WorldConfig, count: int, machine_id: int = 0, step0: int = 0) -> np.ndarray:
    """Kicks for one machine over count consecutive steps, shape (count, 3)."""
    return brownian_block(np.uint64(rng.seed), step0, machine_id, count, config.to_params())


def integrate_step(pose: np.ndarray, vel: np.ndarray, force: np.ndarray, config: WorldConfig) -> None:
    """Advance poses and velocities in place."""
    bad = integrate(pose, vel, force, config.to_params())
    if bad >= 0 or not np.all(np.isfinite(force)):
        raise IntegrityError(f"non-finite state for machine {bad if bad >= 0 else '?'}")


class SpatialIndex:
    """Uniform grid over the container keyed by machine middles."""

    def __init__(self, pose: np.ndarray, config: WorldConfig):
        self.pose = np.ascontiguousarray(pose, dtype=np.float64)
        self.params = config.to_params()
        self.cell_size = config.cell_size
        self.ncx, self.ncy = grid_shape(self.params)
        self.start, self.items = build_grid(self.pose, self.params)

    @property
    def max_radius(self) -> float:
        return self.cell_size

    def cell_members(self) -> Iterable[np.ndarray]:
        for c in range(self.ncx * self.ncy):
            yield self.items[self.start[c]:self.start[c + 1]]


def neighbours_within(index: SpatialIndex, point: tuple[float, float], radius: float) -> list[int]:
    """Ids of machines whose middle is strictly within radius of point."""
    if radius > index.max_radius:
        raise ValueError(f"radius {radius} exceeds the index's query radius {index.max_radius}")
    if index.pose.shape[0] == 0:
        return []
    found = query_within(index.pose, index.start, index.items, index.params, float(point[0]), float(point[1]), float(radius))
    return [int(j) for j in found]
