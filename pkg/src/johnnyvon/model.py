"""Machine types, arms, state layout and the static bonding tables.

Everything here is pure data. The stepping kernels index the table arrays
directly by machine type (row/column 0 is unused padding) so that a type
value can be used as an index without offsetting.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MACHINE_TYPES = (1, 2, 3, 4)
STRAIGHT_TYPE = 1


class ArmKind(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    UP = 2
    REPELLOR = 3
    OVERLAP = 4


# unit direction of each arm in the machine frame (canonical position)
ARM_DIRECTIONS = np.array(
    [
        [-1.0, 0.0],  # left
        [1.0, 0.0],  # right
        [0.0, 1.0],  # up
        [0.0, 1.0],  # repellor, hidden behind the up arm
        [0.0, -1.0],  # overlap detector
    ]
)

DEFAULT_ARM_LENGTHS = {
    ArmKind.LEFT: 1.0,
    ArmKind.RIGHT: 1.0,
    ArmKind.UP: 0.75,
    ArmKind.REPELLOR: 0.5,
    ArmKind.OVERLAP: 0.5,
}


class BondKind(enum.IntEnum):
    SIDEWAYS = 0
    UP = 1
    OVERLAP = 2


# Column layout of the integer state matrix (one row per machine, row = id).
TYPE = 0
FOLD_COUNTER = 1
REPEL_COUNTER = 2
STRESS_COUNTER = 3
STRAND_POSITION = 4
SPLIT_STATE = 5
RESET_COUNTER = 6
FOLD_NOW = 7
UNFOLD = 8
SEED_GENE = 9
SEED_PHENE = 10
IN_MESH = 11
REPLICATED = 12
SHATTER = 13
FOLDED = 14
LEFT = 15
RIGHT = 16
UP = 17
SPLIT_NOW = 18
RIGHT_STREAK = 19  # out-of-tolerance streak of the bond on this machine's right arm
UP_STREAK = 20  # kept equal on both ends of an up bond
RIGHT_CLOSURE = 21  # 1 if the bond on the right arm closed a phene loop
N_COLUMNS = 22

NO_NEIGHBOUR = -1

# strand-position values
LEFTMOST = 1
INTERIOR = 2
RIGHTMOST = 3

# split-state values
SPLIT_INCOMPLETE = 1
SPLIT_COMPLETE = 2
SPLIT_SPLITTING = 3
SPLIT_SHATTER = 4

# bend-location values
RIGHT_OF_BEND = 1
LEFT_OF_BEND = 2
IN_BEND = 3
EXTENDER = 4


def _table(pairs, size=5, dtype=np.bool_):
    t = np.zeros((size, size), dtype=dtype)
    for a, b in pairs:
        t[a, b] = True
    return t


GENE_UP = _table([(t, t) for t in MACHINE_TYPES])
PHENE_UP = _table([(2, 2), (3, 4), (4, 3), (4, 4)])
BEND_UP = _table([(1, 2), (2, 1), (3, 3)])

FOLD_ANGLE_DEG = np.full((5, 5), np.nan)
for _t in MACHINE_TYPES:
    FOLD_ANGLE_DEG[1, _t] = FOLD_ANGLE_DEG[_t, 1] = 0.0
for (_a, _b), _deg in {(2, 2): 120.0, (2, 3): 45.0, (2, 4): 90.0, (4, 4): 60.0}.items():
    FOLD_ANGLE_DEG[_a, _b] = FOLD_ANGLE_DEG[_b, _a] = _deg
FOLD_ANGLE_RAD = np.deg2rad(FOLD_ANGLE_DEG)

for _arr in (GENE_UP, PHENE_UP, BEND_UP, FOLD_ANGLE_DEG, FOLD_ANGLE_RAD):
    _arr.setflags(write=False)


@dataclass(frozen=True)
class BondTables:
    gene_up: np.ndarray
    phene_up: np.ndarray
    fold_angle: np.ndarray
    bend_up: np.ndarray

    def as_dict(self) -> dict:
        """Plain 4x4 nested lists, for the run manifest."""
        def rows(t, conv):
            return [[conv(t[a, b]) for b in MACHINE_TYPES] for a in MACHINE_TYPES]

        return {
            "gene_up": rows(self.gene_up, bool),
            "phene_up": rows(self.phene_up, bool),
            "fold_angle_deg": rows(self.fold_angle, lambda v: None if math.isnan(v) else float(v)),
            "bend_up": rows(self.bend_up, bool),
        }


TABLES = BondTables(GENE_UP, PHENE_UP, FOLD_ANGLE_DEG, BEND_UP)


class UndefinedAngleError(ValueError):
    """A folded sideways bond joins a type pair with no fold angle."""


def check_type(t: int) -> int:
    if t not in MACHINE_TYPES:
        raise ValueError(f"machine type must be one of {MACHINE_TYPES}, got {t!r}")
    return int(t)


def gene_up_bond_allowed(t1: int, t2: int) -> bool:
    return bool(GENE_UP[check_type(t1), check_type(t2)])


def phene_up_bond_allowed(t1: int, t2: int) -> bool:
    return bool(PHENE_UP[check_type(t1), check_type(t2)])


def fold_angle(t1: int, t2: int) -> Optional[float]:
    """Fold angle in degrees for a sideways bond, or None where undefined."""
    v = FOLD_ANGLE_DEG[check_type(t1), check_type(t2)]
    return None if math.isnan(v) else float(v)


def is_bending(t: Optional[int]) -> bool:
    # a missing neighbour counts as bending
    return t is None or check_type(t) != STRAIGHT_TYPE


def bend_location(left_type: Optional[int], right_type: Optional[int]) -> int:
    lb, rb = is_bending(left_type), is_bending(right_type)
    if lb and not rb:
        return RIGHT_OF_BEND
    if not lb and rb:
        return LEFT_OF_BEND
    if lb and rb:
        return IN_BEND
    return EXTENDER


def bend_up_bond_allowed(b1: int, b2: int) -> bool:
    if b1 not in (1, 2, 3, 4) or b2 not in (1, 2, 3, 4):
        raise ValueError(f"bend-location must be in 1..4, got {(b1, b2)!r}")
    return bool(BEND_UP[b1, b2])


@dataclass
class MachineState:
    """One machine's full state vector, as a detached record."""

    type: int
    id: int
    fold_counter: int = 0
    repel_counter: int = 0
    stress_counter: int = 0
    strand_position: int = INTERIOR
    split_state: int = SPLIT_INCOMPLETE
    reset_counter: int = 0
    fold_now: int = 0
    unfold: int = 0
    seed_gene: int = 0
    seed_phene: int = 0
    in_mesh: int = 0
    replicated: int = 0
    shatter: int = 0
    folded: int = 0
    x: float = 0.0
    y: float = 0.0
    angle: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    left_neighbour: Optional[int] = None
    right_neighbour: Optional[int] = None
    up_neighbour: Optional[int] = None

    @property
    def is_free(self) -> bool:
        return self.left_neighbour is None and self.right_neighbour is None and self.up_neighbour is None

    @classmethod
    def from_arrays(cls, ist: np.ndarray, pose: np.ndarray, vel: np.ndarray, i: int) -> "MachineState":
        row = ist[i]

        def nb(col):
            v = int(row[col])
            return None if v == NO_NEIGHBOUR else v

        return cls(
            type=int(row[TYPE]),
            id=i,
            fold_counter=int(row[FOLD_COUNTER]),
            repel_counter=int(row[REPEL_COUNTER]),
            stress_counter=int(row[STRESS_COUNTER]),
            strand_position=int(row[STRAND_POSITION]),
            split_state=int(row[SPLIT_STATE]),
            reset_counter=int(row[RESET_COUNTER]),
            fold_now=int(row[FOLD_NOW]),
            unfold=int(row[UNFOLD]),
            seed_gene=int(row[SEED_GENE]),
            seed_phene=int(row[SEED_PHENE]),
            in_mesh=int(row[IN_MESH]),
            replicated=int(row[REPLICATED]),
            shatter=int(row[SHATTER]),
            folded=int(row[FOLDED]),
            x=float(pose[i, 0]),
            y=float(pose[i, 1]),
            angle=float(pose[i, 2]),
            vx=float(vel[i, 0]),
            vy=float(vel[i, 1]),
            omega=float(vel[i, 2]),
            left_neighbour=nb(LEFT),
            right_neighbour=nb(RIGHT),
            up_neighbour=nb(UP),
        )


@dataclass(frozen=True)
class Bond:
    kind: BondKind
    a_id: int
    b_id: int
    a_arm: ArmKind
    b_arm: ArmKind
    desired_relative_angle: float
    out_of_tolerance_streak: int = 0
    closure: bool = False
