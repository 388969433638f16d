from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from johnnyvon import model
from johnnyvon.model import (
    EXTENDER,
    IN_BEND,
    LEFT_OF_BEND,
    RIGHT_OF_BEND,
    bend_location,
    bend_up_bond_allowed,
    fold_angle,
    gene_up_bond_allowed,
    phene_up_bond_allowed,
)

TYPES = (1, 2, 3, 4)

# Grids transcribed row by row; row = first machine, column = second.
GENE_GRID = """
+ . . .
. + . .
. . + .
. . . +
"""
PHENE_GRID = """
. . . .
. + . .
. . . +
. . + +
"""
FOLD_GRID = """
0 0   0  0
0 120 45 90
0 45  -  -
0 90  -  60
"""
BEND_GRID = """
. + . .
+ . . .
. . + .
. . . .
"""


def _grid(text):
    return [line.split() for line in text.strip().splitlines()]


@pytest.mark.parametrize("a,b", list(itertools.product(TYPES, TYPES)))
def test_gene_up_table(a, b):
    assert gene_up_bond_allowed(a, b) == (_grid(GENE_GRID)[a - 1][b - 1] == "+")


@pytest.mark.parametrize("a,b", list(itertools.product(TYPES, TYPES)))
def test_phene_up_table(a, b):
    assert phene_up_bond_allowed(a, b) == (_grid(PHENE_GRID)[a - 1][b - 1] == "+")


@pytest.mark.parametrize("a,b", list(itertools.product(TYPES, TYPES)))
def test_fold_angle_table(a, b):
    cell = _grid(FOLD_GRID)[a - 1][b - 1]
    got = fold_angle(a, b)
    if cell == "-":
        assert got is None
    else:
        assert got == float(cell)


@pytest.mark.parametrize("a,b", list(itertools.product((1, 2, 3, 4), repeat=2)))
def test_bend_up_table(a, b):
    assert bend_up_bond_allowed(a, b) == (_grid(BEND_GRID)[a - 1][b - 1] == "+")


def test_gene_rule_is_likes_attract():
    for a, b in itertools.product(TYPES, TYPES):
        assert gene_up_bond_allowed(a, b) == (a == b)


def test_tables_symmetric():
    for a, b in itertools.product(TYPES, TYPES):
        assert phene_up_bond_allowed(a, b) == phene_up_bond_allowed(b, a)
        assert fold_angle(a, b) == fold_angle(b, a)


def test_type_one_is_always_straight():
    for t in TYPES:
        assert fold_angle(1, t) == 0.0


@pytest.mark.parametrize("left,right", list(itertools.product((None, 1, 2, 3, 4), repeat=2)))
def test_bend_location_classification(left, right):
    # oracle: a missing neighbour counts as bending
    left_bends = left is None or left != 1
    right_bends = right is None or right != 1
    expected = {
        (True, False): RIGHT_OF_BEND,
        (False, True): LEFT_OF_BEND,
        (True, True): IN_BEND,
        (False, False): EXTENDER,
    }[(left_bends, right_bends)]
    assert bend_location(left, right) == expected


def test_bend_location_values():
    assert (RIGHT_OF_BEND, LEFT_OF_BEND, IN_BEND, EXTENDER) == (1, 2, 3, 4)
    assert bend_location(2, 1) == 1
    assert bend_location(1, 2) == 2
    assert bend_location(3, 4) == 3
    assert bend_location(1, 1) == 4


def test_unexpanded_loops_are_all_in_bend():
    for a, b in itertools.product((2, 3, 4), repeat=2):
        assert bend_location(a, b) == IN_BEND


@pytest.mark.parametrize("bad", [0, 5, -1])
def test_type_range_checked(bad):
    with pytest.raises(ValueError):
        gene_up_bond_allowed(bad, 1)
    with pytest.raises(ValueError):
        fold_angle(1, bad)
    with pytest.raises(ValueError):
        bend_up_bond_allowed(bad, 1)


def test_table_arrays_read_only():
    with pytest.raises(ValueError):
        model.GENE_UP[1, 2] = True
    with pytest.raises(ValueError):
        model.FOLD_ANGLE_DEG[3, 3] = 0.0


def test_radian_table_matches_degrees():
    deg = model.FOLD_ANGLE_DEG[1:, 1:]
    rad = model.FOLD_ANGLE_RAD[1:, 1:]
    assert np.array_equal(np.isnan(deg), np.isnan(rad))
    ok = ~np.isnan(deg)
    assert np.allclose(np.deg2rad(deg[ok]), rad[ok])


def test_tables_as_dict():
    d = model.TABLES.as_dict()
    assert d["fold_angle_deg"][2][2] is None
    assert d["fold_angle_deg"][1][1] == 120.0
    assert d["gene_up"][0] == [True, False, False, False]
    assert d["bend_up"][2][2] is True


def test_arm_geometry_defaults():
    lengths = model.DEFAULT_ARM_LENGTHS
    assert lengths[model.ArmKind.LEFT] == lengths[model.ArmKind.RIGHT] == 1.0
    assert lengths[model.ArmKind.OVERLAP] < lengths[model.ArmKind.UP] < lengths[model.ArmKind.LEFT]
    # overlap detector points opposite the up arm
    assert np.allclose(model.ARM_DIRECTIONS[model.ArmKind.OVERLAP], -model.ARM_DIRECTIONS[model.ArmKind.UP])
    assert np.allclose(model.ARM_DIRECTIONS[model.ArmKind.LEFT], -model.ARM_DIRECTIONS[model.ArmKind.RIGHT])
    for v in model.ARM_DIRECTIONS:
        assert math.isclose(np.hypot(*v), 1.0)


def test_machine_state_from_arrays():
    ist = np.zeros((2, model.N_COLUMNS), np.int64)
    ist[:, [model.LEFT, model.RIGHT, model.UP]] = -1
    ist[0, model.TYPE] = 3
    ist[0, model.RIGHT] = 1
    ist[1, model.LEFT] = 0
    ist[1, model.TYPE] = 2
    pose = np.array([[1.0, 2.0, 0.5], [3.0, 2.0, 0.5]])
    vel = np.zeros((2, 3))
    m = model.MachineState.from_arrays(ist, pose, vel, 0)
    assert m.type == 3 and m.right_neighbour == 1 and m.left_neighbour is None
    assert not m.is_free
    assert (m.x, m.y, m.angle) == (1.0, 2.0, 0.5)
