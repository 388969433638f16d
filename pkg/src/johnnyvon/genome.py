"""Seed strands: parsing, fold prediction and validation.

The fold predictor treats each machine as a unit edge and each sideways bond
(plus the bond that closes the loop) as a clockwise exterior turn by the
pair's fold angle. That is enough to classify the polygon; the physics
decides the real packing geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .model import (
    BEND_UP,
    MACHINE_TYPES,
    PHENE_UP,
    bend_location,
    fold_angle,
)

SEPARATORS = "-,"
_NAMES = {3: "triangle", 4: "quadrilateral", 5: "pentagon", 6: "hexagon", 7: "heptagon", 8: "octagon"}


class SeedParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EmptySeedError(SeedParseError):
    pass


class TypeRangeError(SeedParseError):
    pass


class SeparatorError(SeedParseError):
    pass


class SeedTooShortError(SeedParseError):
    pass


@dataclass(frozen=True)
class SeedSpec:
    sequence: tuple
    label: str = ""

    def __post_init__(self):
        seq = tuple(int(t) for t in self.sequence)
        for t in seq:
            if t not in MACHINE_TYPES:
                raise ValueError(f"machine type must be one of {MACHINE_TYPES}, got {t}")
        if len(seq) < 2:
            raise ValueError("a seed strand needs at least two machines")
        object.__setattr__(self, "sequence", seq)
        if not self.label:
            object.__setattr__(self, "label", self.text)

    @property
    def text(self) -> str:
        return "-".join(str(t) for t in self.sequence)

    def __len__(self):
        return len(self.sequence)

    def reversed(self) -> "SeedSpec":
        return SeedSpec(tuple(reversed(self.sequence)))


def parse_seed(text: str, label: str = "") -> SeedSpec:
    """Parse '2-3-2-3' (or '2,3,2,3'); offsets refer to the untrimmed text."""
    if text is None or not text.strip():
        raise EmptySeedError("empty seed strand", 0)
    lead = len(text) - len(text.lstrip())
    body = text.strip()
    types = []
    expect_type = True
    for k, ch in enumerate(body):
        pos = lead + k
        if expect_type:
            if ch.isdigit():
                if ch not in "1234":
                    raise TypeRangeError(f"machine type {ch!r} outside 1-4", pos)
                types.append(int(ch))
                expect_type = False
            elif ch in SEPARATORS:
                raise SeparatorError(f"unexpected separator {ch!r}", pos)
            else:
                raise SeparatorError(f"unexpected character {ch!r}", pos)
        else:
            if ch in SEPARATORS:
                expect_type = True
            elif ch.isdigit():
                raise SeparatorError(f"missing separator before {ch!r}", pos)
            else:
                raise SeparatorError(f"malformed separator {ch!r}", pos)
    if expect_type:
        raise SeparatorError("dangling separator at end of seed", lead + len(body) - 1)
    if len(types) < 2:
        raise SeedTooShortError("a seed strand needs at least two machines", lead + len(body))
    return SeedSpec(tuple(types), label or "-".join(map(str, types)))


@dataclass
class FoldPrediction:
    turning_angles: list  # degrees per bond, closing bond last; None where undefined
    closes: bool
    vertex_count: int
    classification: str
    simple: bool = True
    edge_runs: list = field(default_factory=list)  # machines per polygon side, following the vertices
    undefined_pairs: list = field(default_factory=list)
    vertices: list = field(default_factory=list)  # traced corner points

    @property
    def foldable(self) -> bool:
        return not self.undefined_pairs


def _bond_pairs(seq):
    n = len(seq)
    return [(seq[k], seq[(k + 1) % n]) for k in range(n)]


def _segments_cross(p1, p2, q1, q2, eps=1e-9) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - eps <= c[0] <= max(a[0], b[0]) + eps
                and min(a[1], b[1]) - eps <= c[1] <= max(a[1], b[1]) + eps)

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True
    for d, a, b, c in ((d1, q1, q2, p1), (d2, q1, q2, p2), (d3, p1, p2, q1), (d4, p1, p2, q2)):
        if abs(d) <= eps and on_seg(a, b, c):
            return True
    return False


def _is_simple(points) -> bool:
    n = len(points) - 1
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(points[i], points[i + 1], points[j], points[j + 1]):
                return False
    return True


def _edge_runs(turns):
    """Machines per side: a side ends at every bond with a nonzero turn."""
    n = len(turns)
    corners = [k for k in range(n) if abs(turns[k]) > 1e-9]
    if not corners:
        return []
    runs = []
    for a, b in zip(corners, corners[1:] + [corners[0] + n]):
        runs.append(b - a)
    return runs


def _classify(vertex_count, runs, corner_turns) -> str:
    name = _NAMES.get(vertex_count, f"{vertex_count}-gon")
    equal_sides = len(set(runs)) == 1
    if vertex_count == 4 and len(set(round(t, 6) for t in corner_turns)) == 1:
        name = "square" if equal_sides else "rectangle"
    if equal_sides and runs[0] > 1:
        name = "expanded " + name
    return name


def predict_fold(seed: SeedSpec) -> FoldPrediction:
    seq = seed.sequence
    pairs = _bond_pairs(seq)
    turns = [fold_angle(a, b) for a, b in pairs]
    undefined = sorted({p for p, t in zip(pairs, turns) if t is None})
    if undefined:
        return FoldPrediction(turns, False, 0, "not foldable", False, [], undefined, [])
    # trace: machine k is edge k; bond k turns clockwise before edge k+1
    heading = 0.0
    x = y = 0.0
    points = [(0.0, 0.0)]
    for k in range(len(seq)):
        x += math.cos(math.radians(heading))
        y += math.sin(math.radians(heading))
        points.append((x, y))
        heading -= turns[k]
    total = sum(turns)
    returns = math.hypot(x, y) < 1e-6
    closes_angle = abs(total - 360.0) < 1e-6
    simple = _is_simple(points) if returns else False
    closes = closes_angle and returns and simple
    corners = [k for k in range(len(seq)) if abs(turns[k]) > 1e-9]
    runs = _edge_runs(turns)
    vertices = [points[k + 1] for k in corners]
    if closes:
        cls = _classify(len(corners), runs, [turns[k] for k in corners])
    elif not closes_angle:
        cls = "open"
    else:
        cls = "self-intersecting" if returns else "open"
    return FoldPrediction(turns, closes, len(corners), cls, simple, runs, [], vertices)


def _shape_signature(pred: FoldPrediction):
    """Cyclic (side length, corner turn) sequence of a closed prediction."""
    turns = [t for t in pred.turning_angles if abs(t) > 1e-9]
    return list(zip(pred.edge_runs, [round(t, 6) for t in turns]))


def _cyclic_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    if not a:
        return True
    return any(a[k:] + a[:k] == b for k in range(len(a)))


def congruent(p: FoldPrediction, q: FoldPrediction, allow_reflection: bool = True) -> bool:
    if not (p.closes and q.closes):
        return False
    a, b = _shape_signature(p), _shape_signature(q)
    if _cyclic_equal(a, b):
        return True
    if allow_reflection:
        # reflecting the polygon reverses the order of sides and turns;
        # the turn after side k becomes the turn before it
        runs = [r for r, _ in b][::-1]
        turns = [t for _, t in b][::-1]
        turns = turns[-1:] + turns[:-1]
        return _cyclic_equal(a, list(zip(runs, turns)))
    return False


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    code: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.code}: {self.message}"


def loop_bend_locations(seq: Sequence[int]) -> list:
    n = len(seq)
    return [bend_location(seq[(k - 1) % n], seq[(k + 1) % n]) for k in range(n)]


def meshable(seed: SeedSpec) -> bool:
    """Some machine of the folded loop can up-bond to a copy or mirror copy."""
    own = list(zip(seed.sequence, loop_bend_locations(seed.sequence)))
    rev = tuple(reversed(seed.sequence))
    others = own + list(zip(rev, loop_bend_locations(rev)))
    return any(PHENE_UP[ta, tb] and BEND_UP[ba, bb] for ta, ba in own for tb, bb in others)


def validate_seed(seed: SeedSpec) -> list:
    """Diagnostics for a seed; an empty list means the seed is valid."""
    out = []
    seq = seed.sequence
    if len(seq) < 3:
        out.append(Diagnostic("error", "too-short", f"{len(seq)} machines cannot fold into a polygon"))
    pred = predict_fold(seed)
    for a, b in pred.undefined_pairs:
        out.append(Diagnostic("error", "undefined-angle", f"fold angle for types ({a}, {b}) is undefined"))
    if pred.foldable and not pred.closes and len(seq) >= 3:
        total = sum(pred.turning_angles)
        if abs(total - 360.0) > 1e-6:
            out.append(Diagnostic("error", "not-closed", f"turning angles sum to {total:g} degrees, not 360"))
        else:
            out.append(Diagnostic("error", "not-simple", "traced polygon does not close into a simple loop"))
    if not meshable(seed):
        out.append(Diagnostic("error", "not-meshable", "no machine pair passes both the phene up-bond and bend-location rules"))
    if pred.closes:
        if any(r == 2 for r in pred.edge_runs):
            out.append(Diagnostic("error", "two-machine-side", "sides of exactly two machines are not supported"))
        mirror = predict_fold(seed.reversed())
        if not congruent(pred, mirror, allow_reflection=True):
            out.append(Diagnostic("error", "mirror-incongruent", "reversed strand folds to a different polygon"))
        elif not congruent(pred, mirror, allow_reflection=False):
            out.append(Diagnostic("warning", "chiral", "reversed strand folds to the mirror image of the polygon"))
    return out


def is_valid(seed: SeedSpec) -> bool:
    return not any(d.severity == "error" for d in validate_seed(seed))


def coerce_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    if isinstance(seed, str):
        return parse_seed(seed)
    return SeedSpec(tuple(seed))


def describe(pred: FoldPrediction, seed: Optional[SeedSpec] = None) -> str:
    lines = []
    if seed is not None:
        lines.append(f"seed: {seed.text}")
    lines.append("turns: " + " ".join("?" if t is None else f"{t:g}" for t in pred.turning_angles))
    lines.append(f"closes: {'yes' if pred.closes else 'no'}")
    lines.append(f"vertices: {pred.vertex_count}")
    if pred.edge_runs:
        lines.append("sides: " + " ".join(str(r) for r in pred.edge_runs))
    lines.append(f"shape: {pred.classification}")
    return "\n".join(lines)
