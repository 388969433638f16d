"""Scripted-world builders shared by the scenario and acceptance tests."""
from __future__ import annotations

import math

import numpy as np

from johnnyvon import engine
from johnnyvon.model import FOLD_ANGLE_DEG, IN_MESH, LEFT, RIGHT, TYPE, UP
from johnnyvon.physics import WorldConfig
from johnnyvon.rules import EV_IN_MESH, EV_SEED_PHENE, EVENT_NAMES

EDGE = 2.0  # tip-to-tip span of a machine
GAP = 1.5  # middle-to-middle distance across a relaxed up bond


def quiet(**kw) -> WorldConfig:
    """Noise-free config for scripted relaxation."""
    kw.setdefault("container_width", 60.0)
    kw.setdefault("container_height", 60.0)
    kw.setdefault("brownian_force_sigma", 0.0)
    kw.setdefault("brownian_torque_sigma", 0.0)
    return WorldConfig(**kw)


def straight_strand(types, x0, y0, angle=0.0, **flags):
    """Machine records for a straight strand, left end first."""
    c, s = math.cos(angle), math.sin(angle)
    return [dict(type=t, x=x0 + k * EDGE * c, y=y0 + k * EDGE * s, angle=angle, **flags)
            for k, t in enumerate(types)]


def polygon(types, cx, cy, rotation=0.0, **flags):
    """Relaxed closed phene: machines as edges, clockwise turns, centred at (cx, cy)."""
    heading = 0.0
    p = np.zeros(2)
    mids, heads = [], []
    for t, u in zip(types, list(types[1:]) + [types[0]]):
        d = np.array([math.cos(heading), math.sin(heading)])
        mids.append(p + d * EDGE / 2)
        heads.append(heading)
        p = p + d * EDGE
        heading -= math.radians(FOLD_ANGLE_DEG[t, u])
    mids = np.array(mids)
    mids -= mids.mean(axis=0)
    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    mids = mids @ rot.T
    return [dict(type=t, x=cx + m[0], y=cy + m[1], angle=(h + rotation) % (2 * math.pi), **flags)
            for t, m, h in zip(types, mids, heads)]


def reflect_across(machines, k):
    """Neighbouring phene across edge k: point reflection through the bond midpoint."""
    m = machines[k]
    a = m["angle"] + math.pi / 2
    cx = m["x"] + 0.5 * GAP * math.cos(a)
    cy = m["y"] + 0.5 * GAP * math.sin(a)
    return [dict(mm, x=2 * cx - mm["x"], y=2 * cy - mm["y"], angle=(mm["angle"] + math.pi) % (2 * math.pi))
            for mm in machines]


def rotate_about(machines, ox, oy, phi):
    c, s = math.cos(phi), math.sin(phi)
    out = []
    for m in machines:
        dx, dy = m["x"] - ox, m["y"] - oy
        out.append(dict(m, x=ox + c * dx - s * dy, y=oy + s * dx + c * dy, angle=(m["angle"] + phi) % (2 * math.pi)))
    return out


class World:
    """Accumulates machines and bonds, then builds a SimState."""

    def __init__(self):
        self.machines = []
        self.bonds = []

    def add_strand(self, records, closed=False):
        base = len(self.machines)
        self.machines += records
        n = len(records)
        for k in range(n - 1):
            self.bonds.append(("side", base + k, base + k + 1))
        if closed:
            self.bonds.append(("side", base + n - 1, base, True))
        return list(range(base, base + n))

    def up(self, a, b):
        self.bonds.append(("up", a, b))

    def build(self, config, seed_text=""):
        return engine.from_machines(config, self.machines, self.bonds, seed_text)


def mesh_flags():
    return dict(folded=1, in_mesh=1, replicated=1)


def triangle_ring(count=5, cx=30.0, cy=30.0, flags=None):
    """`count` 2-2-2 triangles around one lattice vertex, each up-bonded to the next.

    Six triangles are the relaxed arrangement (alternate reflections across
    the two edges that meet at the shared vertex). With five, the ring is
    spread evenly around the vertex so that closing it forces every bond off
    its target: a stressed pentagon.
    """
    flags = mesh_flags() if flags is None else flags
    # ring edges cycle 1, 2, 0: each reflection moves the corner that faces
    # the shared vertex one position round the triangle
    edges = [1, 2, 0, 1, 2, 0]
    ring = [polygon((2, 2, 2), 0.0, 0.0, **flags)]
    for k in range(5):
        ring.append(reflect_across(ring[-1], edges[k]))
    cents = np.array([[np.mean([m["x"] for m in t]), np.mean([m["y"] for m in t])] for t in ring])
    o = cents.mean(axis=0)
    phis = np.arctan2(cents[:, 1] - o[1], cents[:, 0] - o[0])
    step = (phis[1] - phis[0] + math.pi) % (2 * math.pi) - math.pi  # +-60 degrees
    world = World()
    ids = []
    for k in range(count):
        tri = ring[k]
        if count != 6:
            tri = rotate_about(tri, o[0], o[1], k * (math.copysign(2 * math.pi / count, step) - step))
        tri = [dict(m, x=m["x"] - o[0] + cx, y=m["y"] - o[1] + cy) for m in tri]
        ids.append(world.add_strand(tri, closed=True))
    for k in range(count - 1):
        world.up(ids[k][edges[k]], ids[k + 1][edges[k]])
    world.up(ids[count - 1][edges[count - 1]], ids[0][0])
    return world, ids


def double_occupancy(shift=0.25, cx=30.0, cy=30.0):
    """Relaxed six-ring plus a loose in-mesh triangle sitting in the gap of triangle 3."""
    world, ids = triangle_ring(6, cx, cy)
    copy = [dict(world.machines[k], x=world.machines[k]["x"] + shift, y=world.machines[k]["y"] + shift)
            for k in ids[3]]
    ids.append(world.add_strand(copy, closed=True))
    return world, ids


def facing_pairs(state, ids_a, ids_b, limit=1.2):
    """Machine pairs of two phenes whose up tips nearly touch."""
    from johnnyvon.physics import machine_tip
    out = []
    for a in ids_a:
        ax, ay = machine_tip(state.pose, a, 2, state.params)
        for b in ids_b:
            bx, by = machine_tip(state.pose, b, 2, state.params)
            if math.hypot(ax - bx, ay - by) < limit:
                out.append((a, b))
    return out


def audit_mesh_sourcing(state, steps, log=None):
    """Step one at a time and explain every in-mesh 0->1 flip from the log.

    A flip must come with a SeedPhene event naming the machine, or an InMesh
    event whose source was in the mesh and bonded to it on the previous step.
    Also checks that machine count and types never change. Event rows are
    appended to `log` when given. Returns (flips, unexplained, conserved).
    """
    flips = 0
    bad = []
    conserved = True
    n, types = state.n, state.ist[:, TYPE].copy()
    prev = state.ist.copy()
    for _ in range(steps):
        engine.step(state)
        rows = state.drain_events()
        if log is not None:
            log.extend(map(tuple, rows.tolist()))
        cur = state.ist
        if state.n != n or not np.array_equal(cur[:, TYPE], types):
            conserved = False
        for i in np.flatnonzero((prev[:, IN_MESH] == 0) & (cur[:, IN_MESH] == 1)):
            flips += 1
            ok = False
            for _, kind, src, tgt in rows:
                if tgt != i:
                    continue
                if kind == EV_SEED_PHENE:
                    ok = True
                elif kind == EV_IN_MESH:
                    bonded = src in (prev[i, LEFT], prev[i, RIGHT], prev[i, UP])
                    ok = ok or (bonded and prev[src, IN_MESH] == 1)
            if not ok:
                bad.append((state.step, int(i)))
        prev = cur.copy()
    return flips, bad, conserved


def fig1_trial(rng_seed, budget=500_000, tail=10_000):
    """One Fig. 1-analog world: audited run over the budget, then the grey-goo tail."""
    state = engine.init(WorldConfig(rng_seed=rng_seed), "2-2-2", {2: 54})
    log = []
    flips, bad, conserved = audit_mesh_sourcing(state, budget, log)
    out = dict(rng_seed=rng_seed, fraction=engine.single_mesh_fraction(state),
               metrics=engine.metrics(state).as_row(), flips=flips, unexplained=bad, conserved=conserved)
    first = {}
    for k, (_, kind, _, _) in enumerate(log):
        name = EVENT_NAMES[kind]
        if name in ("FoldNow", "SeedPhene"):
            name = "fold"
        first.setdefault(name, k)
    out["first"] = first
    # grey goo: once the soup is used up, no gene may take on new machines
    while not engine.finished(state, engine.metrics(state)) and state.step < 2 * budget:
        engine.run(state, 1000, record_initial=False, every=1000)
    out["finished_at"] = state.step if engine.finished(state, engine.metrics(state)) else None
    state.drain_events()
    engine.run(state, tail, record_initial=False, every=tail)
    out["tail_gene_bonds"] = sum(1 for e in state.events if e.kind == "GeneUpBond")
    return out


def replication_world(seed_text, config=None):
    """Seed strand with a matching free machine parked on each up arm."""
    config = config or quiet(container_width=24.0, container_height=24.0)
    probe = engine.init(config, seed_text, {})
    types = [int(t) for t in seed_text.split("-")]
    place = [(t, x, y + GAP, math.pi) for t, (x, y) in zip(types, probe.pose[: len(types), :2])]
    return engine.init(config, seed_text, placement=place)


def kinds(state, *names):
    return [(e.step, e.kind, e.source, e.target) for e in state.events if not names or e.kind in names]
