"""World state, the stepping loop, metrics and checkpoints."""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .genome import SeedSpec, coerce_seed
from .model import (
    FOLD_ANGLE_RAD,
    FOLDED,
    IN_MESH,
    LEFT,
    N_COLUMNS,
    REPEL_COUNTER,
    RIGHT,
    RIGHT_CLOSURE,
    RIGHT_STREAK,
    SEED_GENE,
    SEED_PHENE,
    SPLIT_STATE,
    STRAND_POSITION,
    TYPE,
    UP,
    UP_STREAK,
    ArmKind,
    Bond,
    BondKind,
    MachineState,
    check_type,
)
from .physics import FOLD_SIGN, IntegrityError, WorldConfig
from .rules import (
    EV_SHATTER,
    EV_UNFOLD,
    EVENT_NAMES,
    OK,
    check_integrity,
    derive,
    events_per_step_bound,
    run_steps,
    update_strand_positions,
)

CHECKPOINT_MAGIC = b"JV2\0"
CHECKPOINT_VERSION = 1

METRIC_FIELDS = (
    "step",
    "free",
    "genes",
    "phenes",
    "phenes_in_mesh",
    "in_mesh_machines",
    "mesh_components",
    "shatter_events",
    "unfold_events",
)

SEED_SPACING = 2.0  # seed machines sit tip to tip
MIN_SEPARATION = 1.0  # between free machine middles at placement
SEED_CLEARANCE = 2.5  # free middles to any seed middle
WALL_MARGIN = 1.0


class ConfigurationError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Metrics:
    step: int
    free: int
    genes: int
    phenes: int
    phenes_in_mesh: int
    in_mesh_machines: int
    mesh_components: int
    shatter_events: int
    unfold_events: int

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in METRIC_FIELDS)


@dataclass
class Event:
    step: int
    kind: str
    source: int
    target: int

    @property
    def is_root(self) -> bool:
        return self.source == self.target

    def as_dict(self) -> dict:
        return {"step": self.step, "kind": self.kind, "source": self.source, "target": self.target}


@dataclass
class SimState:
    """The whole world at one step.

    ist holds the integer state of every machine (columns from model), pose
    is (x, y, angle) and vel the matching velocities. Bonds live in the
    neighbour columns. The random stream is counter based, so its full state
    is config.rng_seed plus the step number.
    """

    config: WorldConfig
    ist: np.ndarray
    pose: np.ndarray
    vel: np.ndarray
    step: int = 0
    seed_text: str = ""
    shatter_events: int = 0
    unfold_events: int = 0
    events_logged: int = 0  # total events ever appended, including drained ones
    event_buf: np.ndarray = field(default=None, repr=False)
    n_buffered: int = 0
    keep_events: bool = True

    def __post_init__(self):
        self.ist = np.ascontiguousarray(self.ist, dtype=np.int64)
        self.pose = np.ascontiguousarray(self.pose, dtype=np.float64)
        self.vel = np.ascontiguousarray(self.vel, dtype=np.float64)
        if self.event_buf is None:
            self.event_buf = np.zeros((max(1024, 4 * events_per_step_bound(self.n)), 4), np.int64)
        self._params = self.config.to_params()
        self._force = np.zeros((self.n, 3))

    @property
    def n(self) -> int:
        return self.ist.shape[0]

    @property
    def params(self) -> np.ndarray:
        return self._params

    def copy(self) -> "SimState":
        s = SimState(self.config, self.ist.copy(), self.pose.copy(), self.vel.copy(), self.step, self.seed_text,
                     self.shatter_events, self.unfold_events, self.events_logged, self.event_buf.copy(),
                     self.n_buffered, self.keep_events)
        return s

    # -- accessors
    def machine(self, i: int) -> MachineState:
        return MachineState.from_arrays(self.ist, self.pose, self.vel, i)

    @property
    def machines(self) -> list:
        return [self.machine(i) for i in range(self.n)]

    @property
    def bonds(self) -> list:
        out = []
        ist = self.ist
        for i in range(self.n):
            r = int(ist[i, RIGHT])
            if r >= 0:
                if ist[i, FOLDED] == 1 and ist[r, FOLDED] == 1:
                    target = FOLD_SIGN * float(FOLD_ANGLE_RAD[ist[i, TYPE], ist[r, TYPE]])
                else:
                    target = 0.0
                out.append(Bond(BondKind.SIDEWAYS, i, r, ArmKind.RIGHT, ArmKind.LEFT, target,
                                int(ist[i, RIGHT_STREAK]), bool(ist[i, RIGHT_CLOSURE])))
            u = int(ist[i, UP])
            if u > i:
                out.append(Bond(BondKind.UP, i, u, ArmKind.UP, ArmKind.UP, math.pi, int(ist[i, UP_STREAK])))
        return out

    def derived(self):
        """(bond in tolerance on right arm, up bond in tolerance, machine in tolerance, bend-location)."""
        return derive(self.ist.copy(), self.pose, self.params)

    def column(self, col: int) -> np.ndarray:
        return self.ist[:, col].copy()

    # -- events
    @property
    def events(self) -> list:
        return [Event(int(s), EVENT_NAMES[k], int(a), int(b)) for s, k, a, b in self.event_buf[: self.n_buffered]]

    def event_array(self) -> np.ndarray:
        return self.event_buf[: self.n_buffered].copy()

    def drain_events(self) -> np.ndarray:
        out = self.event_buf[: self.n_buffered].copy()
        self.n_buffered = 0
        return out

    def _reserve(self, needed: int) -> None:
        if self.event_buf.shape[0] - self.n_buffered >= needed:
            return
        if not self.keep_events and self.n_buffered:
            self.n_buffered = 0
            if self.event_buf.shape[0] >= needed:
                return
        size = max(2 * self.event_buf.shape[0], self.n_buffered + 2 * needed)
        buf = np.zeros((size, 4), np.int64)
        buf[: self.n_buffered] = self.event_buf[: self.n_buffered]
        self.event_buf = buf


# --------------------------------------------------------------------------
# construction


def _blank(n: int, config: WorldConfig):
    ist = np.zeros((n, N_COLUMNS), np.int64)
    ist[:, LEFT] = ist[:, RIGHT] = ist[:, UP] = -1
    ist[:, SPLIT_STATE] = 1
    ist[:, STRAND_POSITION] = 2
    ist[:, REPEL_COUNTER] = config.repel_steps
    return ist, np.zeros((n, 3)), np.zeros((n, 3))


def _seed_positions(seed: SeedSpec, config: WorldConfig):
    cx, cy = config.container_width / 2.0, config.container_height / 2.0
    k = len(seed)
    return [(cx + (j - (k - 1) / 2.0) * SEED_SPACING, cy) for j in range(k)]


def init(config: WorldConfig, seed, free_counts: Optional[dict] = None, placement="uniform-random") -> SimState:
    """Seed strand at the centre, free machines placed per the policy.

    placement is "uniform-random" (rejection sampling with numpy's
    generator seeded by config.rng_seed) or a list of (type, x, y, angle)
    for the free machines, in id order after the seed.
    """
    seed = coerce_seed(seed)
    free_counts = dict(free_counts or {})
    if isinstance(placement, str):
        if placement != "uniform-random":
            raise ConfigurationError(f"unknown placement policy {placement!r}")
        types = []
        for t in sorted(free_counts):
            c = int(free_counts[t])
            if c < 0:
                raise ConfigurationError(f"negative count for type {t}")
            types += [check_type(t)] * c
        scripted = None
    else:
        scripted = [tuple(p) for p in placement]
        types = [check_type(int(p[0])) for p in scripted]
    k = len(seed)
    n = k + len(types)
    ist, pose, vel = _blank(n, config)
    seed_xy = _seed_positions(seed, config)
    for j, (t, (x, y)) in enumerate(zip(seed.sequence, seed_xy)):
        if not (0 <= x <= config.container_width and 0 <= y <= config.container_height):
            raise ConfigurationError("container too small for the seed strand")
        ist[j, TYPE] = t
        ist[j, SEED_GENE] = 1
        ist[j, SEED_PHENE] = 1
        ist[j, LEFT] = j - 1 if j > 0 else -1
        ist[j, RIGHT] = j + 1 if j < k - 1 else -1
        pose[j] = (x, y, 0.0)
    if scripted is None:
        rng = np.random.default_rng(config.rng_seed)
        placed = _place_uniform(rng, len(types), seed_xy, config)
        angles = rng.uniform(0.0, 2.0 * math.pi, len(types))
        for q, t in enumerate(types):
            i = k + q
            ist[i, TYPE] = t
            pose[i] = (placed[q][0], placed[q][1], angles[q])
    else:
        for q, (t, x, y, a) in enumerate(scripted):
            i = k + q
            ist[i, TYPE] = int(t)
            pose[i] = (float(x), float(y), float(a) % (2.0 * math.pi))
    update_strand_positions(ist)
    state = SimState(config, ist, pose, vel, 0, seed.text)
    verify(state)
    return state


def _place_uniform(rng, count, seed_xy, config, max_tries=20000):
    w, h = config.container_width, config.container_height
    if w <= 2 * WALL_MARGIN or h <= 2 * WALL_MARGIN:
        if count:
            raise ConfigurationError("container too small to place free machines")
        return []
    pts = np.zeros((count, 2))
    seed = np.array(seed_xy, dtype=float).reshape(-1, 2)
    for q in range(count):
        for _ in range(max_tries):
            x = rng.uniform(WALL_MARGIN, w - WALL_MARGIN)
            y = rng.uniform(WALL_MARGIN, h - WALL_MARGIN)
            if q and np.min((pts[:q, 0] - x) ** 2 + (pts[:q, 1] - y) ** 2) < MIN_SEPARATION**2:
                continue
            if len(seed) and np.min((seed[:, 0] - x) ** 2 + (seed[:, 1] - y) ** 2) < SEED_CLEARANCE**2:
                continue
            pts[q] = (x, y)
            break
        else:
            raise ConfigurationError(f"could not place {count} free machines in a {w:g}x{h:g} container")
    return pts


def from_machines(config: WorldConfig, machines: Sequence[dict], bonds: Iterable = (), seed_text: str = "") -> SimState:
    """Scripted world from explicit machine records.

    Each record needs type, x, y and may set angle and any flag or counter
    column by its lowercase name (folded, in_mesh, replicated, ...). bonds
    are ("side", left_id, right_id[, closure]) or ("up", a, b).
    """
    from . import model

    n = len(machines)
    ist, pose, vel = _blank(n, config)
    for i, m in enumerate(machines):
        m = dict(m)
        ist[i, TYPE] = check_type(m.pop("type"))
        pose[i] = (float(m.pop("x")), float(m.pop("y")), float(m.pop("angle", 0.0)) % (2.0 * math.pi))
        for key, value in m.items():
            col = getattr(model, key.upper(), None)
            if not isinstance(col, int) or key.upper() in ("LEFT", "RIGHT", "UP", "TYPE"):
                raise ConfigurationError(f"unknown machine field {key!r}")
            ist[i, col] = int(value)
    for b in bonds:
        kind, a, c = b[0], int(b[1]), int(b[2])
        if kind == "side":
            ist[a, RIGHT] = c
            ist[c, LEFT] = a
            if len(b) > 3 and b[3]:
                ist[a, RIGHT_CLOSURE] = 1
        elif kind == "up":
            ist[a, UP] = c
            ist[c, UP] = a
        else:
            raise ConfigurationError(f"unknown bond kind {kind!r}")
    update_strand_positions(ist)
    state = SimState(config, ist, pose, vel, 0, seed_text)
    verify(state)
    return state


def verify(state: SimState) -> None:
    status = check_integrity(state.ist, state.pose)
    if status != OK:
        raise IntegrityError(_integrity_message(state, status))


def _integrity_message(state, status):
    what = "non-finite pose" if status == 1 else "asymmetric neighbour references"
    return f"integrity failure at step {state.step}: {what}"


# --------------------------------------------------------------------------
# stepping


def _advance(state: SimState, nsteps: int) -> None:
    reserve = events_per_step_bound(state.n)
    seed = np.uint64(state.config.rng_seed)
    while nsteps > 0:
        state._reserve(min(nsteps, 256) * reserve + reserve)
        start = state.n_buffered
        done, n_ev, status = run_steps(state.ist, state.pose, state.vel, state.params, state.step, nsteps, seed,
                                       state.event_buf, state.n_buffered, state._force, reserve)
        new = state.event_buf[start:n_ev]
        if len(new):
            roots = new[:, 2] == new[:, 3]
            state.shatter_events += int(np.count_nonzero(roots & (new[:, 1] == EV_SHATTER)))
            state.unfold_events += int(np.count_nonzero(roots & (new[:, 1] == EV_UNFOLD)))
        state.events_logged += n_ev - start
        state.n_buffered = n_ev
        state.step += done
        nsteps -= done
        if status != OK:
            raise IntegrityError(_integrity_message(state, status))


def step(state: SimState) -> SimState:
    """Advance one step in place and return the state."""
    _advance(state, 1)
    return state


def run(state: SimState, max_steps: int, stop: Optional[Callable[[SimState, Metrics], bool]] = None,
        every: Optional[int] = None, on_record: Optional[Callable[[SimState, Metrics], None]] = None,
        record_initial: bool = True):
    """Step up to max_steps, recording metrics every `every` steps.

    Metrics are taken whenever the step number is a multiple of `every` (and
    at the start if record_initial); stop is checked at those points.
    Returns (state, list of Metrics).
    """
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    every = every or state.config.metrics_every
    series = []
    end = state.step + max_steps

    def record():
        m = metrics(state)
        series.append(m)
        if on_record is not None:
            on_record(state, m)
        return stop is not None and stop(state, m)

    if record_initial and state.step % every == 0:
        if record():
            return state, series
    while state.step < end:
        nxt = min(end, (state.step // every + 1) * every)
        _advance(state, nxt - state.step)
        if state.step % every == 0 and record():
            break
    return state, series


# --------------------------------------------------------------------------
# metrics


def strands(ist: np.ndarray) -> list:
    """Sideways-connected components of non-free machines, each as an id list
    ordered left to right (closed loops start at their lowest id)."""
    n = ist.shape[0]
    seen = np.zeros(n, bool)
    out = []
    for i in range(n):
        if seen[i] or (ist[i, LEFT] < 0 and ist[i, RIGHT] < 0 and ist[i, UP] < 0):
            continue
        # walk left to the start, or all the way round a loop
        a = i
        while ist[a, LEFT] >= 0 and ist[a, LEFT] != i:
            a = int(ist[a, LEFT])
        if ist[a, LEFT] == i:
            a = i
        comp = [a]
        seen[a] = True
        b = int(ist[a, RIGHT])
        while b >= 0 and not seen[b]:
            comp.append(b)
            seen[b] = True
            b = int(ist[b, RIGHT])
        if ist[comp[-1], RIGHT] == comp[0]:
            k = comp.index(min(comp))
            comp = comp[k:] + comp[:k]
        out.append(comp)
    return out


def is_closed(ist: np.ndarray, comp: Sequence[int]) -> bool:
    return len(comp) > 2 and ist[comp[-1], RIGHT] == comp[0]


def _components(n, edges, members):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for i in members:
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: (-len(g), g[0]))


def mesh_components(ist: np.ndarray) -> list:
    """Groups of in-mesh machines connected by bonds among in-mesh machines."""
    members = [i for i in range(ist.shape[0]) if ist[i, IN_MESH] == 1]
    inm = ist[:, IN_MESH] == 1
    edges = []
    for i in members:
        for col in (RIGHT, UP):
            j = int(ist[i, col])
            if j >= 0 and inm[j]:
                edges.append((i, j))
    return _components(ist.shape[0], edges, members)


def metrics(state: SimState) -> Metrics:
    ist = state.ist
    free = int(np.count_nonzero((ist[:, LEFT] < 0) & (ist[:, RIGHT] < 0) & (ist[:, UP] < 0)))
    genes = phenes = in_mesh_phenes = 0
    for comp in strands(ist):
        folded = ist[comp, FOLDED]
        if folded.any():
            phenes += 1
            if (ist[comp, IN_MESH] == 1).all():
                in_mesh_phenes += 1
        elif len(comp) >= 2:
            genes += 1
    return Metrics(
        step=state.step,
        free=free,
        genes=genes,
        phenes=phenes,
        phenes_in_mesh=in_mesh_phenes,
        in_mesh_machines=int(np.count_nonzero(ist[:, IN_MESH] == 1)),
        mesh_components=len(mesh_components(ist)),
        shatter_events=state.shatter_events,
        unfold_events=state.unfold_events,
    )


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_save(state: SimState) -> bytes:
    header = {
        "config": state.config.to_dict(),
        "step": state.step,
        "n": state.n,
        "seed": state.seed_text,
        "rng_seed": state.config.rng_seed,
        "shatter_events": state.shatter_events,
        "unfold_events": state.unfold_events,
        "events_logged": state.events_logged,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    bonds = np.array([(int(b.kind), b.a_id, b.b_id) for b in state.bonds], dtype="<i8").reshape(-1, 3)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(hdr)),
        hdr,
        state.ist.astype("<i8").tobytes(),
        state.pose.astype("<f8").tobytes(),
        state.vel.astype("<f8").tobytes(),
        struct.pack("<Q", len(bonds)),
        bonds.tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_load(data: bytes) -> SimState:
    data = bytes(data)
    if len(data) < 12:
        raise CheckpointTruncatedError("checkpoint shorter than its fixed header")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint stream (bad magic bytes)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    off = 12
    if len(data) < off + hlen + 4:
        raise CheckpointTruncatedError("checkpoint truncated inside its header")
    try:
        header = json.loads(data[off:off + hlen])
        n = int(header["n"])
    except (ValueError, KeyError, TypeError):
        if zlib.crc32(data[:-4]) != struct.unpack_from("<I", data, len(data) - 4)[0]:
            raise CheckpointChecksumError("checkpoint checksum mismatch") from None
        raise CheckpointError("unreadable checkpoint header") from None
    off += hlen
    fixed = n * N_COLUMNS * 8 + 2 * n * 3 * 8 + 8
    if len(data) < off + fixed + 4:
        raise CheckpointTruncatedError("checkpoint truncated inside the machine arrays")
    nb = struct.unpack_from("<Q", data, off + fixed - 8)[0]
    total = off + fixed + nb * 24 + 4
    if nb > len(data) or len(data) < total:
        raise CheckpointTruncatedError("checkpoint truncated inside the bond list")
    if len(data) > total:
        raise CheckpointError("trailing bytes after checkpoint")
    (crc,) = struct.unpack_from("<I", data, total - 4)
    if zlib.crc32(data[: total - 4]) != crc:
        raise CheckpointChecksumError("checkpoint checksum mismatch")
    ist = np.frombuffer(data, "<i8", n * N_COLUMNS, off).reshape(n, N_COLUMNS).astype(np.int64)
    off += n * N_COLUMNS * 8
    pose = np.frombuffer(data, "<f8", n * 3, off).reshape(n, 3).astype(np.float64)
    off += n * 24
    vel = np.frombuffer(data, "<f8", n * 3, off).reshape(n, 3).astype(np.float64)
    off += n * 24 + 8
    bonds = np.frombuffer(data, "<i8", nb * 3, off).reshape(nb, 3)
    config = WorldConfig.from_dict(header["config"])
    state = SimState(config, ist, pose, vel, int(header["step"]), header.get("seed", ""),
                     int(header["shatter_events"]), int(header["unfold_events"]), int(header.get("events_logged", 0)))
    listed = {(int(k), int(a), int(b)) for k, a, b in bonds}
    if listed != {(int(b.kind), b.a_id, b.b_id) for b in state.bonds}:
        raise CheckpointError("bond list disagrees with neighbour references")
    verify(state)
    return state


def save_checkpoint_file(state: SimState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_save(state))


def load_checkpoint_file(path) -> SimState:
    with open(path, "rb") as fh:
        return checkpoint_load(fh.read())


# --------------------------------------------------------------------------
# stop predicates


def single_mesh_fraction(state: SimState) -> float:
    comps = mesh_components(state.ist)
    return len(comps[0]) / state.n if comps and state.n else 0.0


def finished(state: SimState, m: Metrics) -> bool:
    """No free machines and no genes other than the seed."""
    return m.free == 0 and m.genes <= 1
