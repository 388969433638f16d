"""Command-line front end: presets, run directories, SVG frames, replay.

    johnnyvon run --preset fig1 --steps 200000 --out runs/fig1
    johnnyvon validate --seed-strand 3-3-3
    johnnyvon predict --seed-strand 2-1-2-2-1-2-2-1-2
    johnnyvon render runs/fig1/final.jv2 --out frame.svg
    johnnyvon replay runs/fig1/checkpoints/step_00100000.jv2 --steps 1000 --out replay
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import engine
from .engine import CheckpointError, ConfigurationError, Metrics, METRIC_FIELDS, SimState
from .genome import SeedParseError, SeedSpec, describe, parse_seed, predict_fold, validate_seed
from .model import FOLDED, RIGHT, TABLES, TYPE, UP, ArmKind
from .physics import IntegrityError, WorldConfig, tip_xy
from .rules import EVENT_NAMES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_INTEGRITY = 3

SOUP_COPIES = 18  # default free supply: this many copies of the seed's type multiset


@dataclass
class Preset:
    seed: str
    free: dict
    container: tuple
    steps: int
    note: str = ""
    overrides: dict = field(default_factory=dict)


FIG1_CONTAINER = (24.0, 24.0)
_BIG = (3 * FIG1_CONTAINER[0], 3 * FIG1_CONTAINER[1])  # nine times the area

PRESETS = {
    "fig1": Preset("2-2-2", {2: 54}, FIG1_CONTAINER, 500_000, "small triangle mesh"),
    "table10-triangles": Preset("2-2-2", {2: 201}, _BIG, 1_000_000, "triangle mesh"),
    "table10-squares": Preset("4-2-4-2", {2: 100, 4: 100}, _BIG, 1_000_000, "square mesh"),
    "table10-hexagons": Preset("4-4-4-4-4-4", {4: 160}, _BIG, 1_000_000, "hexagon mesh"),
    "table10-octagons": Preset("2-3-2-3-2-3-2-3", {2: 60, 3: 60}, _BIG, 1_500_000, "octagon mesh"),
    "fancy-rectangles": Preset("2-4-2-1-2-4-2-1", {1: 40, 2: 80, 4: 40}, _BIG, 1_000_000, "3x1 rectangles"),
    "fancy-large-triangles": Preset("2-1-2-2-1-2-2-1-2", {1: 60, 2: 120}, _BIG, 1_000_000,
                                    "triangles with three machines per side"),
    "large-mesh": Preset("2-2-2", {2: 699}, (84.0, 84.0), 2_000_000, "large triangle mesh"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# parsing helpers


def parse_free(text: str) -> dict:
    """'2:54' or '2:100,4:100' -> {type: count}."""
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise UsageError(f"bad --free entry {part!r}, expected type:count")
        t, c = part.split(":", 1)
        try:
            t, c = int(t), int(c)
        except ValueError:
            raise UsageError(f"bad --free entry {part!r}") from None
        if t not in (1, 2, 3, 4) or c < 0:
            raise UsageError(f"bad --free entry {part!r}: type must be 1-4 and count non-negative")
        out[t] = out.get(t, 0) + c
    return out


def parse_container(text: str) -> tuple:
    try:
        w, h = (float(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad --container {text!r}, expected WxH") from None
    if w <= 0 or h <= 0:
        raise UsageError("container dimensions must be positive")
    return w, h


def default_free(seed: SeedSpec) -> dict:
    out = {}
    for t in seed.sequence:
        out[t] = out.get(t, 0) + SOUP_COPIES
    return out


# --------------------------------------------------------------------------
# outputs

TYPE_COLOURS = {1: "#1f77b4", 2: "#d62728", 3: "#2ca02c", 4: "#9467bd"}
_SCALE = 20.0


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def render_frame(state: SimState) -> str:
    """SVG of the container, the machines as plus signs and their bonds."""
    cfg = state.config
    p = state.params
    w, h = cfg.container_width * _SCALE, cfg.container_height * _SCALE
    pad = 1.5 * _SCALE

    def pt(x, y):
        return _f(pad + x * _SCALE), _f(pad + (cfg.container_height - y) * _SCALE)

    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(w + 2 * pad)}" height="{_f(h + 2 * pad)}" '
              f'viewBox="0 0 {_f(w + 2 * pad)} {_f(h + 2 * pad)}">\n')
    out.write(f'<!-- step {state.step} -->\n')
    out.write(f'<rect x="{_f(pad)}" y="{_f(pad)}" width="{_f(w)}" height="{_f(h)}" fill="#f4f4f4" '
              f'stroke="#808080" stroke-width="3"/>\n')
    ist, pose = state.ist, state.pose
    out.write('<g stroke="#000000" stroke-width="1.5">\n')
    for i in range(state.n):
        for col, arm, other in ((RIGHT, ArmKind.RIGHT, ArmKind.LEFT), (UP, ArmKind.UP, ArmKind.UP)):
            j = int(ist[i, col])
            if j < 0 or (col == UP and j < i):
                continue
            ax, ay = pt(*tip_xy(pose[i, 0], pose[i, 1], pose[i, 2], int(arm), p))
            bx, by = pt(*tip_xy(pose[j, 0], pose[j, 1], pose[j, 2], int(other), p))
            out.write(f'<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}"/>\n')
    out.write('</g>\n')
    for i in range(state.n):
        colour = TYPE_COLOURS[int(ist[i, TYPE])]
        mx, my = pt(pose[i, 0], pose[i, 1])
        out.write(f'<g stroke="{colour}" stroke-width="2">')
        for arm in ArmKind:
            if arm == ArmKind.REPELLOR:
                continue  # hidden behind the up arm
            tx, ty = pt(*tip_xy(pose[i, 0], pose[i, 1], pose[i, 2], int(arm), p))
            out.write(f'<line x1="{mx}" y1="{my}" x2="{tx}" y2="{ty}"/>')
        fill = colour if ist[i, FOLDED] == 1 else "#ffffff"
        out.write(f'<circle cx="{mx}" cy="{my}" r="{_f(0.2 * _SCALE)}" fill="{fill}"/></g>\n')
    out.write('</svg>\n')
    return out.getvalue()


def write_metrics_csv(series, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_FIELDS)
            for m in series:
                w.writerow(m.as_row() if isinstance(m, Metrics) else m)
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def event_lines(events) -> str:
    return "".join(
        json.dumps({"step": int(s), "kind": EVENT_NAMES[int(k)], "source": int(a), "target": int(b)}) + "\n"
        for s, k, a, b in events
    )


def write_events_jsonl(events, path) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(event_lines(events))
    except OSError as exc:
        raise OSError(f"cannot write events to {path}: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunWriter:
    """Streams metrics rows, events, frames and checkpoints into a run directory."""

    def __init__(self, out: Path, manifest: dict, snapshot_every: int = 0):
        self.out = out
        self.snapshot_every = snapshot_every
        out.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest
        self._write_manifest()
        self.metrics_fh = open(out / "metrics.csv", "w", newline="")
        self.metrics = csv.writer(self.metrics_fh, lineterminator="\n")
        self.metrics.writerow(METRIC_FIELDS)
        self.events_fh = open(out / "events.jsonl", "w")

    def _write_manifest(self):
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def record(self, state: SimState, m: Metrics):
        self.events_fh.write(event_lines(state.drain_events()))
        self.metrics.writerow(m.as_row())

    def snapshot(self, state: SimState):
        if not self.snapshot_every or state.step % self.snapshot_every:
            return
        (self.out / "frames").mkdir(exist_ok=True)
        (self.out / "checkpoints").mkdir(exist_ok=True)
        (self.out / "frames" / f"frame_{state.step:08d}.svg").write_text(render_frame(state))
        engine.save_checkpoint_file(state, self.out / "checkpoints" / f"step_{state.step:08d}.jv2")

    def finish(self, state: SimState, status: str):
        self.events_fh.write(event_lines(state.drain_events()))
        self.metrics_fh.close()
        self.events_fh.close()
        engine.save_checkpoint_file(state, self.out / "final.jv2")
        files = {}
        for path in sorted(self.out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                files[path.relative_to(self.out).as_posix()] = sha256_file(path)
        self.manifest.update(end_step=state.step, status=status, files=files)
        self._write_manifest()


def drive(state: SimState, steps: int, writer: RunWriter, stop=None) -> SimState:
    """Run with metrics at the configured cadence and snapshots at theirs."""
    state.keep_events = False
    end = state.step + steps
    every = state.config.metrics_every
    snap = writer.snapshot_every

    def on_record(s, m):
        writer.record(s, m)

    first = True
    writer.snapshot(state)
    while state.step < end:
        nxt = end if not snap else min(end, (state.step // snap + 1) * snap)
        state, series = engine.run(state, nxt - state.step, stop=stop, every=every, on_record=on_record,
                                   record_initial=first)
        first = False
        writer.snapshot(state)
        if stop is not None and series and stop(state, series[-1]) and state.step % every == 0:
            break
    if first:
        # zero-step run still gets its initial row
        engine.run(state, 0, every=every, on_record=on_record)
    return state


# --------------------------------------------------------------------------
# commands


def _out_dir(args, default_name: str) -> Path:
    base = args.out or os.environ.get("JV2_OUT_DIR")
    if args.out:
        return Path(args.out)
    if base:
        return Path(base) / default_name
    return Path("runs") / default_name


def _build_config(args, preset) -> WorldConfig:
    cfg = WorldConfig()
    if preset is not None:
        w, h = preset.container
        cfg = cfg.replace(container_width=w, container_height=h, **preset.overrides)
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        try:
            cfg = WorldConfig.parse_overrides(text, cfg)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"config file {args.config}: {exc}") from None
    changes = {}
    if args.container:
        changes["container_width"], changes["container_height"] = parse_container(args.container)
    if args.rng_seed is not None:
        changes["rng_seed"] = args.rng_seed
    if args.metrics_every is not None:
        changes["metrics_every"] = args.metrics_every
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _seed_or_fail(text: str) -> SeedSpec:
    try:
        return parse_seed(text)
    except SeedParseError as exc:
        raise _Invalid(f"invalid seed strand {text!r}: {exc}") from None


class _Invalid(Exception):
    pass


def cmd_run(args) -> int:
    preset = None
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
        preset = PRESETS[args.preset]
    seed_text = args.seed_strand or (preset.seed if preset else None)
    if not seed_text:
        raise UsageError("run needs --seed-strand or --preset")
    seed = _seed_or_fail(seed_text)
    if not args.no_validate:
        errors = [d for d in validate_seed(seed) if d.severity == "error"]
        if errors:
            raise _Invalid("; ".join(str(d) for d in errors))
    free = parse_free(args.free) if args.free else (dict(preset.free) if preset else default_free(seed))
    steps = args.steps if args.steps is not None else (preset.steps if preset else 100_000)
    if steps < 0:
        raise UsageError("--steps must be non-negative")
    cfg = _build_config(args, preset)
    try:
        state = engine.init(cfg, seed, free)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args, args.preset or f"seed-{seed.text}-rng{cfg.rng_seed}")
    manifest = {
        "code_version": __version__,
        "preset": args.preset,
        "seed": seed.text,
        "free": {str(k): v for k, v in sorted(free.items())},
        "rng_seed": cfg.rng_seed,
        "config": cfg.to_dict(),
        "tables": TABLES.as_dict(),
        "start_step": state.step,
        "requested_steps": steps,
        "snapshot_every": args.snapshot_every,
        "status": "running",
    }
    writer = RunWriter(out, manifest, args.snapshot_every)
    stop = engine.finished if args.until_done else None
    try:
        state = drive(state, steps, writer, stop)
    except IntegrityError:
        writer.finish(state, "integrity-failure")
        raise
    writer.finish(state, "complete")
    m = engine.metrics(state)
    print(f"step {m.step}: free={m.free} genes={m.genes} phenes={m.phenes} "
          f"in_mesh={m.phenes_in_mesh} components={m.mesh_components} -> {out}")
    return EXIT_OK


def _load(path) -> SimState:
    try:
        return engine.load_checkpoint_file(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint: {exc}") from None
    except CheckpointError as exc:
        raise _Invalid(f"{path}: {exc}") from None


def cmd_replay(args) -> int:
    state = _load(args.checkpoint)
    out = _out_dir(args, f"replay-{state.step:08d}")
    manifest = {
        "code_version": __version__,
        "replay_of": str(args.checkpoint),
        "seed": state.seed_text,
        "rng_seed": state.config.rng_seed,
        "config": state.config.to_dict(),
        "tables": TABLES.as_dict(),
        "start_step": state.step,
        "requested_steps": args.steps,
        "snapshot_every": args.snapshot_every,
        "status": "running",
    }
    writer = RunWriter(out, manifest, args.snapshot_every)
    state = drive(state, args.steps, writer)
    writer.finish(state, "complete")
    print(f"replayed to step {state.step} -> {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    paths = [Path(p) for p in args.checkpoints]
    if len(paths) > 1 or (args.out and Path(args.out).suffix != ".svg"):
        outdir = Path(args.out or ".")
        outdir.mkdir(parents=True, exist_ok=True)
        for p in paths:
            (outdir / (p.stem + ".svg")).write_text(render_frame(_load(p)))
    else:
        svg = render_frame(_load(paths[0]))
        if args.out:
            Path(args.out).write_text(svg)
        else:
            sys.stdout.write(svg)
    return EXIT_OK


def cmd_validate(args) -> int:
    seed = _seed_or_fail(args.seed_strand)
    diags = validate_seed(seed)
    for d in diags:
        print(d, file=sys.stderr if d.severity == "error" else sys.stdout)
    if any(d.severity == "error" for d in diags):
        return EXIT_INVALID
    print(f"{seed.text}: valid")
    return EXIT_OK


def cmd_predict(args) -> int:
    seed = _seed_or_fail(args.seed_strand)
    pred = predict_fold(seed)
    print(describe(pred, seed))
    if pred.undefined_pairs:
        for a, b in pred.undefined_pairs:
            print(f"not foldable: fold angle for ({a}, {b}) is undefined", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="johnnyvon", description="Self-replicating, self-assembling machines in a 2D liquid.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="simulate and write a run directory")
    r.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    r.add_argument("--seed-strand", help="seed gene, e.g. 2-2-2")
    r.add_argument("--free", help="free machines, type:count[,type:count...]")
    r.add_argument("--steps", type=int)
    r.add_argument("--rng-seed", type=int)
    r.add_argument("--container", help="WxH in machine lengths")
    r.add_argument("--config", help="file of 'key = value' lines")
    r.add_argument("--snapshot-every", type=int, default=0, help="frame and checkpoint cadence (0 = off)")
    r.add_argument("--metrics-every", type=int)
    r.add_argument("--out", help="run directory (default $JV2_OUT_DIR/<name> or runs/<name>)")
    r.add_argument("--until-done", action="store_true", help="stop once no free machines or non-seed genes remain")
    r.add_argument("--no-validate", action="store_true", help="run even if the seed fails validation")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="seed diagnostics")
    v.add_argument("--seed-strand", required=True)
    v.set_defaults(func=cmd_validate)

    p = sub.add_parser("predict", help="predicted fold of a seed")
    p.add_argument("--seed-strand", required=True)
    p.set_defaults(func=cmd_predict)

    d = sub.add_parser("render", help="checkpoint(s) to SVG")
    d.add_argument("checkpoints", nargs="+")
    d.add_argument("--out", help="SVG file, or directory for several checkpoints")
    d.set_defaults(func=cmd_render)

    y = sub.add_parser("replay", help="continue a run from a checkpoint")
    y.add_argument("checkpoint")
    y.add_argument("--steps", type=int, required=True)
    y.add_argument("--snapshot-every", type=int, default=0)
    y.add_argument("--out")
    y.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    if getattr(args, "snapshot_every", 0) and args.snapshot_every < 0:
        print("johnnyvon: error: --snapshot-every must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "replay" and args.steps < 0:
        print("johnnyvon: error: --steps must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"johnnyvon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _Invalid as exc:
        print(f"johnnyvon: invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IntegrityError as exc:
        print(f"johnnyvon: integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"johnnyvon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
