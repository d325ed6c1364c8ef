"""Command-line entry point: ``replaytune {bench,profile,capture,replay,search,report}``.

Exit codes: 0 success, 1 internal or structured error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import benchmarks
from .capture import CaptureError, CaptureStats, SnapshotError, deserialize_snapshot
from .image import ImageError, LinkError, serialize_image
from .profiler import profile
from .replay import LayoutMismatch, NoiseModel, replay, write_records
from .report import load_report, summary_text, write_csvs
from .search import (CaptureOutcome, Context, SearchConfig, SearchError, capture_once,
                     full_run, run_search, validate)
from .vm import BudgetExceeded

WORKSPACE_ENV = "REPLAYTUNE_WORKSPACE"


class UsageError(Exception):
    pass


def workspace(args) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(WORKSPACE_ENV, "replaytune-work"))
    return root / getattr(args, "benchmark", "all")


def _context(args) -> Context:
    if args.benchmark not in benchmarks.BENCHMARKS:
        raise UsageError(f"unknown benchmark {args.benchmark!r}; choose from "
                         f"{', '.join(benchmarks.names())}")
    return Context.create(args.benchmark, args.input_seed, args.flags)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# -- capture persistence --------------------------------------------------------------

def save_capture(ws: Path, cap: CaptureOutcome, input_seed: int = 0) -> None:
    ws.mkdir(parents=True, exist_ok=True)
    (ws / "snapshot.hrsn").write_bytes(cap.snapshot.to_bytes())
    _write_json(ws / "capture.json", {
        "stats": asdict(cap.stats), "normal_cycles": cap.normal_cycles,
        "captured_cycles": cap.captured_cycles, "input_seed": input_seed,
        "return_value": cap.return_value,
        "observable_digest": cap.observable_digest, "hot_cycles": cap.hot_cycles})


def load_capture(ws: Path, snapshot_path: str | None = None,
                 input_seed: int = 0) -> CaptureOutcome | None:
    """Reuse a saved capture if one exists for the same inputs."""
    snap_file = Path(snapshot_path) if snapshot_path else ws / "snapshot.hrsn"
    meta_file = snap_file.with_name("capture.json")
    if not snap_file.exists() or not meta_file.exists():
        return None
    snap = deserialize_snapshot(snap_file.read_bytes())
    meta = json.loads(meta_file.read_text())
    if meta.get("input_seed", 0) != input_seed:
        return None
    return CaptureOutcome(snap, CaptureStats(**meta["stats"]), meta["normal_cycles"],
                          meta["captured_cycles"], meta["return_value"],
                          meta["observable_digest"], meta["hot_cycles"])


# -- subcommands --------------------------------------------------------------------

def cmd_bench(args) -> int:
    rows = []
    for name in benchmarks.names():
        ctx = Context.create(name, args.input_seed, args.flags)
        m = ctx.manifest
        cycles = full_run(ctx.baseline, m, budget=args.budget).cycles
        rows.append({"name": name, "hot_function": m.hot_function, "data_bytes": m.data_bytes,
                     "baseline_cycles": cycles})
    width = max(len(r["name"]) for r in rows)
    print(f"{'benchmark':<{width}}  {'hot function':<12}  {'data bytes':>10}  {'baseline cycles':>15}")
    for r in rows:
        print(f"{r['name']:<{width}}  {r['hot_function']:<12}  {r['data_bytes']:>10}  "
              f"{r['baseline_cycles']:>15}")
    if args.out:
        _write_json(Path(args.out) / "bench.json", rows)
    return 0


def cmd_profile(args) -> int:
    ctx = _context(args)
    prof = profile(ctx.baseline, ctx.manifest, cycle_budget=args.budget)
    print(f"total cycles {prof.total_cycles}, return value {prof.return_value}")
    for f in prof.functions:
        share = 100 * f.exclusive_cycles / prof.total_cycles
        print(f"  {f.function:<14} {f.exclusive_cycles:>10} cycles {share:6.2f}%  "
              f"{f.invocation_count} call(s)")
    _write_json(workspace(args) / "profile.json",
                {"total_cycles": prof.total_cycles, "return_value": prof.return_value,
                 "functions": [asdict(f) for f in prof.functions]})
    return 0


def cmd_capture(args) -> int:
    ctx = _context(args)
    ws = workspace(args)
    cap = capture_once(ctx, args.budget)
    save_capture(ws, cap, args.input_seed)
    (ws / "baseline.hrim").write_bytes(serialize_image(ctx.baseline))
    st = cap.stats
    print(f"captured {st.pages_captured} pages ({st.snapshot_bytes} bytes of "
          f"{st.full_state_bytes}); overhead {st.capture_overhead_cycles} cycles = "
          f"{100 * st.capture_overhead_cycles / cap.normal_cycles:.2f}% of {cap.normal_cycles}")
    print(f"snapshot written to {ws / 'snapshot.hrsn'}")
    return 0


def cmd_replay(args) -> int:
    ctx = _context(args)
    ws = workspace(args)
    cap = load_capture(ws, args.snapshot, args.input_seed)
    if cap is None:
        cap = capture_once(ctx, args.budget)
        save_capture(ws, cap, args.input_seed)
    noise = NoiseModel.parse(args.noise)
    rng = np.random.default_rng(args.seed or 0)
    records, results = [], []
    for rep in range(args.replays):
        res = replay(ctx.baseline, cap.snapshot, ctx.manifest, noise, rng, variant=-1,
                     cycle_budget=args.budget)
        records.append(res.record(rep))
        results.append(res)
    write_records(ws / "replays.jsonl", records)
    r0 = results[0]
    same = (r0.return_value, r0.observable_digest) == (cap.return_value, cap.observable_digest)
    print(f"replayed {args.replays}x: {r0.deterministic_cycles} cycles, status {r0.status}, "
          f"observable {'matches' if same else 'DIFFERS FROM'} the captured run")
    return 0 if r0.ok and same else 1


def cmd_search(args) -> int:
    ctx = _context(args)
    ws = workspace(args)
    cap = load_capture(ws, args.snapshot, args.input_seed)
    if cap is None:
        cap = capture_once(ctx, args.budget)
        save_capture(ws, cap, args.input_seed)
    cfg = SearchConfig(args.benchmark, K=args.K, R=args.R, alpha=args.alpha,
                       noise=NoiseModel.parse(args.noise), master_seed=args.seed or 0,
                       worker_count=args.workers, cycle_budget=args.budget,
                       input_seed=args.input_seed, flags_path=args.flags)
    rep = run_search(cfg, ctx, cap)
    if args.validate:
        validate(rep, ctx, args.validate)
    (ws / "report.json").write_text(rep.to_json())
    records = []
    for ev in rep.variants:
        for i, t in enumerate(ev.raw):
            records.append({"variant": ev.variant, "rep": i, "cycles": ev.deterministic_cycles,
                            "time": t, "digest": rep.baseline["observable_digest"],
                            "status": ev.status})
        if not ev.raw:
            records.append({"variant": ev.variant, "rep": 0, "cycles": ev.deterministic_cycles,
                            "time": None, "digest": None, "status": ev.status})
    write_records(ws / "replays.jsonl", records)
    doc = json.loads(rep.to_json())
    write_csvs([doc], ws)
    text = summary_text(doc)
    (ws / "summary.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    docs = [load_report(p) for p in args.inputs]
    out = Path(args.out or os.environ.get(WORKSPACE_ENV, "replaytune-work"))
    paths = write_csvs(docs, out)
    text = "".join(summary_text(d) for d in docs)
    (out / "summary.txt").write_text(text)
    print(text, end="")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    shared.add_argument("--out", default=None, help="output directory (default: workspace)")
    shared.add_argument("--noise", default="off",
                        help="off | gaussian:SIGMA | spikes:SIGMA:PROB:FACTOR")
    shared.add_argument("--workers", type=int, default=1, help="worker processes")
    shared.add_argument("--budget", type=int, default=None, help="cycle budget per run")
    shared.add_argument("--input-seed", type=int, default=0, help="benchmark input seed")
    shared.add_argument("--flags", default=None, help="flag-space JSON (default: bundled)")

    p = argparse.ArgumentParser(prog="replaytune", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bench", parents=[shared], help="list bundled benchmarks")
    for name, helptext in (("profile", "per-function cycle profile"),
                           ("capture", "capture the first hot invocation")):
        sp = sub.add_parser(name, parents=[shared], help=helptext)
        sp.add_argument("benchmark")
    sp = sub.add_parser("replay", parents=[shared], help="replay the baseline from a snapshot")
    sp.add_argument("benchmark")
    sp.add_argument("--snapshot", default=None)
    sp.add_argument("-R", "--replays", type=int, default=10)
    sp = sub.add_parser("search", parents=[shared], help="random search evaluated by replay")
    sp.add_argument("benchmark")
    sp.add_argument("--snapshot", default=None)
    sp.add_argument("-K", type=int, default=100, help="sampled transformation sets")
    sp.add_argument("-R", type=int, default=10, help="replays per variant")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--validate", type=int, default=20,
                    help="after the search, fully run this many variants to check replay")
    sp = sub.add_parser("report", parents=[shared], help="figure CSVs from search reports")
    sp.add_argument("inputs", nargs="+", help="report.json files")
    return p


COMMANDS = {"bench": cmd_bench, "profile": cmd_profile, "capture": cmd_capture,
            "replay": cmd_replay, "search": cmd_search, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        if hasattr(args, "R") and args.R < 3:
            raise UsageError("-R must be at least 3")
        if hasattr(args, "K") and args.K < 1:
            raise UsageError("-K must be at least 1")
        try:
            NoiseModel.parse(args.noise)
        except ValueError as e:
            raise UsageError(str(e)) from None
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"replaytune: error: {e}", file=sys.stderr)
        return 2
    except LayoutMismatch as e:
        print(f"replaytune: layout mismatch: {e}", file=sys.stderr)
        return 1
    except (SearchError, CaptureError, SnapshotError, ImageError, LinkError, BudgetExceeded,
            OSError, RuntimeError, ValueError) as e:
        print(f"replaytune: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
