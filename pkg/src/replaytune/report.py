"""Figure-data CSVs derived purely from search report JSON documents."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .search import SCHEMA, SearchError

COLUMNS = {
    "speedups.csv": ["benchmark", "variant", "status", "speedup", "mean_time", "ci_low",
                     "ci_high", "deterministic_cycles", "flags"],
    "replay_vs_normal.csv": ["benchmark", "variant", "replay_cycles", "normal_hot_cycles",
                             "delta_cycles", "replay_mean_time", "relative_difference"],
    "capture_overhead.csv": ["benchmark", "normal_cycles", "captured_cycles", "overhead_cycles",
                             "overhead_fraction", "fault_count", "pages_captured"],
    "storage.csv": ["benchmark", "full_state_bytes", "snapshot_bytes", "full_to_snapshot_ratio",
                    "snapshot_fraction"],
    "replays_per_exec.csv": ["benchmark", "full_cycles", "replay_cycles", "setup_cycles",
                             "replays_per_execution"],
}


def load_report(path) -> dict:
    with open(path) as f:
        doc = json.load(f)
    check_report(doc)
    return doc


def check_report(doc: dict) -> None:
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise SearchError(f"not a schema-{SCHEMA} search report")
    for key in ("benchmark", "variants", "capture", "replays_per_execution", "baseline"):
        if key not in doc:
            raise SearchError(f"search report lacks {key!r}")


def _na(v):
    return "" if v is None else v


def rows(doc: dict) -> dict[str, list[list]]:
    """All CSV rows contributed by one report."""
    name = doc["benchmark"]["name"]
    out: dict[str, list[list]] = {k: [] for k in COLUMNS}
    for v in doc["variants"]:
        lo, hi = v["ci95"] if v.get("ci95") else (None, None)
        out["speedups.csv"].append([name, v["variant"], v["status"], _na(v["speedup"]),
                                    _na(v["mean_time"]), _na(lo), _na(hi),
                                    _na(v["deterministic_cycles"]), v["canonical"]])
    for v in doc.get("validation", []):
        out["replay_vs_normal.csv"].append([name, v["variant"], v["replay_cycles"],
                                            v["normal_hot_cycles"], v["delta_cycles"],
                                            v["replay_mean_time"], v["relative_difference"]])
    c = doc["capture"]
    out["capture_overhead.csv"].append([name, c["normal_cycles"], c["captured_cycles"],
                                        c["capture_overhead_cycles"], c["overhead_fraction"],
                                        c["fault_count"], c["pages_captured"]])
    out["storage.csv"].append([name, c["full_state_bytes"], c["snapshot_bytes"],
                               c["full_state_bytes"] / c["snapshot_bytes"],
                               c["snapshot_fraction"]])
    r = doc["replays_per_execution"]
    out["replays_per_exec.csv"].append([name, r["full_cycles"], r["replay_cycles"],
                                        r["setup_cycles"], r["ratio"]])
    return out


def write_csvs(docs: list[dict], outdir) -> list[Path]:
    """Write the five figure CSVs for ``docs`` (in the given order)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    merged: dict[str, list[list]] = {k: [] for k in COLUMNS}
    for doc in docs:
        check_report(doc)
        for k, rs in rows(doc).items():
            merged[k].extend(rs)
    paths = []
    for fname, cols in COLUMNS.items():
        p = outdir / fname
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(cols)
            w.writerows(merged[fname])
        paths.append(p)
    return paths


def summary_text(doc: dict) -> str:
    """Short human-readable digest of one report."""
    b, c, s = doc["benchmark"], doc["capture"], doc["summary"]
    lines = [
        f"benchmark {b['name']} (hot function {b['hot_function']})",
        f"  baseline replay cycles {doc['baseline']['deterministic_cycles']}",
        f"  capture: {c['pages_captured']} pages, {c['snapshot_bytes']} snapshot bytes of "
        f"{c['full_state_bytes']}, overhead {100 * c['overhead_fraction']:.2f}%",
        f"  replays per full execution {doc['replays_per_execution']['ratio']:.2f}",
        f"  variants: {s['statuses']}",
    ]
    if s.get("successful"):
        lines.append(f"  speedup min {s['min_speedup']:.3f} median {s['median_speedup']:.3f} "
                     f"max {s['max_speedup']:.3f}; {100 * s['fraction_slower']:.0f}% slower "
                     "than baseline")
    if doc.get("best"):
        lines.append(f"  best variant {doc['best']['variant']} speedup "
                     f"{doc['best']['speedup']:.3f}: {doc['best']['canonical']}")
    return "\n".join(lines) + "\n"
