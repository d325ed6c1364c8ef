"""Random search over transformation sets, evaluated only through replay.

The driver profiles and captures the benchmark once (on the baseline
pipeline image), samples K transformation sets, builds and replays each
variant, filters the timings and picks the best set.  Non-baseline variants
are never executed as whole programs during a search.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import benchmarks
from .build import baseline_layout, build_variant
from .capture import (CaptureError, CaptureStats, Snapshot, begin_capture, deserialize_snapshot,
                      serialize_snapshot)
from .image import (BenchmarkManifest, HotRegionOverflow, LinkError, ProgramImage, layout_digest,
                    load)
from .optimizer import FlagSpace, PassInternalError, TransformationSet, load_space, sample_set
from .profiler import profile
from .replay import (LayoutMismatch, NoiseModel, ReplayResult, observable_digest, replay,
                     replays_per_full_execution)
from .stats import SampleSet, ci95, mad_filter, select_best
from .vm import DEFAULT_COSTS, CostModel, Outcome, run

SCHEMA = 1


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class SearchConfig:
    benchmark: str
    K: int = 100
    R: int = 10
    alpha: float = 0.05
    noise: NoiseModel = NoiseModel()
    master_seed: int = 0
    worker_count: int = 1
    cycle_budget: int | None = None
    input_seed: int = 0
    flags_path: str | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.R < 3:
            raise ValueError("R must be at least 3 (MAD filtering needs 3 samples)")
        if self.worker_count < 1:
            raise ValueError("worker_count must be at least 1")

    def as_dict(self) -> dict:
        """Everything that determines the report; the worker count does not."""
        return {"benchmark": self.benchmark, "K": self.K, "R": self.R, "alpha": self.alpha,
                "noise": self.noise.describe(), "master_seed": self.master_seed,
                "cycle_budget": self.cycle_budget, "input_seed": self.input_seed,
                "flags_path": self.flags_path}


# -- the benchmark context -------------------------------------------------------

@dataclass
class Context:
    """Immutable per-search inputs shared by every variant evaluation."""

    manifest: BenchmarkManifest
    space: FlagSpace
    layout: object
    baseline: ProgramImage
    costs: CostModel = DEFAULT_COSTS

    @classmethod
    def create(cls, name: str, input_seed: int = 0, flags_path: str | None = None,
               costs: CostModel = DEFAULT_COSTS) -> "Context":
        space = load_space(flags_path)
        try:
            manifest = benchmarks.get(name, input_seed, space)
        except benchmarks.UnknownBenchmark:
            raise SearchError(f"unknown benchmark {name!r}; try one of {benchmarks.names()}")
        layout = baseline_layout(manifest, space)
        base = build_variant(manifest, space.baseline_set(), space, layout)
        return cls(manifest, space, layout, base, costs)

    def budget(self, cycle_budget: int | None) -> int:
        return cycle_budget if cycle_budget is not None else self.manifest.cycle_budget


# -- capture -----------------------------------------------------------------------

@dataclass(frozen=True)
class CaptureOutcome:
    snapshot: Snapshot
    stats: CaptureStats
    normal_cycles: int
    captured_cycles: int
    # what the first hot invocation produced in the captured run
    return_value: int
    observable_digest: str
    hot_cycles: int


def full_run(image: ProgramImage, manifest: BenchmarkManifest, costs: CostModel = DEFAULT_COSTS,
             budget: int | None = None):
    """Execute the whole program; the only full-run path used by the driver."""
    proc = load(image, manifest, costs)
    out = run(proc, budget if budget is not None else manifest.cycle_budget)
    if out is not Outcome.HALTED or proc.error:
        raise SearchError(f"{manifest.name}: full run failed ({proc.error or out.value})")
    return proc


def capture_once(ctx: Context, cycle_budget: int | None = None, sink=None) -> CaptureOutcome:
    """Capture the first invocation of the hot function of the baseline image."""
    image, manifest = ctx.baseline, ctx.manifest
    budget = ctx.budget(cycle_budget)
    prof = profile(image, manifest, ctx.costs, budget)
    if manifest.hot_function not in prof.ranked()[:3]:
        raise CaptureError(f"{manifest.hot_function} is not among the top cycle consumers")
    normal = full_run(image, manifest, ctx.costs, budget).cycles

    proc = load(image, manifest, ctx.costs)
    run(proc, budget, stop_pc=image.hot_entry)
    if proc.pc != image.hot_entry or proc.error:
        raise CaptureError(f"{manifest.hot_function} was never invoked")
    session = begin_capture(proc, image.hot_entry, manifest.name, manifest.hot_function)
    ret_addr = int.from_bytes(proc.space.host_read(proc.sp, 8), "little")
    entry_cycles = proc.cycles
    run(proc, budget, stop_pc=ret_addr)
    if proc.pc != ret_addr or proc.error:
        session.finalize()
        raise CaptureError(f"hot function did not return ({proc.error})")
    hot_cycles = proc.cycles - entry_cycles - session.stats.fault_cycles
    rv, digest = proc.regs[0], observable_digest(proc, manifest, image)
    snap, st = session.finalize(sink)
    proc.meta["capture_done"] = True
    out = run(proc, budget + st.capture_overhead_cycles)
    if out is not Outcome.HALTED or proc.error:
        raise CaptureError(f"captured run did not complete ({proc.error})")
    return CaptureOutcome(snap, st, normal, proc.cycles, rv, digest, hot_cycles)


# -- variant evaluation ---------------------------------------------------------------

@dataclass
class EvaluationResult:
    variant: int
    transformation: dict
    canonical: str
    status: str
    deterministic_cycles: int | None = None
    raw: list[float] = field(default_factory=list)
    filtered: list[float] = field(default_factory=list)
    mean_time: float | None = None
    ci95: tuple[float, float] | None = None
    speedup: float | None = None
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class Reference:
    """What a correct variant must reproduce."""

    return_value: int
    observable_digest: str


def variant_rng(seed: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, idx])


def sample_sets(space: FlagSpace, seed: int, k: int) -> list[TransformationSet]:
    rng = np.random.default_rng([seed, 0])
    return [sample_set(space, rng) for _ in range(k)]


def _timings(res: ReplayResult, cfg: SearchConfig, rng) -> tuple[list, list, float, tuple]:
    raw = [res.remeasure(cfg.noise, rng).measured_time for _ in range(cfg.R)]
    filt = mad_filter(raw).values
    ci = ci95(filt) if len(filt) >= 2 else (filt[0], filt[0])
    return raw, list(filt), float(np.mean(filt)), ci


def evaluate_variant(idx: int, tset: TransformationSet, ctx: Context, snapshot: Snapshot,
                     cfg: SearchConfig, ref: Reference, baseline_mean: float | None = None,
                     rng: np.random.Generator | None = None) -> EvaluationResult:
    """Build, link and replay one variant; failures are recorded, never raised."""
    ev = EvaluationResult(idx, tset.as_dict(), tset.canonical(), "ok")
    try:
        image = build_variant(ctx.manifest, tset, ctx.space, ctx.layout)
    except HotRegionOverflow as e:
        ev.status, ev.failure = "overflow", f"HotRegionOverflow: {e}"
        return ev
    except PassInternalError as e:
        ev.status, ev.failure = "pass-error", str(e)
        return ev
    except LinkError as e:
        ev.status, ev.failure = "link-error", str(e)
        return ev
    res = replay(image, snapshot, ctx.manifest, variant=idx,
                 cycle_budget=ctx.budget(cfg.cycle_budget), costs=ctx.costs)
    if not res.ok:
        ev.status, ev.failure = res.status, res.error
        return ev
    ev.deterministic_cycles = res.deterministic_cycles
    if (res.return_value, res.observable_digest) != (ref.return_value, ref.observable_digest):
        ev.status, ev.failure = "incorrect", "observable contract violated"
        return ev
    rng = rng if rng is not None else variant_rng(cfg.master_seed, idx)
    ev.raw, ev.filtered, ev.mean_time, ev.ci95 = _timings(res, cfg, rng)
    if baseline_mean is not None:
        ev.speedup = baseline_mean / ev.mean_time
    return ev


# worker-side state, installed once per process
_W: dict = {}


def _init_worker(cfg: SearchConfig, snap_blob: bytes, ref: Reference, baseline_mean: float):
    ctx = Context.create(cfg.benchmark, cfg.input_seed, cfg.flags_path)
    _W.update(cfg=cfg, ctx=ctx, snap=deserialize_snapshot(snap_blob), ref=ref, bm=baseline_mean)


def _eval_job(job: tuple[int, TransformationSet]) -> EvaluationResult:
    idx, tset = job
    return evaluate_variant(idx, tset, _W["ctx"], _W["snap"], _W["cfg"], _W["ref"], _W["bm"])


# -- the search ----------------------------------------------------------------------

@dataclass
class SearchReport:
    config: dict
    benchmark: dict
    baseline: dict
    capture: dict
    replays_per_execution: dict
    variants: list[EvaluationResult]
    best: dict | None
    summary: dict
    validation: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "config": self.config, "benchmark": self.benchmark,
                "baseline": self.baseline, "capture": self.capture,
                "replays_per_execution": self.replays_per_execution,
                "variants": [asdict(v) for v in self.variants], "best": self.best,
                "summary": self.summary, "validation": self.validation}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _summary(variants: list[EvaluationResult]) -> dict:
    ok = [v.speedup for v in variants if v.ok and v.speedup is not None]
    counts: dict[str, int] = {}
    for v in variants:
        counts[v.status] = counts.get(v.status, 0) + 1
    if not ok:
        return {"successful": 0, "statuses": counts}
    s = np.asarray(ok)
    return {"successful": len(ok), "statuses": counts, "min_speedup": float(s.min()),
            "median_speedup": float(np.median(s)), "max_speedup": float(s.max()),
            "fraction_slower": float(np.mean(s < 1.0)),
            "fraction_faster": float(np.mean(s > 1.0))}


def run_search(cfg: SearchConfig, ctx: Context | None = None,
               capture: CaptureOutcome | None = None) -> SearchReport:
    """Profile, capture, sample, replay and select; a pure function of ``cfg``."""
    ctx = ctx or Context.create(cfg.benchmark, cfg.input_seed, cfg.flags_path)
    cap = capture or capture_once(ctx, cfg.cycle_budget)
    snap = cap.snapshot
    if snap.layout_digest != layout_digest(ctx.baseline):
        raise LayoutMismatch("snapshot does not match this benchmark's layout; recapture it")
    ref = Reference(cap.return_value, cap.observable_digest)

    base_res = replay(ctx.baseline, snap, ctx.manifest, variant=-1,
                      cycle_budget=ctx.budget(cfg.cycle_budget), costs=ctx.costs)
    if not base_res.ok or (base_res.return_value, base_res.observable_digest) != (
            ref.return_value, ref.observable_digest):
        raise SearchError(f"baseline replay does not reproduce the captured run "
                          f"({base_res.error or 'observable mismatch'})")
    b_raw, b_filt, b_mean, b_ci = _timings(base_res, cfg, np.random.default_rng([cfg.master_seed, 2]))
    rpe = replays_per_full_execution(ctx.manifest, ctx.baseline, snap, ctx.costs,
                                     full_cycles=cap.normal_cycles)

    sets = sample_sets(ctx.space, cfg.master_seed, cfg.K)
    jobs = list(enumerate(sets))
    if cfg.worker_count == 1:
        results = [evaluate_variant(i, t, ctx, snap, cfg, ref, b_mean) for i, t in jobs]
    else:
        with ProcessPoolExecutor(cfg.worker_count, initializer=_init_worker,
                                 initargs=(cfg, serialize_snapshot(snap), ref, b_mean)) as ex:
            results = list(ex.map(_eval_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.worker_count))))
    results.sort(key=lambda e: e.variant)

    good = [(e.variant, SampleSet.of(e.filtered, e.variant)) for e in results if e.ok]
    best = None
    if good:
        sel = select_best(good, cfg.alpha)
        e = results[sel.best]
        best = {"variant": e.variant, "canonical": e.canonical, "speedup": e.speedup,
                "mean_time": e.mean_time, "deterministic_cycles": e.deterministic_cycles,
                "history": list(sel.history)}
    m = ctx.manifest
    st = cap.stats
    return SearchReport(
        config=cfg.as_dict(),
        benchmark={"name": m.name, "hot_function": m.hot_function, "description": m.description,
                   "data_bytes": m.data_bytes, "hot_size": ctx.baseline.hot_size,
                   "hot_region_capacity": ctx.layout.hot_region_capacity},
        baseline={"canonical": ctx.space.baseline_set().canonical(),
                  "deterministic_cycles": base_res.deterministic_cycles, "raw": b_raw,
                  "filtered": b_filt, "mean_time": b_mean, "ci95": list(b_ci),
                  "return_value": ref.return_value, "observable_digest": ref.observable_digest},
        capture={**asdict(st), "normal_cycles": cap.normal_cycles,
                 "captured_cycles": cap.captured_cycles,
                 "overhead_fraction": st.capture_overhead_cycles / cap.normal_cycles,
                 "snapshot_fraction": st.snapshot_bytes / st.full_state_bytes,
                 "first_hot_cycles": cap.hot_cycles},
        replays_per_execution={"full_cycles": cap.normal_cycles,
                               "replay_cycles": base_res.deterministic_cycles,
                               "setup_cycles": ctx.costs.replay_setup(len(snap.pages)),
                               "ratio": rpe},
        variants=results,
        best=best,
        summary=_summary(results),
    )


def validate(report: SearchReport, ctx: Context, limit: int = 20) -> list[dict]:
    """Post-hoc full runs of the first ``limit`` successful variants.

    For each, compare the replayed hot-function cycles with the profiled
    cycles of the first hot invocation in a complete execution.  This is an
    offline check of the replay model, run after (never during) the search.
    """
    out = []
    for ev in report.variants:
        if len(out) >= limit:
            break
        if not ev.ok:
            continue
        tset = ctx.space.make(**{k.replace("-", "_"): v for k, v in ev.transformation.items()})
        image = build_variant(ctx.manifest, tset, ctx.space, ctx.layout)
        prof = profile(image, ctx.manifest, ctx.costs)
        normal_hot = prof[ctx.manifest.hot_function].first_inclusive_cycles
        out.append({"variant": ev.variant, "replay_cycles": ev.deterministic_cycles,
                    "replay_mean_time": ev.mean_time, "normal_hot_cycles": normal_hot,
                    "normal_total_cycles": prof.total_cycles,
                    "delta_cycles": ev.deterministic_cycles - normal_hot,
                    "relative_difference": (ev.mean_time - normal_hot) / normal_hot})
    report.validation = out
    return out


def report_from_dict(doc: dict) -> dict:
    if doc.get("schema") != SCHEMA:
        raise SearchError(f"unsupported report schema {doc.get('schema')!r}")
    return doc


__all__ = ["SearchConfig", "SearchReport", "EvaluationResult", "Context", "CaptureOutcome",
           "SearchError", "run_search", "capture_once", "evaluate_variant", "validate",
           "sample_sets", "variant_rng", "full_run"]
