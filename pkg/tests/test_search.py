import json

import pytest

from replaytune import search
from replaytune.image import HotRegionOverflow, LinkError
from replaytune.optimizer import PassInternalError
from replaytune.profiler import profile
from replaytune.build import build_variant
from replaytune.replay import NoiseModel
from replaytune.search import (Context, Reference, SearchConfig, capture_once,
                               evaluate_variant, run_search, sample_sets, validate)


@pytest.fixture(scope="module")
def fir():
    ctx = Context.create("fir")
    return ctx, capture_once(ctx)


@pytest.fixture(scope="module")
def quantize():
    ctx = Context.create("quantize")
    return ctx, capture_once(ctx)


def _ref(cap):
    return Reference(cap.return_value, cap.observable_digest)


def _hot_cycles(ctx, tset):
    img = build_variant(ctx.manifest, tset, ctx.space, ctx.layout)
    return profile(img, ctx.manifest)[ctx.manifest.hot_function].first_inclusive_cycles


def test_noise_free_speedup_equals_profile_ratio(fir):
    ctx, cap = fir
    cfg = SearchConfig("fir", K=1, R=5)
    base = _hot_cycles(ctx, ctx.space.baseline_set())
    for tset in (ctx.space.defaults(), ctx.space.make(loop_unroll=4, scheduling="greedy")):
        ev = evaluate_variant(0, tset, ctx, cap.snapshot, cfg, _ref(cap), baseline_mean=base)
        assert ev.ok
        assert ev.speedup == pytest.approx(base / _hot_cycles(ctx, tset), rel=1e-12)
        assert ev.raw == [float(ev.deterministic_cycles)] * 5


def test_divide_passes_beat_plain_quantize(quantize):
    ctx, cap = quantize
    cfg = SearchConfig("quantize", K=1, R=3)
    base = float(_hot_cycles(ctx, ctx.space.baseline_set()))
    plain = evaluate_variant(0, ctx.space.defaults(), ctx, cap.snapshot, cfg, _ref(cap), base)
    reduced = evaluate_variant(1, ctx.space.make(const_fold=True, strength_reduce=True), ctx,
                               cap.snapshot, cfg, _ref(cap), base)
    helper = evaluate_variant(2, ctx.space.make(fast_helper_substitution=True), ctx,
                              cap.snapshot, cfg, _ref(cap), base)
    assert reduced.speedup > plain.speedup
    assert helper.speedup > 1.0


@pytest.mark.parametrize("exc,status", [
    (HotRegionOverflow("too big"), "overflow"),
    (PassInternalError("boom"), "pass-error"),
    (LinkError("dangling"), "link-error"),
])
def test_build_failures_are_recorded(fir, monkeypatch, exc, status):
    ctx, cap = fir

    def fail(*a, **k):
        raise exc

    monkeypatch.setattr(search, "build_variant", fail)
    ev = evaluate_variant(3, ctx.space.defaults(), ctx, cap.snapshot, SearchConfig("fir"),
                          _ref(cap), 1.0)
    assert ev.status == status and ev.speedup is None and ev.failure


def test_budget_and_incorrect_are_recorded(fir):
    ctx, cap = fir
    ev = evaluate_variant(0, ctx.space.defaults(), ctx, cap.snapshot,
                          SearchConfig("fir", cycle_budget=100), _ref(cap), 1.0)
    assert ev.status == "budget"
    wrong = Reference(cap.return_value + 1, cap.observable_digest)
    ev = evaluate_variant(0, ctx.space.defaults(), ctx, cap.snapshot, SearchConfig("fir"),
                          wrong, 1.0)
    assert ev.status == "incorrect"


def test_failed_variants_do_not_stop_the_search(fir, monkeypatch):
    ctx, cap = fir
    real = search.build_variant

    def flaky(manifest, tset, space, layout):
        if tset["dce"]:
            raise PassInternalError("injected")
        return real(manifest, tset, space, layout)

    monkeypatch.setattr(search, "build_variant", flaky)
    rep = run_search(SearchConfig("fir", K=12, R=3), ctx, cap)
    statuses = [v.status for v in rep.variants]
    assert len(statuses) == 12 and "pass-error" in statuses and "ok" in statuses
    assert rep.best is not None and rep.variants[rep.best["variant"]].ok


def test_search_never_runs_a_variant_in_full(monkeypatch):
    ctx = Context.create("crc")
    seen = []
    for name in ("full_run", "profile", "load"):
        real = getattr(search, name)

        def spy(image, *a, _real=real, **k):
            seen.append(image)
            return _real(image, *a, **k)

        monkeypatch.setattr(search, name, spy)
    rep = run_search(SearchConfig("crc", K=10, R=3), ctx)
    assert seen and all(img is ctx.baseline for img in seen)
    assert rep.validation == []


def test_report_independent_of_worker_count(fir):
    ctx, cap = fir
    cfg = dict(benchmark="fir", K=8, R=5, noise=NoiseModel.gaussian(0.02), master_seed=9)
    one = run_search(SearchConfig(**cfg, worker_count=1), ctx, cap).to_json()
    two = run_search(SearchConfig(**cfg, worker_count=2), ctx, cap).to_json()
    assert one == two
    assert "worker_count" not in one


def test_seed_changes_the_sample():
    from replaytune.optimizer import load_space
    space = load_space()
    a = [s.canonical() for s in sample_sets(space, 1, 10)]
    assert a == [s.canonical() for s in sample_sets(space, 1, 10)]
    assert a != [s.canonical() for s in sample_sets(space, 2, 10)]


def test_report_shape_and_validation(fir):
    ctx, cap = fir
    rep = run_search(SearchConfig("fir", K=6, R=3), ctx, cap)
    doc = json.loads(rep.to_json())
    assert doc["schema"] == search.SCHEMA
    assert list(doc) == sorted(doc)
    assert len(doc["variants"]) == 6
    assert doc["capture"]["overhead_fraction"] < 0.05
    rows = validate(rep, ctx, limit=3)
    assert 0 < len(rows) <= 3
    for r in rows:
        assert r["delta_cycles"] == 0 and r["relative_difference"] == 0.0


@pytest.mark.parametrize("name", ["fir", "crc", "quantize"])
def test_best_transfers_to_full_runs(name):
    """Noise off: replay ranking equals full-run ranking and the pick is the fastest."""
    ctx = Context.create(name)
    rep = run_search(SearchConfig(name, K=20, R=3), ctx)
    total = {}
    for v in rep.variants:
        if v.ok:
            tset = ctx.space.make(**{k.replace("-", "_"): x for k, x in v.transformation.items()})
            img = build_variant(ctx.manifest, tset, ctx.space, ctx.layout)
            total[v.variant] = profile(img, ctx.manifest).total_cycles
    replayed = {v.variant: v.deterministic_cycles for v in rep.variants if v.ok}
    assert sorted(replayed, key=lambda k: (replayed[k], k)) == \
        sorted(total, key=lambda k: (total[k], k))
    assert total[rep.best["variant"]] == min(total.values())


@pytest.mark.parametrize("kw", [dict(K=0), dict(R=2), dict(worker_count=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SearchConfig("fir", **kw)
