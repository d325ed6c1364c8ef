import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from replaytune import benchmarks
from replaytune.build import baseline_layout, build_variant
from replaytune.isa import Op
from replaytune.optimizer import (FlagSpaceError, PassInternalError, apply, load_space,
                                  sample_set, space_from_dict, space_size)
from replaytune.profiler import profile
from replaytune.replay import observable_digest
from replaytune.search import full_run

SPACE = load_space()
BOOLEANS = [f.name for f in SPACE.flags if f.kind == "boolean"]


def test_space_size():
    assert len(SPACE.flags) == 12
    assert space_size(SPACE) == (4096, 8192)


def test_unknown_helper_rejected():
    doc = json.loads((__import__("importlib").resources.files("replaytune.optimizer")
                      / "default_flags.json").read_text())
    doc["helpers"].append("nope")
    with pytest.raises(FlagSpaceError):
        space_from_dict(doc)


def test_sampler_frequencies():
    rng = np.random.default_rng(11)
    n = 4000
    on = Counter()
    unroll = Counter()
    for _ in range(n):
        s = sample_set(SPACE, rng)
        for f in SPACE.flags:
            if s[f.name] != f.default:
                on[f.name] += 1
        unroll[s["loop-unroll"]] += 1
    tol = 4 * (0.25 / n) ** 0.5
    for name in BOOLEANS:
        assert abs(on[name] / n - 0.5) < tol
    # half the time excluded (default 1), otherwise uniform over four values
    assert abs(unroll[1] / n - 0.625) < tol
    for v in (2, 4, 8):
        assert abs(unroll[v] / n - 0.125) < tol


def test_sampler_is_reproducible():
    a = [sample_set(SPACE, np.random.default_rng(5)).canonical() for _ in range(3)]
    assert len(set(a)) == 1


def test_canonical_is_order_independent():
    s = SPACE.make(loop_unroll=4, dce=True)
    from replaytune.optimizer import TransformationSet
    flipped = TransformationSet(tuple(reversed(s.assignments)))
    assert flipped.canonical() == s.canonical()


@pytest.mark.parametrize("name", benchmarks.names())
def test_all_defaults_is_identity(name):
    m = benchmarks.get(name)
    assert apply(m.hot, SPACE.defaults(), SPACE) is m.hot


def _outcome(m, lay, tset):
    img = build_variant(m, tset, SPACE, lay)
    proc = full_run(img, m)
    return proc.regs[0], observable_digest(proc, m, img)


@pytest.fixture(scope="module")
def references():
    out = {}
    for name in ("fir", "bubblesort", "crc", "quantize"):
        m = benchmarks.get(name)
        lay = baseline_layout(m, SPACE)
        out[name] = (m, lay, _outcome(m, lay, SPACE.defaults()))
    return out


SINGLE = [(f.name, v) for f in SPACE.flags for v in f.values if v != f.default]


@pytest.mark.parametrize("flag,value", SINGLE)
@pytest.mark.parametrize("name", ["fir", "bubblesort", "crc", "quantize"])
def test_each_pass_preserves_behaviour(references, name, flag, value):
    m, lay, ref = references[name]
    tset = SPACE.make(**{flag.replace("-", "_"): value})
    assert _outcome(m, lay, tset) == ref


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(["fir", "crc", "quantize"]))
def test_random_sets_preserve_behaviour(references, seed, name):
    m, lay, ref = references[name]
    tset = sample_set(SPACE, np.random.default_rng(seed))
    assert _outcome(m, lay, tset) == ref


def _hot_cycles(m, lay, tset):
    img = build_variant(m, tset, SPACE, lay)
    return profile(img, m)[m.hot_function].first_inclusive_cycles


def test_strength_reduce_speeds_up_power_of_two_divide(references):
    m, lay, _ = references["quantize"]
    before = _hot_cycles(m, lay, SPACE.defaults())
    after = _hot_cycles(m, lay, SPACE.make(const_fold=True, strength_reduce=True))
    # hand count per sample: div by 16 (12) becomes shr (1), the index mul by 8 (3)
    # becomes shl (1); nothing else in the loop body changes
    from replaytune.benchmarks.quantize import N
    assert before - after == N * ((12 - 1) + (3 - 1))
    ops = [i.op for i in apply(m.hot, SPACE.make(const_fold=True, strength_reduce=True),
                               SPACE).instructions()]
    assert ops.count(Op.DIV) < [i.op for i in m.hot.instructions()].count(Op.DIV)


def test_helper_substitution_calls_div_fast(references):
    m, lay, ref = references["quantize"]
    hot = apply(m.hot, SPACE.make(fast_helper_substitution=True), SPACE)
    assert "div_fast" in hot.referenced_symbols
    assert any(i.op is Op.CALLT for i in hot.instructions())
    assert _hot_cycles(m, lay, SPACE.make(fast_helper_substitution=True)) < \
        _hot_cycles(m, lay, SPACE.defaults())


def test_loop_unroll_grows_code():
    m = benchmarks.get("fir")
    sizes = [apply(m.hot, SPACE.make(loop_unroll=k), SPACE).size for k in (1, 2, 4, 8)]
    assert sizes == sorted(sizes) and sizes[0] < sizes[-1]


def test_pass_bug_reported_as_internal_error(monkeypatch):
    from replaytune.optimizer import passes

    def broken(items, value, ctx):
        raise IndexError("boom")

    monkeypatch.setitem(passes.PASSES, "dce", broken)
    m = benchmarks.get("fir")
    with pytest.raises(PassInternalError, match="dce"):
        apply(m.hot, SPACE.make(dce=True), SPACE)
