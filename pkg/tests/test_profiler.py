import pytest
from hypothesis import given, settings, strategies as st

from replaytune import benchmarks
from replaytune.image import default_layout, link, load
from replaytune.profiler import profile

from util import tiny_manifest, trace_cycles


def _img(m):
    return link(m.objects, m, default_layout(m))


def test_single_function_gets_every_cycle():
    m = tiny_manifest("ldi r1, 3\nadd r1, r1, r1\nhalt")
    prof = profile(_img(m), m)
    assert prof.ranked() == ["main"]
    assert prof["main"].exclusive_cycles == prof.total_cycles == 3


def test_straight_line_callee_matches_trace():
    body = "\n".join("add r1, r1, #1" for _ in range(1000)) + "\nret"
    m = tiny_manifest("callt work\nhalt", ("work", body), hot="work")
    img = _img(m)
    expected = trace_cycles(load(img, m))
    prof = profile(img, m)
    assert prof.total_cycles == expected
    # callee: 1000 adds plus its return; caller: the call and the halt
    assert prof["work"].exclusive_cycles == 1000 + 2
    assert prof["work"].first_inclusive_cycles == 1002
    assert prof["main"].exclusive_cycles == 2 + 1
    assert prof.ranked()[0] == "work"


def test_invocation_counts_and_first_inclusive():
    m = tiny_manifest("callt a\ncallt a\ncallt a\nhalt",
                      ("a", "callt b\nret"), ("b", "add r1, r1, #1\nret"), hot="a")
    prof = profile(_img(m), m)
    assert prof["a"].invocation_count == 3
    assert prof["b"].invocation_count == 3
    # a's first invocation: call b (2) + b's add and ret (3) + ret (2)
    assert prof["a"].first_inclusive_cycles == 7


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=5))
def test_exclusive_cycles_sum_to_total(sizes):
    funcs = [(f"f{i}", "\n".join("add r1, r1, #1" for _ in range(n)) + "\nret")
             for i, n in enumerate(sizes)]
    main = "\n".join(f"callt f{i}" for i in range(len(sizes))) + "\nhalt"
    m = tiny_manifest(main, *funcs, hot="f0")
    prof = profile(_img(m), m)
    assert sum(f.exclusive_cycles for f in prof.functions) == prof.total_cycles
    for i, n in enumerate(sizes):
        assert prof[f"f{i}"].exclusive_cycles == n + 2


@pytest.mark.parametrize("name", benchmarks.names())
def test_profile_agrees_with_plain_run(name):
    m = benchmarks.get(name)
    img = _img(m)
    from replaytune.vm import run
    proc = load(img, m)
    run(proc, m.cycle_budget)
    prof = profile(img, m)
    assert prof.total_cycles == proc.cycles
    assert prof.return_value == proc.regs[0]
