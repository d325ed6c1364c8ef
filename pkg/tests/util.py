"""Shared helpers and independent oracles for the test suite."""
from __future__ import annotations

from replaytune.image import BenchmarkManifest, DataSymbol, default_layout, link, load
from replaytune.isa import Op
from replaytune.memory import PAGE_SHIFT, PAGE_SIZE, RegionKind
from replaytune.objects import assemble
from replaytune.vm import Outcome, Status, run, step

G, H = RegionKind.GLOBALS, RegionKind.HEAP


def tiny_manifest(main: str, *others, hot: str = "main", data=None, inputs=None,
                  observable: str = "buf", **kw) -> BenchmarkManifest:
    """A one-off program: ``main`` plus named ``(name, text)`` functions."""
    objs = (assemble("main", main),) + tuple(assemble(n, t) for n, t in others)
    data = data or (DataSymbol("buf", G, 0, 64),)
    return BenchmarkManifest("tiny", objs, hot, tuple(data), inputs or {}, observable, **kw)


def tiny_proc(main: str, *others, **kw):
    m = tiny_manifest(main, *others, **kw)
    img = link(m.objects, m, default_layout(m))
    return load(img, m), img, m


# Cost of each opcode ignoring pipeline texture (stalls, branch penalties).
BASE_COST = {Op.MUL: 3, Op.DIV: 12, Op.LD: 3, Op.ST: 3, Op.CALLT: 2, Op.CALLD: 2, Op.RET: 2}


def trace_cycles(proc, max_steps: int = 1_000_000) -> int:
    """Sum per-instruction base costs over a single-stepped trace.

    Valid only for programs without loads feeding the next instruction and
    without taken branches, where no texture cost applies.
    """
    total = 0
    for _ in range(max_steps):
        op = Op(proc.code[proc.pc][0])
        total += BASE_COST.get(op, 1)
        if step(proc) is Outcome.HALTED or proc.status is Status.HALTED:
            return total
    raise AssertionError("program did not halt")


def accessed_pages(proc, stop_pc: int, max_steps: int = 10_000_000) -> set[int]:
    """Data pages touched until ``pc == stop_pc``, from ISA semantics alone.

    Every instruction is inspected before it executes and the addresses it
    will touch are computed from the current registers.
    """
    pages: set[int] = set()
    regs = proc.regs
    for _ in range(max_steps):
        if proc.pc == stop_pc:
            return pages
        op, rd, rs1, rs2, imm, _ = proc.code[proc.pc]
        addr = None
        if op in (Op.LD, Op.ST):
            addr = (regs[rs1] + imm) & ((1 << 64) - 1)
        elif op in (Op.CALLT, Op.CALLD):
            addr = regs[16] - 8
        elif op == Op.RET:
            addr = regs[16]
        if addr is not None:
            pages.add(addr >> PAGE_SHIFT)
            pages.add((addr + 7) >> PAGE_SHIFT)
        out = step(proc)
        assert out in (Outcome.CONTINUED, Outcome.HALTED), out
    raise AssertionError("stop_pc never reached")


def capturable(pages: set[int], proc_space, entry_sp: int) -> set[int]:
    """Restrict a page set to what capture protects (data, stack at/above sp)."""
    keep = set()
    for vpn in pages:
        r = proc_space.region_of(vpn << PAGE_SHIFT)
        if r is None or r.kind not in (G, H, RegionKind.STACK):
            continue
        if r.kind is RegionKind.STACK and vpn < entry_sp >> PAGE_SHIFT:
            continue
        keep.add(vpn)
    return keep


def entry_state(image, manifest):
    """Process paused at the hot entry plus an eager copy of its data pages."""
    proc = load(image, manifest)
    run(proc, manifest.cycle_budget, stop_pc=image.hot_entry)
    assert proc.pc == image.hot_entry
    pre = {vpn: proc.space.host_read(vpn << PAGE_SHIFT, PAGE_SIZE)
           for vpn in proc.space.snapshot_bytes()}
    return proc, pre


def mad_oracle(xs, threshold=3.0):
    """Keep-mask of the MAD rule computed with the statistics module."""
    import statistics
    med = statistics.median(xs)
    mad = statistics.median(abs(x - med) for x in xs)
    if mad == 0:
        return [x == med for x in xs]
    return [abs(x - med) <= threshold * 1.4826 * mad for x in xs]


def t_p_oracle(t, df):
    """Two-sided Student-t p-value by numerically integrating the density."""
    import mpmath
    mpmath.mp.dps = 30
    df = mpmath.mpf(df)
    c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
    tail = mpmath.quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2), [abs(t), mpmath.inf])
    return float(2 * tail)


def welch_oracle(a, b):
    import math
    import statistics
    ma, mb = statistics.mean(a), statistics.mean(b)
    va, vb = statistics.variance(a) / len(a), statistics.variance(b) / len(b)
    t = (ma - mb) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return t, df
