"""Analyses over the lifted item list (see :mod:`replaytune.objects`).

Calls are treated conservatively: they read every register and clobber
r0..r15.  RET reads r0 and sp only, which is the benchmark calling
convention (callers keep nothing else live across a call).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..isa import ALU_OPS, COND_BRANCHES, IMM, MASK64, NUM_REGS, SP, Op
from ..objects import Ins, Label

ALL_REGS = frozenset(range(NUM_REGS + 1))
GPRS = frozenset(range(NUM_REGS))
CALL_OPS = frozenset({Op.CALLT, Op.CALLD})
ENDS_BLOCK = frozenset({Op.JMP, Op.RET, Op.HALT}) | COND_BRANCHES
NO_FALLTHROUGH = frozenset({Op.JMP, Op.RET, Op.HALT})
INVERSE = {Op.BEQ: Op.BNE, Op.BNE: Op.BEQ}


class PassInternalError(Exception):
    """A pass hit an inconsistency; the variant is discarded."""


def uses(i: Ins) -> frozenset[int]:
    op = i.op
    if op is Op.LDI or op is Op.JMP:
        return frozenset()
    if op is Op.MOV or op is Op.LD:
        return frozenset((i.rs1,))
    if op in ALU_OPS:
        return frozenset((i.rs1,) if i.rs2 == IMM else (i.rs1, i.rs2))
    if op is Op.ST or op in COND_BRANCHES:
        return frozenset((i.rs1, i.rs2))
    if op is Op.RET:
        return frozenset((0, SP))
    return ALL_REGS  # calls, HALT


def defs(i: Ins) -> frozenset[int]:
    op = i.op
    if op is Op.LDI or op is Op.MOV or op is Op.LD or op in ALU_OPS:
        return frozenset((i.rd,))
    if op in CALL_OPS:
        return GPRS
    return frozenset()


def is_pure(i: Ins) -> bool:
    """Removable when its result is dead: no memory, control or trap effects."""
    if i.op in (Op.LDI, Op.MOV):
        return True
    if i.op is Op.DIV:
        return i.rs2 == IMM and (i.imm & MASK64) != 0
    return i.op in ALU_OPS


def fits_imm(v: int) -> int | None:
    """Signed 32-bit immediate whose 64-bit extension is ``v``, if any."""
    v &= MASK64
    if v < 1 << 31:
        return v
    if v >= (1 << 64) - (1 << 31):
        return v - (1 << 64)
    return None


@dataclass
class Block:
    labels: list[Label] = field(default_factory=list)
    ins: list[Ins] = field(default_factory=list)

    @property
    def last(self) -> Ins | None:
        return self.ins[-1] if self.ins else None

    def falls_through(self) -> bool:
        return self.last is None or self.last.op not in NO_FALLTHROUGH


def split_blocks(items) -> list[Block]:
    """Basic blocks in layout order.  Calls do not end blocks."""
    blocks = [Block()]
    for it in items:
        cur = blocks[-1]
        if isinstance(it, Label):
            if cur.ins:
                blocks.append(Block([it]))
            else:
                cur.labels.append(it)
        else:
            cur.ins.append(it)
            if it.op in ENDS_BLOCK:
                blocks.append(Block())
    if not blocks[-1].ins and not blocks[-1].labels and len(blocks) > 1:
        blocks.pop()
    return blocks


def flatten(blocks) -> list:
    out = []
    for b in blocks:
        out.extend(b.labels)
        out.extend(b.ins)
    return out


def successors(blocks) -> list[list[int]]:
    owner = {id(lab): bi for bi, b in enumerate(blocks) for lab in b.labels}
    succ = []
    for bi, b in enumerate(blocks):
        s = []
        last = b.last
        if last is not None and last.target is not None:
            if id(last.target) not in owner:
                raise PassInternalError(f"branch to unplaced label {last.target.name}")
            s.append(owner[id(last.target)])
        if b.falls_through() and bi + 1 < len(blocks):
            s.append(bi + 1)
        succ.append(s)
    return succ


def liveness(blocks) -> tuple[list[frozenset], list[frozenset]]:
    """(live_in, live_out) per block, iterated to a fixed point."""
    succ = successors(blocks)
    n = len(blocks)
    use_b, def_b = [], []
    for b in blocks:
        u, d = set(), set()
        for i in b.ins:
            u |= uses(i) - d
            d |= defs(i)
        use_b.append(frozenset(u))
        def_b.append(frozenset(d))
    live_in = [frozenset()] * n
    live_out = [frozenset()] * n
    changed = True
    while changed:
        changed = False
        for bi in range(n - 1, -1, -1):
            out = frozenset().union(*(live_in[s] for s in succ[bi])) if succ[bi] else frozenset()
            inn = use_b[bi] | (out - def_b[bi])
            if out != live_out[bi] or inn != live_in[bi]:
                live_out[bi], live_in[bi] = out, inn
                changed = True
    return live_in, live_out


def label_refs(items) -> dict[int, int]:
    """id(label) -> number of branches targeting it."""
    refs: dict[int, int] = {}
    for it in items:
        if isinstance(it, Ins) and it.target is not None:
            refs[id(it.target)] = refs.get(id(it.target), 0) + 1
    return refs


def positions(items) -> dict[int, int]:
    return {id(it): k for k, it in enumerate(items)}


@dataclass(frozen=True)
class Loop:
    head: int   # index of the header label in items
    tail: int   # index of the backward branch closing the loop
    label: Label


def find_loops(items) -> list[Loop]:
    """Layout loops: a label and the last backward branch to it.

    Only loops whose body is entered solely through the header label (and
    fallthrough into it) are returned, and partially overlapping loops are
    dropped.
    """
    pos = positions(items)
    last_back: dict[int, int] = {}
    for k, it in enumerate(items):
        if isinstance(it, Ins) and it.target is not None:
            t = pos.get(id(it.target))
            if t is not None and t < k:
                last_back[id(it.target)] = k
    loops = []
    for lid, tail in last_back.items():
        head = pos[lid]
        lab = items[head]
        ok = True
        inside = {id(x) for x in items[head + 1:tail + 1] if isinstance(x, Label)}
        for k, it in enumerate(items):
            if head <= k <= tail or not isinstance(it, Ins) or it.target is None:
                continue
            if id(it.target) in inside:
                ok = False
                break
        if ok:
            loops.append(Loop(head, tail, lab))
    loops.sort(key=lambda lp: (lp.head, -lp.tail))
    clean = []
    for lp in loops:
        if any(o.head < lp.head <= o.tail < lp.tail or lp.head < o.head <= lp.tail < o.tail
               for o in loops):
            continue
        clean.append(lp)
    return clean


def innermost(loops: list[Loop]) -> list[Loop]:
    return [lp for lp in loops
            if not any(o is not lp and lp.head <= o.head and o.tail <= lp.tail for o in loops)]


def clone_range(items, lo: int, hi: int) -> list:
    """Copy items[lo:hi] with fresh labels; branches to copied labels follow them."""
    fresh: dict[int, Label] = {}
    for it in items[lo:hi]:
        if isinstance(it, Label):
            fresh[id(it)] = Label(it.name + "'")
    out = []
    for it in items[lo:hi]:
        if isinstance(it, Label):
            out.append(fresh[id(it)])
        else:
            c = it.copy()
            if c.target is not None and id(c.target) in fresh:
                c.target = fresh[id(c.target)]
            out.append(c)
    return out


def defined_in(items) -> set[int]:
    d: set[int] = set()
    for it in items:
        if isinstance(it, Ins):
            d |= defs(it)
    return d


def nop() -> Ins:
    return Ins(Op.MOV, rd=0, rs1=0)
