"""Transformation passes over lifted hot functions.

Every pass takes and returns an item list (labels + instructions) and must
preserve the observable contract: the return value in r0 and every store
to memory.  Loads may be removed but never added, so a variant touches a
subset of the baseline's data pages (apart from fresh stack slots that it
writes before reading).
"""
from __future__ import annotations

from ..isa import ALU_OPS, COND_BRANCHES, IMM, INSN_SIZE, MASK64, SP, Op
from ..objects import Ins, Label, layout_offsets
from ..vm import alu_eval
from .helpers import HELPER_REGS
from .ir import (CALL_OPS, ENDS_BLOCK, GPRS, INVERSE, NO_FALLTHROUGH, Block,
                 PassInternalError, defined_in, defs, find_loops, fits_imm,
                 flatten, innermost, is_pure, label_refs, liveness, nop,
                 positions, split_blocks, clone_range, uses)


def _imm_value(i: Ins) -> int:
    return i.imm & MASK64


# -- const-fold ------------------------------------------------------------------

def const_fold(items, _value=True, _ctx=None):
    """Block-local constant propagation and folding, including branches."""
    out = []
    known: dict[int, int] = {}
    for it in items:
        if isinstance(it, Label):
            known = {}
            out.append(it)
            continue
        op = it.op
        if op is Op.LDI:
            _set(known, it.rd, _ldi_value(it))
            out.append(it)
        elif op is Op.MOV:
            v = known.get(it.rs1)
            if v is not None and fits_imm(v) is not None:
                out.append(Ins(Op.LDI, rd=it.rd, imm=fits_imm(v)))
            else:
                out.append(it)
            _set(known, it.rd, v)
        elif op in ALU_OPS:
            a = known.get(it.rs1)
            b = _imm_value(it) if it.rs2 == IMM else known.get(it.rs2)
            if op is Op.DIV and b == 0:
                out.append(it)
                known.pop(it.rd, None)
                continue
            if a is not None and b is not None:
                v = alu_eval(op, a, b)
                if fits_imm(v) is not None:
                    out.append(Ins(Op.LDI, rd=it.rd, imm=fits_imm(v)))
                    known[it.rd] = v
                    continue
            new = it
            if it.rs2 != IMM and b is not None and fits_imm(b) is not None:
                new = it.copy(rs2=IMM, imm=fits_imm(b))
            out.append(new)
            _set(known, it.rd, alu_eval(op, a, b) if a is not None and b is not None else None)
        elif op in COND_BRANCHES:
            a, b = known.get(it.rs1), known.get(it.rs2)
            if a is not None and b is not None:
                taken = {Op.BEQ: a == b, Op.BNE: a != b, Op.BLT: a < b}[op]
                if taken:
                    out.append(Ins(Op.JMP, target=it.target))
            else:
                out.append(it)
        elif op is Op.LD:
            known.pop(it.rd, None)
            out.append(it)
        elif op in CALL_OPS:
            known = {}
            out.append(it)
        else:
            out.append(it)
    return out


def _ldi_value(i: Ins) -> int | None:
    # a relocated LDI holds an address the linker fills in later
    return None if i.sym is not None else i.imm & MASK64


def _set(known: dict, r: int, v) -> None:
    if v is None:
        known.pop(r, None)
    else:
        known[r] = v


# -- strength-reduce ------------------------------------------------------------------

def _log2(c: int) -> int | None:
    return c.bit_length() - 1 if c > 0 and c & (c - 1) == 0 else None


def strength_reduce(items, _value=True, _ctx=None):
    """MUL/DIV by a power of two (immediate or known register) become shifts."""
    out = []
    known: dict[int, int] = {}
    for it in items:
        if isinstance(it, Label):
            known = {}
            out.append(it)
            continue
        new = it
        if it.op in (Op.MUL, Op.DIV):
            b = _imm_value(it) if it.rs2 == IMM else known.get(it.rs2)
            a = known.get(it.rs1)
            src = it.rs1
            if it.op is Op.MUL and _log2(b or 0) is None and a is not None and _log2(a) is not None \
                    and it.rs2 != IMM:
                b, src = a, it.rs2
            k = _log2(b) if b is not None else None
            if it.op is Op.MUL and b == 0:
                new = Ins(Op.LDI, rd=it.rd, imm=0)
            elif k == 0:
                new = Ins(Op.MOV, rd=it.rd, rs1=src)
            elif k is not None:
                new = Ins(Op.SHL if it.op is Op.MUL else Op.SHR, rd=it.rd, rs1=src, rs2=IMM, imm=k)
        out.append(new)
        if new.op is Op.LDI:
            _set(known, new.rd, _ldi_value(new))
        elif new.op is Op.MOV:
            _set(known, new.rd, known.get(new.rs1))
        elif new.op in CALL_OPS:
            known = {}
        else:
            for r in defs(new):
                known.pop(r, None)
    return out


# -- peephole-combine -------------------------------------------------------------------

_ZERO_IDENT = (Op.ADD, Op.SUB, Op.OR, Op.XOR, Op.SHL, Op.SHR)


def _peep_one(i: Ins) -> Ins | None:
    """Simplified replacement for a single instruction; None deletes it."""
    if i.op is Op.MOV and i.rd == i.rs1:
        return None
    if i.rs2 != IMM or i.op not in ALU_OPS:
        return i
    v = _imm_value(i)
    ident = ((i.op in _ZERO_IDENT and (v == 0 or (i.op in (Op.SHL, Op.SHR) and v & 63 == 0)))
             or (i.op in (Op.MUL, Op.DIV) and v == 1)
             or (i.op is Op.AND and v == MASK64))
    if ident:
        return None if i.rd == i.rs1 else Ins(Op.MOV, rd=i.rd, rs1=i.rs1)
    if (i.op is Op.MUL or i.op is Op.AND) and v == 0:
        return Ins(Op.LDI, rd=i.rd, imm=0)
    return i


def _addend(i: Ins) -> int | None:
    if i.rs2 != IMM:
        return None
    if i.op is Op.ADD:
        return i.imm
    if i.op is Op.SUB:
        return -i.imm
    return None


def peephole(items, _value=True, _ctx=None):
    for _ in range(4):
        changed = False
        out = []
        for it in items:
            if isinstance(it, Ins):
                new = _peep_one(it)
                if new is not it:
                    changed = True
                if new is None:
                    continue
                it = new
                prev = out[-1] if out else None
                if isinstance(prev, Ins) and prev.rd == it.rd == it.rs1 and prev.op in (Op.ADD, Op.SUB) \
                        and it.op in (Op.ADD, Op.SUB):
                    a, b = _addend(prev), _addend(it)
                    if a is not None and b is not None and -(1 << 31) <= a + b < (1 << 31):
                        out[-1] = Ins(Op.ADD, rd=it.rd, rs1=prev.rs1, rs2=IMM, imm=a + b)
                        changed = True
                        continue
            out.append(it)
        items = _drop_jump_to_next(out)
        if len(items) != len(out):
            changed = True
        if not changed:
            break
    return items


def _drop_jump_to_next(items):
    out = []
    for k, it in enumerate(items):
        if isinstance(it, Ins) and it.op is Op.JMP:
            j = k + 1
            following = set()
            while j < len(items) and isinstance(items[j], Label):
                following.add(id(items[j]))
                j += 1
            if id(it.target) in following:
                continue
        out.append(it)
    return out


# -- redundant-load-elim -------------------------------------------------------------------

def redundant_load_elim(items, _value=True, _ctx=None):
    """Block-local load reuse and store-to-load forwarding."""
    out = []
    avail: dict[tuple[int, int], int] = {}

    def kill_reg(r: int) -> None:
        for key in [k for k, h in avail.items() if k[0] == r or h == r]:
            del avail[key]

    for it in items:
        if isinstance(it, Label):
            avail = {}
            out.append(it)
            continue
        op = it.op
        if op is Op.LD:
            key = (it.rs1, it.imm)
            h = avail.get(key)
            if h is not None:
                if h != it.rd:
                    out.append(Ins(Op.MOV, rd=it.rd, rs1=h))
            else:
                out.append(it)
            kill_reg(it.rd)
            if it.rd != it.rs1:
                avail[key] = it.rd
        elif op is Op.ST:
            for key in list(avail):
                if key[0] != it.rs1 or abs(key[1] - it.imm) < 8:
                    del avail[key]
            out.append(it)
            avail[(it.rs1, it.imm)] = it.rs2
        elif op in CALL_OPS:
            avail = {}
            out.append(it)
        else:
            out.append(it)
            for r in defs(it):
                kill_reg(r)
    return out


# -- fast-helper-substitution -----------------------------------------------------------------

def _explicit_regs(items) -> set[int]:
    regs = set()
    for it in items:
        if isinstance(it, Ins) and it.op not in CALL_OPS and it.op is not Op.HALT \
                and it.op is not Op.RET:
            regs |= uses(it) | defs(it)
    return regs


def _is(it, op, **fields) -> bool:
    if not isinstance(it, Ins) or it.op is not op:
        return False
    return all(getattr(it, k) == v for k, v in fields.items())


def fast_helper(items, _value=True, ctx=None):
    """Replace software-divide and word-fill loops by helper calls."""
    helpers = set(ctx.get("helpers", ())) if ctx else set()
    if not helpers or _explicit_regs(items) & HELPER_REGS:
        return items
    refs = label_refs(items)
    out = []
    k = 0
    n = len(items)
    while k < n:
        m = _match_divide(items, k, refs) if "div_fast" in helpers else None
        if m is not None:
            ra, rb, rq, exit_lab, end = m
            out += [Ins(Op.MOV, rd=14, rs1=ra), Ins(Op.MOV, rd=15, rs1=rb),
                    Ins(Op.CALLT, sym="div_fast"),
                    Ins(Op.MOV, rd=rq, rs1=14), Ins(Op.MOV, rd=ra, rs1=15)]
            out += _exit_jump(items, end, exit_lab)
            k = end
            continue
        m = _match_fill(items, k, refs) if "memfill_fast" in helpers else None
        if m is not None:
            rp, re, rv, exit_lab, end = m
            out += [Ins(Op.MOV, rd=14, rs1=rp), Ins(Op.MOV, rd=15, rs1=re),
                    Ins(Op.MOV, rd=13, rs1=rv), Ins(Op.CALLT, sym="memfill_fast"),
                    Ins(Op.MOV, rd=rp, rs1=re)]
            out += _exit_jump(items, end, exit_lab)
            k = end
            continue
        out.append(items[k])
        k += 1
    return out


def _exit_jump(items, end: int, exit_lab: Label) -> list:
    j = end
    while j < len(items) and isinstance(items[j], Label):
        if items[j] is exit_lab:
            return []
        j += 1
    return [Ins(Op.JMP, target=exit_lab)]


def _match_divide(items, k, refs):
    # ldi q, 0 / L: blt a, b, exit / sub a, a, b / add q, q, #1 / jmp L
    w = items[k:k + 6]
    if len(w) < 6 or not _is(w[0], Op.LDI, imm=0, sym=None) or not isinstance(w[1], Label):
        return None
    q, lab = w[0].rd, w[1]
    if not _is(w[2], Op.BLT):
        return None
    a, b = w[2].rs1, w[2].rs2
    if not (_is(w[3], Op.SUB, rd=a, rs1=a, rs2=b) and _is(w[4], Op.ADD, rd=q, rs1=q, rs2=IMM, imm=1)
            and _is(w[5], Op.JMP) and w[5].target is lab):
        return None
    if len({a, b, q}) != 3 or SP in (a, b, q) or refs.get(id(lab), 0) != 1:
        return None
    return a, b, q, w[2].target, k + 6


def _match_fill(items, k, refs):
    # L: beq p, e, exit / st v, [p+0] / add p, p, #8 / jmp L
    w = items[k:k + 5]
    if len(w) < 5 or not isinstance(w[0], Label) or not _is(w[1], Op.BEQ):
        return None
    lab = w[0]
    p, e = w[1].rs1, w[1].rs2
    if not (_is(w[2], Op.ST, rs1=p, imm=0) and _is(w[3], Op.ADD, rd=p, rs1=p, rs2=IMM, imm=8)
            and _is(w[4], Op.JMP) and w[4].target is lab):
        return None
    v = w[2].rs2
    if len({p, e, v}) != 3 or SP in (p, e, v) or refs.get(id(lab), 0) != 1:
        return None
    return p, e, v, w[1].target, k + 5


# -- bounds-check-hoist -------------------------------------------------------------------

def bounds_check_hoist(items, _value=True, _ctx=None):
    """Move a loop-invariant conditional exit at the loop head into the preheader."""
    for _ in range(8):
        new = _hoist_one(items)
        if new is None:
            return items
        items = new
    return items


def _hoist_one(items):
    pos = positions(items)
    for lp in find_loops(items):
        g0 = lp.head
        while g0 > 0 and isinstance(items[g0 - 1], Label):
            g0 -= 1
        j = lp.head
        while j <= lp.tail and isinstance(items[j], Label):
            j += 1
        group = items[g0:j]
        if j > lp.tail:
            continue
        chk = items[j]
        if chk.op not in COND_BRANCHES:
            continue
        t = pos.get(id(chk.target))
        if t is None or lp.head <= t <= lp.tail:
            continue
        body = items[j:lp.tail + 1]
        if {chk.rs1, chk.rs2} & defined_in(body):
            continue
        if g0 > 0 and isinstance(items[g0 - 1], Ins) and items[g0 - 1].op in NO_FALLTHROUGH:
            continue
        group_ids = {id(x) for x in group}
        outside = any(isinstance(it, Ins) and it.target is not None and id(it.target) in group_ids
                      and not (lp.head <= k <= lp.tail)
                      for k, it in enumerate(items))
        if outside:
            continue
        return items[:g0] + [chk.copy()] + group + items[j + 1:]
    return None


# -- dce --------------------------------------------------------------------------------

def dce(items, _value=True, _ctx=None):
    """Register-level dead code elimination; never touches memory or control."""
    for _ in range(8):
        blocks = split_blocks(items)
        _, live_out = liveness(blocks)
        removed = False
        for b, out in zip(blocks, live_out):
            live = set(out)
            kept = []
            for i in reversed(b.ins):
                d = defs(i)
                if is_pure(i) and not (d & live):
                    removed = True
                    continue
                live -= d
                live |= uses(i)
                kept.append(i)
            b.ins = kept[::-1]
        items = flatten(blocks)
        if not removed:
            break
    return items


# -- branch-straighten ----------------------------------------------------------------------

def branch_straighten(items, _value=True, _ctx=None):
    items = _thread_jumps(items)
    items = _invert_over_jump(items)
    items = _rotate_loops(items)
    items = _invert_over_jump(items)
    items = _drop_unreachable(items)
    items = _drop_jump_to_next(items)
    return items


def _thread_jumps(items):
    first_after: dict[int, Ins | None] = {}
    for k, it in enumerate(items):
        if isinstance(it, Label):
            j = k
            while j < len(items) and isinstance(items[j], Label):
                j += 1
            first_after[id(it)] = items[j] if j < len(items) else None

    def final(lab: Label) -> Label:
        seen = set()
        while id(lab) not in seen:
            seen.add(id(lab))
            nxt = first_after.get(id(lab))
            if nxt is None or nxt.op is not Op.JMP:
                return lab
            lab = nxt.target
        return lab

    out = []
    for it in items:
        if isinstance(it, Ins) and it.target is not None:
            tgt = final(it.target)
            if tgt is not it.target:
                it = it.copy(target=tgt)
        out.append(it)
    return out


def _invert_over_jump(items):
    out = []
    k = 0
    while k < len(items):
        it = items[k]
        if (isinstance(it, Ins) and it.op in INVERSE and k + 2 < len(items)
                and _is(items[k + 1], Op.JMP) and isinstance(items[k + 2], Label)):
            j = k + 2
            following = set()
            while j < len(items) and isinstance(items[j], Label):
                following.add(id(items[j]))
                j += 1
            if id(it.target) in following:
                out.append(Ins(INVERSE[it.op], rs1=it.rs1, rs2=it.rs2, target=items[k + 1].target))
                k += 2
                continue
        out.append(it)
        k += 1
    return out


def _rotate_loops(items):
    for _ in range(16):
        done = True
        pos = positions(items)
        for lp in sorted(find_loops(items), key=lambda lp: -lp.head):
            tail = items[lp.tail]
            if tail.op is not Op.JMP:
                continue
            j = lp.head
            while isinstance(items[j], Label):
                j += 1
            guard = items[j]
            if j >= lp.tail or guard.op not in INVERSE:
                continue
            t = pos.get(id(guard.target))
            if t is None or lp.head <= t <= lp.tail:
                continue
            body_lab = Label(lp.label.name + "_body")
            new_tail = [Ins(INVERSE[guard.op], rs1=guard.rs1, rs2=guard.rs2, target=body_lab),
                        Ins(Op.JMP, target=guard.target)]
            items = items[:j + 1] + [body_lab] + items[j + 1:lp.tail] + new_tail + items[lp.tail + 1:]
            done = False
            break
        if done:
            break
    return items


def _drop_unreachable(items):
    refs = label_refs(items)
    out = []
    dead = False
    for it in items:
        if isinstance(it, Label):
            if refs.get(id(it), 0):
                dead = False
            if not dead:
                out.append(it)
            continue
        if dead:
            continue
        out.append(it)
        if it.op in NO_FALLTHROUGH:
            dead = True
    return out


# -- loop-unroll -------------------------------------------------------------------------

def loop_unroll(items, factor=1, _ctx=None):
    factor = int(factor)
    if factor <= 1:
        return items
    loops = innermost(find_loops(items))
    for lp in sorted(loops, key=lambda lp: -lp.head):
        back = items[lp.tail]
        if back.op not in (Op.JMP,) and back.op not in COND_BRANCHES:
            continue
        if back.target is not lp.label:
            continue
        after = Label(lp.label.name + "_exit")
        need_after = False
        seq = list(items[lp.head:lp.tail])
        for c in range(1, factor):
            if back.op is Op.JMP:
                pass
            elif back.op in INVERSE:
                seq.append(Ins(INVERSE[back.op], rs1=back.rs1, rs2=back.rs2, target=after))
                need_after = True
            else:
                cont = Label(f"{lp.label.name}_c{c}")
                seq += [back.copy(target=cont), Ins(Op.JMP, target=after), cont]
                need_after = True
            seq += clone_range(items, lp.head, lp.tail)
        seq.append(back)
        if need_after:
            seq.append(after)
        items = items[:lp.head] + seq + items[lp.tail + 1:]
    return items


# -- scheduling ------------------------------------------------------------------------

def _mem(i: Ins) -> int:
    return 2 if i.op is Op.ST else 1 if i.op is Op.LD else 0


def _depends(a: Ins, b: Ins) -> bool:
    da, db = defs(a), defs(b)
    if da & uses(b) or uses(a) & db or da & db:
        return True
    ma, mb = _mem(a), _mem(b)
    return bool(ma and mb and (ma == 2 or mb == 2))


def _schedule(seg: list[Ins]) -> list[Ins]:
    n = len(seg)
    preds = [set() for _ in range(n)]
    for j in range(n):
        for i in range(j):
            if _depends(seg[i], seg[j]):
                preds[j].add(i)
    done: set[int] = set()
    order = []
    last_load = None
    while len(order) < n:
        ready = [j for j in range(n) if j not in done and preds[j] <= done]
        pick = ready[0]
        if last_load is not None:
            for j in ready:
                if last_load not in uses(seg[j]):
                    pick = j
                    break
        done.add(pick)
        order.append(seg[pick])
        last_load = seg[pick].rd if seg[pick].op is Op.LD else None
    return order


def scheduling(items, mode="naive", _ctx=None):
    """Greedy list scheduling inside blocks to avoid load-use stalls."""
    if mode != "greedy":
        return items
    blocks = split_blocks(items)
    for b in blocks:
        body = b.ins
        term = []
        if body and body[-1].op in ENDS_BLOCK:
            body, term = body[:-1], [body[-1]]
        out, seg = [], []
        for i in body:
            if i.op in CALL_OPS:
                out += _schedule(seg) + [i]
                seg = []
            else:
                seg.append(i)
        out += _schedule(seg)
        b.ins = out + term
    return flatten(blocks)


# -- spill-heavy-alloc -----------------------------------------------------------------

SPILL_BASE = 136


def _slot(r: int) -> int:
    return -(SPILL_BASE + 8 * r)


def spill_heavy(items, _value=True, _ctx=None):
    """Keep every register in a stack slot: reload before each use, store after each def."""
    if SP in defined_in(items):
        return items
    regs = sorted(_explicit_regs(items) & GPRS)
    if not regs:
        return items
    out: list = [Ins(Op.ST, rs1=SP, rs2=r, imm=_slot(r)) for r in regs]
    for it in items:
        if isinstance(it, Label):
            out.append(it)
            continue
        if it.op not in CALL_OPS:
            for r in sorted(uses(it) & set(regs)):
                out.append(Ins(Op.LD, rd=r, rs1=SP, imm=_slot(r)))
        out.append(it)
        if it.op not in ENDS_BLOCK:
            for r in sorted(defs(it) & set(regs)):
                out.append(Ins(Op.ST, rs1=SP, rs2=r, imm=_slot(r)))
    return out


# -- code-align-pad ----------------------------------------------------------------------

def code_align_pad(items, _value=True, _ctx=None, align: int = 32):
    """Pad with no-ops so every loop head starts on an ``align``-byte boundary."""
    heads = {id(lp.label) for lp in find_loops(items)}
    out = []
    off = 0
    for it in items:
        if isinstance(it, Label):
            if id(it) in heads and off % align:
                pad = (align - off % align) // INSN_SIZE
                out += [nop() for _ in range(pad)]
                off += pad * INSN_SIZE
            out.append(it)
            continue
        out.append(it)
        off += INSN_SIZE
    return out


PASSES = {
    "const-fold": const_fold,
    "strength-reduce": strength_reduce,
    "peephole-combine": peephole,
    "redundant-load-elim": redundant_load_elim,
    "fast-helper-substitution": fast_helper,
    "bounds-check-hoist": bounds_check_hoist,
    "dce": dce,
    "branch-straighten": branch_straighten,
    "loop-unroll": loop_unroll,
    "scheduling": scheduling,
    "spill-heavy-alloc": spill_heavy,
    "code-align-pad": code_align_pad,
}


def check_items(items) -> None:
    """Every branch target is placed exactly once."""
    placed = [id(it) for it in items if isinstance(it, Label)]
    if len(set(placed)) != len(placed):
        raise PassInternalError("label placed twice")
    ps = set(placed)
    for it in items:
        if isinstance(it, Ins) and it.target is not None and id(it.target) not in ps:
            raise PassInternalError(f"branch to unplaced label {it.target.name}")
    layout_offsets(items)


__all__ = ["PASSES", "check_items", "Block"]
