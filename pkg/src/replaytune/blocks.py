"""Basic-block translation of guest code into Python closures.

A block is the straight-line run of instructions starting at some pc and
ending at the first control transfer.  Each block becomes one generated
function, which removes the per-instruction dispatch of the reference
interpreter in :mod:`replaytune.vm` while charging exactly the same cycles:
static costs are summed at translation time, and only the entry load-use
stall and taken-branch penalties are decided at run time.

A faulting instruction inside a block returns the state as of the start of
that instruction, so the retry semantics match the interpreter.
"""
from __future__ import annotations

import struct

from .isa import IMM, MASK64, SP, Op
from .memory import FaultError, FaultKind
from .vm import CostModel, Outcome, ProcessState, Status, VMError

EV_NEXT, EV_CALL, EV_RET, EV_HALT, EV_FAULT, EV_DIVZERO, EV_BADCALL = range(7)
MAX_BLOCK = 64
_WORD = struct.Struct("<Q")
_ENDS = frozenset({Op.JMP, Op.BEQ, Op.BNE, Op.BLT, Op.CALLT, Op.CALLD, Op.RET, Op.HALT})

_ALU_EXPR = {
    Op.ADD: "({a} + {b}) & M",
    Op.SUB: "({a} - {b}) & M",
    Op.MUL: "({a} * {b}) & M",
    Op.AND: "{a} & {b}",
    Op.OR: "{a} | {b}",
    Op.XOR: "{a} ^ {b}",
    Op.SHL: "({a} << ({b} & 63)) & M",
    Op.SHR: "{a} >> ({b} & 63)",
}


def _cost(op: int, costs: CostModel) -> int:
    if op == Op.MUL:
        return costs.mul
    if op == Op.DIV:
        return costs.div
    if op in (Op.LD, Op.ST):
        return costs.mem
    if op in (Op.CALLT, Op.CALLD):
        return costs.call
    if op == Op.RET:
        return costs.ret
    return costs.base


def _taken_extra(pc: int, target: int, costs: CostModel) -> int:
    extra = 0
    if target & (costs.branch_align - 1):
        extra += costs.misaligned_target
    if target < pc and pc - target > costs.loop_buffer_bytes:
        extra += costs.loop_buffer_miss
    return extra


def _operand(rs2: int, imm: int, masked: bool) -> str:
    return str(imm & MASK64) if masked else str(imm)


def translate(code: dict, pc: int, call_table, costs: CostModel, stop_pc=None):
    """Generate the block function starting at ``pc`` (None if pc is not code).

    Registers touched by the block live in Python locals for its duration
    and are written back on every exit.  A faulting access happens before
    its destination local is assigned, so writing back all locals on a fault
    exit leaves exactly the state before the faulting instruction.
    """
    instrs = []
    addr = pc
    while addr in code and len(instrs) < MAX_BLOCK:
        if instrs and addr == stop_pc:
            break
        ins = code[addr]
        instrs.append((addr, ins))
        if ins[0] in _ENDS:
            break
        addr += 8
    if not instrs:
        return None

    body = []
    emit = body.append
    touched: set[int] = set()
    written: set[int] = set()

    def r(n: int) -> str:
        touched.add(n)
        return f"x{n}"

    def w(n: int) -> str:
        touched.add(n)
        written.add(n)
        return f"x{n}"

    pre = []        # static cycles before instruction i
    hz_before = []  # hazard mask before instruction i (index 0 is dynamic)
    total = 0
    prev_ld = None
    tail = None     # list of lines producing the exit tuple expression(s)
    for i, (a, (op, rd, rs1, rs2, imm, um)) in enumerate(instrs):
        pre.append(total)
        hz_before.append(1 << prev_ld if (i and prev_ld is not None) else 0)
        stall = costs.load_use_stall if (i and prev_ld is not None and (um >> prev_ld) & 1) else 0
        cost = _cost(op, costs) + stall
        if op == Op.LDI:
            emit(f"{w(rd)} = {imm & MASK64}")
        elif op == Op.MOV:
            emit(f"{w(rd)} = {r(rs1)}")
        elif op == Op.DIV:
            d = str(imm & MASK64) if rs2 == IMM else r(rs2)
            hz = "hz" if i == 0 else str(hz_before[i])
            emit(f"if {d} == 0:")
            emit(f"    WB; return ({a}, {'c + ' + str(total) if i else '0'}, {hz}, {EV_DIVZERO}, None)")
            emit(f"{w(rd)} = {r(rs1)} // {d}")
        elif op in _ALU_EXPR:
            b = _operand(rs2, imm, op in (Op.AND, Op.OR, Op.XOR)) if rs2 == IMM else r(rs2)
            src = r(rs1)
            emit(f"{w(rd)} = " + _ALU_EXPR[op].format(a=src, b=b))
        elif op == Op.LD:
            emit(f"k = {i}")
            emit(f"a = ({r(rs1)} + {imm}) & M")
            emit("o = a & 4095")
            emit("pg = rget(a >> 12) if o <= 4088 else None")
            emit(f"{w(rd)} = load(a) if pg is None else U(pg, o)[0]")
        elif op == Op.ST:
            emit(f"k = {i}")
            emit(f"a = ({r(rs1)} + {imm}) & M")
            emit("o = a & 4095")
            emit("pg = wget(a >> 12) if o <= 4088 else None")
            emit(f"if pg is None: store(a, {r(rs2)})")
            emit(f"else: P(pg, o, {r(rs2)})")
        elif op == Op.JMP:
            t = a + imm
            tail = [f"WB; return ({t}, c + {total + cost + _taken_extra(a, t, costs)}, 0, {EV_NEXT}, None)"]
        elif op in (Op.BEQ, Op.BNE, Op.BLT):
            t = a + imm
            cmp = {Op.BEQ: "==", Op.BNE: "!=", Op.BLT: "<"}[op]
            tail = [f"WB",
                    f"if {r(rs1)} {cmp} {r(rs2)}: return ({t}, c + "
                    f"{total + cost + _taken_extra(a, t, costs)}, 0, {EV_NEXT}, None)",
                    f"return ({a + 8}, c + {total + cost}, 0, {EV_NEXT}, None)"]
        elif op in (Op.CALLT, Op.CALLD):
            if op == Op.CALLT and not 0 <= imm < len(call_table):
                tail = [f"WB; return ({a}, {'c + ' + str(total) if i else '0'}, "
                        f"{'hz' if i == 0 else hz_before[i]}, {EV_BADCALL}, None)"]
                break
            target = call_table[imm] if op == Op.CALLT else imm & MASK64
            emit(f"k = {i}")
            emit(f"a = ({r(SP)} - 8) & M")
            emit("o = a & 4095")
            emit("pg = wget(a >> 12) if o <= 4088 else None")
            emit(f"if pg is None: store(a, {a + 8})")
            emit(f"else: P(pg, o, {a + 8})")
            emit(f"{w(SP)} = a")
            tail = [f"WB; return ({target}, c + {total + cost}, 0, {EV_CALL}, None)"]
        elif op == Op.RET:
            emit(f"k = {i}")
            emit(f"a = {r(SP)}")
            emit("o = a & 4095")
            emit("pg = rget(a >> 12) if o <= 4088 else None")
            emit("t = load(a) if pg is None else U(pg, o)[0]")
            emit(f"{w(SP)} = (a + 8) & M")
            tail = [f"WB; return (t, c + {total + cost}, 0, {EV_RET}, None)"]
        elif op == Op.HALT:
            tail = [f"WB; return ({a}, c + {total + cost}, 0, {EV_HALT}, None)"]
        else:
            raise VMError(f"cannot translate opcode {op}")
        total += cost
        prev_ld = rd if op == Op.LD else None
    if tail is None:
        hz_out = 1 << prev_ld if prev_ld is not None else 0
        tail = [f"WB; return ({instrs[-1][0] + 8}, c + {total}, {hz_out}, {EV_NEXT}, None)"]

    wb = "; ".join(f"R[{n}] = x{n}" for n in sorted(written)) or "pass"
    lines = ["def _blk(R, rget, wget, load, store, hz):",
             f"    c = {costs.load_use_stall} if hz & {instrs[0][1][5]} else 0",
             "    k = 0"]
    if touched:
        regs = sorted(touched)
        lines.append("    " + ", ".join(f"x{n}" for n in regs) + ", = "
                     + ", ".join(f"R[{n}]" for n in regs) + ",")
    lines.append("    try:")
    for ln in body + tail:
        lines.append("        " + ln.replace("WB", wb))
    lines.append("    except FaultError as e:")
    lines.append(f"        {wb}")
    lines.append("        return (ADDR[k], c + PRE[k] if k else 0, HZB[k] if k else hz, "
                 f"{EV_FAULT}, e.fault)")
    src = "\n".join(lines)
    env = {"M": MASK64, "FaultError": FaultError, "U": _WORD.unpack_from, "P": _WORD.pack_into,
           "ADDR": tuple(a for a, _ in instrs), "PRE": tuple(pre), "HZB": tuple(hz_before)}
    exec(compile(src, f"<block {pc:#x}>", "exec"), env)
    fn = env["_blk"]
    fn.source = src
    return fn


class BlockCache:
    """Translated blocks for one code image, per stop address."""

    def __init__(self, code: dict, call_table, costs: CostModel):
        self.code = code
        self.call_table = call_table
        self.costs = costs
        self._by_stop: dict = {}

    def table(self, stop_pc) -> dict:
        """pc -> block function for runs that stop at ``stop_pc``."""
        return self._by_stop.setdefault(stop_pc, {})

    def build(self, pc: int, stop_pc):
        b = translate(self.code, pc, self.call_table, self.costs, stop_pc)
        if b is not None:
            self._by_stop[stop_pc][pc] = b
        return b


def run_blocks(proc: ProcessState, cycle_budget: int | None = None,
               stop_pc: int | None = None) -> Outcome:
    """Block-translated equivalent of :func:`replaytune.vm.run`."""
    if proc.status is not Status.RUNNING:
        raise VMError(f"process is {proc.status.value}")
    cache = proc.meta.get("_blocks")
    if cache is None or cache.costs is not proc.costs or cache.code is not proc.code:
        cache = BlockCache(proc.code, proc.call_table, proc.costs)
        proc.meta["_blocks"] = cache
    R = proc.regs
    space = proc.space
    rget = space.rcache.get
    wget = space.wcache.get
    observer = proc.call_observer
    fault_cost = proc.costs.fault
    cap = cycle_budget if cycle_budget is not None else float("inf")
    pc = proc.pc
    cycles = proc.cycles
    hzm = 1 << proc.hazard if proc.hazard >= 0 else 0
    blocks = cache.table(stop_pc)
    bget = blocks.get
    load, store = space.load_word, space.store_word
    outcome = None
    while True:
        if pc == stop_pc:
            outcome = Outcome.STOPPED
            break
        if cycles > cap:
            outcome = Outcome.BUDGET_EXCEEDED
            break
        blk = bget(pc)
        if blk is None:
            blk = cache.build(pc, stop_pc)
        if blk is None:
            proc.halt(f"instruction fetch from non-code address {pc:#x}")
            break
        npc, c, hzm, ev, fault = blk(R, rget, wget, load, store, hzm)
        cycles += c
        pc = npc
        if ev == EV_NEXT:
            continue
        if ev == EV_CALL or ev == EV_RET:
            if observer is not None:
                observer(Op.RET if ev == EV_RET else Op.CALLT, cycles, npc)
            continue
        if ev == EV_HALT:
            proc.status = Status.HALTED
            hzm = 0
            break
        if ev == EV_FAULT:
            hook = proc.fault_hook
            if hook is not None and fault.kind is FaultKind.PROTECTION:
                proc.pc, proc.cycles = pc, cycles
                proc.hazard = hzm.bit_length() - 1
                if hook(proc, fault):
                    cycles += fault_cost
                    proc.faults_dispatched += 1
                    continue
            proc.halt(f"unhandled {fault.kind.value} fault on {fault.access.value} "
                      f"at {fault.vaddr:#x}")
            break
        if ev == EV_DIVZERO:
            proc.halt(f"division by zero at {pc:#x}")
            break
        if ev == EV_BADCALL:
            proc.halt(f"call-table index out of range at {pc:#x}")
            break
    proc.pc = pc
    proc.cycles = cycles
    proc.hazard = hzm.bit_length() - 1
    return Outcome.HALTED if outcome is None else outcome

