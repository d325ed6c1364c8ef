"""Deterministic paged micro-VM: process state, interpreter loop, fork."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .isa import IMM, MASK64, NUM_REGS, SP, Instruction, Op, use_mask
from .memory import (PAGE_MASK, PAGE_SHIFT, AddressSpace, Fault, FaultError,
                     FaultKind)


@dataclass(frozen=True)
class CostModel:
    """Cycle costs.  The fork/VMA/fault constants are calibration knobs."""

    base: int = 1
    mul: int = 3
    div: int = 12
    mem: int = 3
    call: int = 2
    ret: int = 2
    fault: int = 50
    fork_base: int = 5000
    fork_per_page: int = 2
    vma_per_region: int = 10
    # pipeline texture
    load_use_stall: int = 1
    branch_align: int = 32
    misaligned_target: int = 1
    loop_buffer_bytes: int = 512
    loop_buffer_miss: int = 6
    # replay process construction
    replay_setup_base: int = 200
    replay_setup_per_page: int = 2

    def fork_cost(self, mapped_pages: int) -> int:
        return self.fork_base + self.fork_per_page * mapped_pages

    def vma_cost(self, regions: int) -> int:
        return self.vma_per_region * regions

    def replay_setup(self, pages: int) -> int:
        return self.replay_setup_base + self.replay_setup_per_page * pages


DEFAULT_COSTS = CostModel()


class Status(Enum):
    RUNNING = "running"
    SUSPENDED = "suspended"
    HALTED = "halted"


class Outcome(Enum):
    CONTINUED = "continued"
    HALTED = "halted"
    BUDGET_EXCEEDED = "budget_exceeded"
    STOPPED = "stopped"


class VMError(Exception):
    pass


class BudgetExceeded(VMError):
    pass


@dataclass(frozen=True)
class RegisterFile:
    r: tuple[int, ...]
    pc: int
    sp: int
    cycles: int = 0

    def __post_init__(self):
        if len(self.r) != NUM_REGS:
            raise ValueError("register file holds 16 general registers")


# Decoded form used by the interpreter: (op, rd, rs1, rs2, imm, use_mask).
Decoded = tuple


def predecode(ins: Instruction) -> Decoded:
    return (int(ins.op), ins.rd, ins.rs1, ins.rs2, ins.imm, use_mask(ins))


@dataclass(eq=False)
class ProcessState:
    space: AddressSpace
    code: dict[int, Decoded]
    call_table: tuple[int, ...] = ()
    regs: list[int] = field(default_factory=lambda: [0] * (NUM_REGS + 1))
    pc: int = 0
    cycles: int = 0
    status: Status = Status.RUNNING
    fault_hook: Callable[["ProcessState", Fault], bool] | None = None
    call_observer: Callable[[int, int, int], None] | None = None
    costs: CostModel = DEFAULT_COSTS
    error: str | None = None
    meta: dict = field(default_factory=dict)
    # register written by the previous instruction if it was a load
    hazard: int = -1
    faults_dispatched: int = 0

    @property
    def sp(self) -> int:
        return self.regs[SP]

    @sp.setter
    def sp(self, value: int) -> None:
        self.regs[SP] = value & MASK64

    @property
    def registers(self) -> RegisterFile:
        return RegisterFile(tuple(self.regs[:NUM_REGS]), self.pc, self.regs[SP], self.cycles)

    def set_registers(self, rf: RegisterFile, keep_cycles: bool = False) -> None:
        self.regs[:NUM_REGS] = list(rf.r)
        self.regs[SP] = rf.sp
        self.pc = rf.pc
        if not keep_cycles:
            self.cycles = rf.cycles
        self.hazard = -1

    def halt(self, error: str | None = None) -> None:
        self.status = Status.HALTED
        self.error = error


def _halt_error(proc: ProcessState, msg: str) -> None:
    proc.status = Status.HALTED
    proc.error = msg


def _execute(proc: ProcessState, limit: int, budget: int | None, stop_pc: int | None,
             dispatch: bool):
    """Interpreter core shared by step() and run().

    Returns an Outcome, or a Fault when ``dispatch`` is false and an access
    faults.  A faulting instruction leaves no architectural side effects so it
    can be retried.
    """
    if proc.status is not Status.RUNNING:
        raise VMError(f"process is {proc.status.value}")
    costs = proc.costs
    c_mul, c_div, c_mem = costs.mul, costs.div, costs.mem
    c_call, c_ret, c_fault = costs.call, costs.ret, costs.fault
    c_stall = costs.load_use_stall
    align_mask = costs.branch_align - 1
    c_mis = costs.misaligned_target
    lb_bytes, lb_miss = costs.loop_buffer_bytes, costs.loop_buffer_miss
    regs = proc.regs
    code = proc.code
    space = proc.space
    rget = space.rcache.get
    wget = space.wcache.get
    table = proc.call_table
    observer = proc.call_observer
    pc = proc.pc
    cycles = proc.cycles
    hz = proc.hazard
    M = MASK64
    limit_budget = budget if budget is not None else -1
    n = 0
    outcome = Outcome.CONTINUED
    fault = None

    while True:
        if pc == stop_pc:
            outcome = Outcome.STOPPED
            break
        if limit_budget >= 0 and cycles > limit_budget:
            outcome = Outcome.BUDGET_EXCEEDED
            break
        if n == limit:
            break
        ins = code.get(pc)
        if ins is None:
            proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
            _halt_error(proc, f"instruction fetch from non-code address {pc:#x}")
            return Outcome.HALTED
        op, rd, rs1, rs2, imm, um = ins
        cyc = 1
        if hz >= 0 and (um >> hz) & 1:
            cyc += c_stall
        nhz = -1
        npc = pc + 8
        try:
            if op == 12:  # LD
                a = (regs[rs1] + imm) & M
                o = a & PAGE_MASK
                pg = rget(a >> PAGE_SHIFT) if o <= 4088 else None
                if pg is None:
                    v = space.load_word(a)
                else:
                    v = int.from_bytes(pg[o:o + 8], "little")
                regs[rd] = v
                nhz = rd
                cyc += c_mem - 1
            elif op == 3:  # ADD
                regs[rd] = (regs[rs1] + (imm if rs2 == IMM else regs[rs2])) & M
            elif op == 16:  # BNE
                if regs[rs1] != regs[rs2]:
                    npc = pc + imm
                    if npc & align_mask:
                        cyc += c_mis
                    if imm < 0 and -imm > lb_bytes:
                        cyc += lb_miss
            elif op == 15:  # BEQ
                if regs[rs1] == regs[rs2]:
                    npc = pc + imm
                    if npc & align_mask:
                        cyc += c_mis
                    if imm < 0 and -imm > lb_bytes:
                        cyc += lb_miss
            elif op == 17:  # BLT (unsigned)
                if regs[rs1] < regs[rs2]:
                    npc = pc + imm
                    if npc & align_mask:
                        cyc += c_mis
                    if imm < 0 and -imm > lb_bytes:
                        cyc += lb_miss
            elif op == 13:  # ST
                a = (regs[rs1] + imm) & M
                o = a & PAGE_MASK
                pg = wget(a >> PAGE_SHIFT) if o <= 4088 else None
                if pg is None:
                    space.store_word(a, regs[rs2])
                else:
                    pg[o:o + 8] = regs[rs2].to_bytes(8, "little")
                cyc += c_mem - 1
            elif op == 14:  # JMP
                npc = pc + imm
                if npc & align_mask:
                    cyc += c_mis
                if imm < 0 and -imm > lb_bytes:
                    cyc += lb_miss
            elif op == 1:  # LDI
                regs[rd] = imm & M
            elif op == 2:  # MOV
                regs[rd] = regs[rs1]
            elif op == 4:  # SUB
                regs[rd] = (regs[rs1] - (imm if rs2 == IMM else regs[rs2])) & M
            elif op == 5:  # MUL
                regs[rd] = (regs[rs1] * (imm if rs2 == IMM else regs[rs2])) & M
                cyc += c_mul - 1
            elif op == 6:  # DIV (unsigned)
                d = (imm & M) if rs2 == IMM else regs[rs2]
                if d == 0:
                    proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
                    _halt_error(proc, f"division by zero at {pc:#x}")
                    return Outcome.HALTED
                regs[rd] = regs[rs1] // d
                cyc += c_div - 1
            elif op == 7:  # AND
                regs[rd] = regs[rs1] & ((imm & M) if rs2 == IMM else regs[rs2])
            elif op == 8:  # OR
                regs[rd] = regs[rs1] | ((imm & M) if rs2 == IMM else regs[rs2])
            elif op == 9:  # XOR
                regs[rd] = regs[rs1] ^ ((imm & M) if rs2 == IMM else regs[rs2])
            elif op == 10:  # SHL
                regs[rd] = (regs[rs1] << ((imm if rs2 == IMM else regs[rs2]) & 63)) & M
            elif op == 11:  # SHR
                regs[rd] = regs[rs1] >> ((imm if rs2 == IMM else regs[rs2]) & 63)
            elif op == 18 or op == 19:  # CALLT / CALLD
                if op == 18:
                    if not 0 <= imm < len(table):
                        proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
                        _halt_error(proc, f"call-table index {imm} out of range at {pc:#x}")
                        return Outcome.HALTED
                    target = table[imm]
                else:
                    target = imm & M
                nsp = (regs[SP] - 8) & M
                o = nsp & PAGE_MASK
                pg = wget(nsp >> PAGE_SHIFT) if o <= 4088 else None
                if pg is None:
                    space.store_word(nsp, pc + 8)
                else:
                    pg[o:o + 8] = (pc + 8).to_bytes(8, "little")
                regs[SP] = nsp
                npc = target
                cyc += c_call - 1
                if observer is not None:
                    cycles += cyc
                    observer(op, cycles, npc)
                    cyc = 0
            elif op == 20:  # RET
                a = regs[SP]
                o = a & PAGE_MASK
                pg = rget(a >> PAGE_SHIFT) if o <= 4088 else None
                if pg is None:
                    npc = space.load_word(a)
                else:
                    npc = int.from_bytes(pg[o:o + 8], "little")
                regs[SP] = (a + 8) & M
                cyc += c_ret - 1
                if observer is not None:
                    cycles += cyc
                    observer(op, cycles, npc)
                    cyc = 0
            elif op == 21:  # HALT
                cycles += cyc
                proc.pc, proc.cycles, proc.hazard = pc, cycles, -1
                proc.status = Status.HALTED
                return Outcome.HALTED
            else:
                proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
                _halt_error(proc, f"illegal opcode {op} at {pc:#x}")
                return Outcome.HALTED
        except FaultError as e:
            f = e.fault
            hook = proc.fault_hook
            if not dispatch:
                fault = f
                break
            if hook is not None and f.kind is FaultKind.PROTECTION:
                proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
                if hook(proc, f):
                    cycles += c_fault
                    proc.faults_dispatched += 1
                    # the hook may have changed page protections
                    rget = space.rcache.get
                    wget = space.wcache.get
                    continue
            proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
            _halt_error(proc, f"unhandled {f.kind.value} fault on {f.access.value} at {f.vaddr:#x}")
            return Outcome.HALTED
        cycles += cyc
        hz = nhz
        pc = npc
        n += 1

    proc.pc, proc.cycles, proc.hazard = pc, cycles, hz
    if fault is not None:
        return fault
    return outcome


def step(proc: ProcessState):
    """Execute one instruction.

    Returns ``Outcome.CONTINUED``, ``Outcome.HALTED`` or the ``Fault`` raised
    by the instruction (in which case nothing changed and the instruction can
    be retried once the fault is resolved).
    """
    out = _execute(proc, 1, None, None, dispatch=False)
    if out is Outcome.CONTINUED and proc.status is Status.HALTED:
        return Outcome.HALTED
    return out


def run(proc: ProcessState, cycle_budget: int | None = None, stop_pc: int | None = None,
        engine: str = "blocks") -> Outcome:
    """Run until HALT, the budget is exceeded, or ``pc == stop_pc``.

    Protection faults are dispatched to ``proc.fault_hook``; a hook returning
    True has resolved the fault and the instruction is retried.

    ``engine="interp"`` selects the instruction-at-a-time reference loop; the
    default translates basic blocks and is several times faster.  Both charge
    identical cycles.  The budget is checked per instruction by the
    interpreter and per block by the translator.
    """
    if engine == "interp":
        return _execute(proc, -1, cycle_budget, stop_pc, dispatch=True)
    if engine != "blocks":
        raise ValueError(f"unknown engine {engine!r}")
    from .blocks import run_blocks
    return run_blocks(proc, cycle_budget, stop_pc)


def run_to_halt(proc: ProcessState, cycle_budget: int) -> ProcessState:
    out = run(proc, cycle_budget)
    if out is Outcome.BUDGET_EXCEEDED:
        raise BudgetExceeded(f"exceeded {cycle_budget} cycles at pc={proc.pc:#x}")
    return proc


def vm_fork(parent: ProcessState) -> ProcessState:
    """COW fork.  The child is Suspended; the fork cost is charged to the parent."""
    if parent.status is Status.HALTED:
        raise VMError("cannot fork a halted process")
    cost = parent.costs.fork_cost(parent.space.mapped_pages)
    child_space = parent.space.fork()
    child = ProcessState(
        space=child_space,
        code=parent.code,
        call_table=parent.call_table,
        regs=list(parent.regs),
        pc=parent.pc,
        cycles=parent.cycles,
        status=Status.SUSPENDED,
        costs=parent.costs,
        meta=dict(parent.meta),
        hazard=parent.hazard,
    )
    parent.cycles += cost
    return child


def resume(proc: ProcessState) -> None:
    if proc.status is not Status.SUSPENDED:
        raise VMError(f"cannot resume a {proc.status.value} process")
    proc.status = Status.RUNNING


def decode_code(base: int, blob: bytes) -> dict[int, Decoded]:
    """Predecode every valid instruction word in ``blob`` mapped at ``base``.

    Words that do not decode (padding, data) are left out, so fetching them
    halts the process.
    """
    from .isa import DecodeError, decode
    out = {}
    for off in range(0, len(blob) - len(blob) % 8, 8):
        word = blob[off:off + 8]
        if word == b"\x00" * 8:
            continue
        try:
            out[base + off] = predecode(decode(word))
        except DecodeError:
            continue
    return out


def alu_eval(op: Op, a: int, b: int) -> int | None:
    """Reference ALU semantics (None for division by zero)."""
    if op is Op.ADD:
        return (a + b) & MASK64
    if op is Op.SUB:
        return (a - b) & MASK64
    if op is Op.MUL:
        return (a * b) & MASK64
    if op is Op.DIV:
        return None if b == 0 else a // b
    if op is Op.AND:
        return a & b
    if op is Op.OR:
        return a | b
    if op is Op.XOR:
        return a ^ b
    if op is Op.SHL:
        return (a << (b & 63)) & MASK64
    if op is Op.SHR:
        return a >> (b & 63)
    raise ValueError(op)

