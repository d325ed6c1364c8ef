import pytest
from hypothesis import given, settings, strategies as st

from replaytune.memory import PAGE_SIZE, Fault, FaultKind, Protection
from replaytune.vm import (CostModel, Outcome, Status, VMError, resume, run, step, vm_fork)

from util import tiny_proc, trace_cycles


def test_ldi_then_step():
    proc, _, _ = tiny_proc("ldi r1, 5\nhalt")
    assert step(proc) is Outcome.CONTINUED
    assert proc.regs[1] == 5 and proc.cycles == 1


def test_halt_only_program():
    proc, _, _ = tiny_proc("halt")
    assert run(proc) is Outcome.HALTED
    assert proc.cycles == 1 and proc.status is Status.HALTED


def test_adds_and_muls_match_trace_oracle():
    body = "\n".join(["add r1, r1, #1"] * 10 + ["mul r2, r1, #3"] * 2) + "\nhalt"
    proc, img, m = tiny_proc(body)
    run(proc)
    assert proc.cycles == 10 * 1 + 2 * 3 + 1
    from replaytune.image import load
    assert trace_cycles(load(img, m)) == proc.cycles


def test_infinite_loop_exceeds_budget():
    proc, _, _ = tiny_proc("top:\njmp top")
    assert run(proc, 10**6) is Outcome.BUDGET_EXCEEDED
    assert proc.status is Status.RUNNING


def test_divide_by_zero_halts_with_error():
    proc, _, _ = tiny_proc("ldi r1, 0\ndiv r2, r2, r1\nhalt")
    assert run(proc) is Outcome.HALTED
    assert "division by zero" in proc.error


def test_store_to_revoked_page_faults_without_effect():
    proc, img, _ = tiny_proc("ldi r1, =buf\nldi r2, 9\nst r2, [r1+0]\nhalt")
    buf = img.symbol_map["buf"]
    proc.space.host_write(buf, (3).to_bytes(8, "little"))
    proc.space.set_protection(buf, PAGE_SIZE, Protection.NONE)
    step(proc), step(proc)
    before = (list(proc.regs), proc.pc, proc.cycles)
    out = step(proc)
    assert isinstance(out, Fault) and out.kind is FaultKind.PROTECTION
    assert (list(proc.regs), proc.pc, proc.cycles) == before
    assert proc.space.host_read(buf, 8) == (3).to_bytes(8, "little")
    proc.space.set_protection(buf, PAGE_SIZE, Protection.READ_WRITE)
    assert step(proc) is Outcome.CONTINUED
    assert proc.space.host_read(buf, 8) == (9).to_bytes(8, "little")


def test_unmapped_fault_without_hook_halts():
    proc, _, _ = tiny_proc("ldi r1, 0x7000\nld r2, [r1+0]\nhalt")
    assert run(proc) is Outcome.HALTED
    assert "unmapped" in proc.error


LOOP = """
    ldi r1, =buf
    ldi r2, 0
    ldi r3, 0
top:
    ld r4, [r1+0]
    add r4, r4, r2
    st r4, [r1+0]
    mul r5, r2, #7
    add r3, r3, r5
    add r2, r2, #1
    ldi r6, 50
    blt r2, r6, top
    mov r0, r3
    halt
"""


def test_run_is_deterministic():
    a, _, _ = tiny_proc(LOOP)
    b, _, _ = tiny_proc(LOOP)
    run(a), run(b)
    assert (a.regs, a.cycles) == (b.regs, b.cycles)
    assert a.space.snapshot_bytes() == b.space.snapshot_bytes()


def test_engines_agree_on_loop():
    a, _, _ = tiny_proc(LOOP)
    b, _, _ = tiny_proc(LOOP)
    run(a, engine="interp"), run(b, engine="blocks")
    assert (a.regs, a.cycles, a.pc) == (b.regs, b.cycles, b.pc)


def test_unknown_engine_rejected():
    proc, _, _ = tiny_proc("halt")
    with pytest.raises(ValueError):
        run(proc, engine="jit")


ALU = ["add", "sub", "mul", "and", "or", "xor", "shl", "shr"]


@st.composite
def programs(draw):
    lines = []
    for _ in range(draw(st.integers(1, 30))):
        kind = draw(st.sampled_from(["alu", "imm", "ld", "st", "ldi"]))
        rd, rs = draw(st.integers(0, 7)), draw(st.integers(0, 7))
        if kind == "alu":
            lines.append(f"{draw(st.sampled_from(ALU))} r{rd}, r{rs}, r{draw(st.integers(0, 7))}")
        elif kind == "imm":
            lines.append(f"{draw(st.sampled_from(ALU))} r{rd}, r{rs}, #{draw(st.integers(-50, 50))}")
        elif kind == "ldi":
            lines.append(f"ldi r{rd}, {draw(st.integers(-1000, 1000))}")
        else:
            slot = 8 * draw(st.integers(0, 7))
            lines.append(f"{'ld' if kind == 'ld' else 'st'} r{rd}, [r8+{slot}]")
    return "ldi r8, =buf\n" + "\n".join(lines) + "\nhalt"


@settings(max_examples=80, deadline=None)
@given(programs(), st.booleans())
def test_engines_agree_on_random_programs(text, revoke):
    a, img, _ = tiny_proc(text)
    b, _, _ = tiny_proc(text)
    if revoke:
        buf = img.symbol_map["buf"]
        hook_calls = []

        def hook(p, f):
            hook_calls.append(f.vpn)
            p.space.set_page_protection(f.vpn, Protection.READ_WRITE)
            return True
        for p in (a, b):
            p.space.set_protection(buf, PAGE_SIZE, Protection.NONE)
            p.fault_hook = hook
    run(a, engine="interp"), run(b, engine="blocks")
    assert (a.regs, a.cycles, a.error) == (b.regs, b.cycles, b.error)
    assert a.faults_dispatched == b.faults_dispatched


@settings(max_examples=40, deadline=None)
@given(programs())
def test_fault_transparency(text):
    plain, img, _ = tiny_proc(text)
    run(plain)
    prot, _, _ = tiny_proc(text)
    for r in prot.space.regions:
        if r.kind.value in ("globals", "heap", "stack"):
            prot.space.set_protection(r.start, r.length, Protection.NONE)

    def hook(p, f):
        p.space.set_page_protection(f.vpn, Protection.READ_WRITE)
        return True
    prot.fault_hook = hook
    run(prot)
    assert prot.regs == plain.regs
    assert prot.space.snapshot_bytes() == plain.space.snapshot_bytes()
    assert prot.cycles - plain.cycles == prot.faults_dispatched * CostModel().fault


def test_load_use_stall_charged():
    proc, _, _ = tiny_proc("ldi r1, =buf\nld r2, [r1+0]\nadd r3, r2, #1\nhalt")
    run(proc)
    assert proc.cycles == 1 + 3 + (1 + 1) + 1


def test_protect_three_pages_touch_two():
    text = """
        ldi r1, =a
        ld r2, [r1+0]
        ldi r1, =c
        st r2, [r1+0]
        halt
    """
    from replaytune.image import DataSymbol
    from util import G
    data = (DataSymbol("buf", G, 0, 8), DataSymbol("a", G, 0x1000, 8),
            DataSymbol("b", G, 0x2000, 8), DataSymbol("c", G, 0x3000, 8))
    proc, img, _ = tiny_proc(text, data=data, globals_size=4 * PAGE_SIZE)
    syms = img.symbol_map
    for s in "abc":
        proc.space.set_protection(syms[s], PAGE_SIZE, Protection.NONE)
    faults = []

    def hook(p, f):
        faults.append(f.vpn)
        p.space.set_page_protection(f.vpn, Protection.READ_WRITE)
        return True
    proc.fault_hook = hook
    run(proc)
    assert sorted(faults) == sorted({syms["a"] >> 12, syms["c"] >> 12})


def test_fork_child_suspended_and_parent_charged():
    proc, _, _ = tiny_proc("halt")
    before = proc.cycles
    child = vm_fork(proc)
    assert child.status is Status.SUSPENDED
    assert proc.cycles - before == proc.costs.fork_cost(proc.space.mapped_pages)
    with pytest.raises(VMError):
        run(child)
    resume(child)
    assert run(child) is Outcome.HALTED
    proc.space.check_refcounts(child.space)


def test_halted_process_cannot_step():
    proc, _, _ = tiny_proc("halt")
    run(proc)
    with pytest.raises(VMError):
        step(proc)


def test_branch_penalties():
    # taken forward jump to an unaligned target costs one extra cycle
    proc, _, _ = tiny_proc("jmp t\nadd r1, r1, #1\nt:\nhalt")
    run(proc)
    assert proc.cycles == (1 + 1) + 1
