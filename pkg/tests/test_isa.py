import pytest
from hypothesis import given, strategies as st

from replaytune.isa import (ALU_OPS, COND_BRANCHES, IMM, SP, DecodeError, Instruction, Op,
                            decode, defs, encode, uses)

regs = st.integers(0, SP)
imm32 = st.integers(-(1 << 31), (1 << 31) - 1)


@st.composite
def instructions(draw):
    op = draw(st.sampled_from(list(Op)))
    if op in ALU_OPS:
        if draw(st.booleans()):
            return Instruction(op, draw(regs), draw(regs), IMM, draw(imm32))
        return Instruction(op, draw(regs), draw(regs), draw(regs))
    if op in COND_BRANCHES:
        return Instruction(op, 0, draw(regs), draw(regs), draw(imm32))
    if op is Op.LDI:
        return Instruction(op, draw(regs), imm=draw(imm32))
    if op is Op.MOV:
        return Instruction(op, draw(regs), draw(regs))
    if op is Op.LD:
        return Instruction(op, draw(regs), draw(regs), imm=draw(imm32))
    if op is Op.ST:
        return Instruction(op, 0, draw(regs), draw(regs), draw(imm32))
    if op in (Op.JMP, Op.CALLT, Op.CALLD):
        return Instruction(op, imm=draw(imm32))
    return Instruction(op)


@given(instructions())
def test_decode_inverts_encode(ins):
    word = encode(ins)
    assert len(word) == 8
    assert decode(word) == ins


def test_unknown_opcode_rejected():
    with pytest.raises(DecodeError):
        decode(bytes([99, 0, 0, 0, 0, 0, 0, 0]))


def test_nonzero_unused_field_rejected():
    with pytest.raises(DecodeError):
        encode(Instruction(Op.RET, rd=3))


def test_store_uses_base_and_value():
    ins = Instruction(Op.ST, 0, 4, 7, 16)
    assert uses(ins) == {4, 7}
    assert defs(ins) == frozenset()


def test_calls_read_every_register():
    assert uses(Instruction(Op.CALLT, imm=0)) == set(range(SP + 1))
    assert defs(Instruction(Op.LD, 3, 4, imm=8)) == {3}
