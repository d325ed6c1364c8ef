"""Instruction set: opcodes, fixed 8-byte encoding, and operand metadata.

Every instruction is ``<BBBBi``: opcode, rd, rs1, rs2, signed 32-bit
immediate.  Register fields hold 0-15 for general registers and ``SP`` (16)
for the stack pointer.  An ALU instruction whose ``rs2`` field is ``IMM``
takes its second operand from the immediate.  Branch immediates are byte
offsets relative to the branch itself; ``CALLT`` carries a call-table slot
index and ``CALLD`` an absolute address.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

INSN_SIZE = 8
NUM_REGS = 16
SP = 16
IMM = 0xFF
MASK64 = (1 << 64) - 1

_FMT = struct.Struct("<BBBBi")


class Op(IntEnum):
    LDI = 1
    MOV = 2
    ADD = 3
    SUB = 4
    MUL = 5
    DIV = 6
    AND = 7
    OR = 8
    XOR = 9
    SHL = 10
    SHR = 11
    LD = 12
    ST = 13
    JMP = 14
    BEQ = 15
    BNE = 16
    BLT = 17
    CALLT = 18
    CALLD = 19
    RET = 20
    HALT = 21


ALU_OPS = frozenset({Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.AND, Op.OR, Op.XOR, Op.SHL, Op.SHR})
COND_BRANCHES = frozenset({Op.BEQ, Op.BNE, Op.BLT})
BRANCHES = COND_BRANCHES | {Op.JMP}
CALLS = frozenset({Op.CALLT, Op.CALLD})
# Instructions after which control does not fall through.
TERMINATORS = frozenset({Op.JMP, Op.RET, Op.HALT})


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Instruction:
    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0

    @property
    def uses_imm(self) -> bool:
        return self.op in ALU_OPS and self.rs2 == IMM

    def __str__(self) -> str:
        return format_instruction(self)


def _reg_ok(r: int) -> bool:
    return 0 <= r <= SP


def validate(ins: Instruction) -> None:
    """Raise DecodeError unless ``ins`` is in canonical form."""
    op, rd, rs1, rs2, imm = ins.op, ins.rd, ins.rs1, ins.rs2, ins.imm
    if not -(1 << 31) <= imm < (1 << 31):
        raise DecodeError(f"immediate out of range: {imm}")
    used = _FIELDS[op]
    for name, val in (("rd", rd), ("rs1", rs1), ("rs2", rs2)):
        if name not in used:
            if val != 0:
                raise DecodeError(f"{op.name}: unused field {name} must be zero")
        elif name == "rs2" and op in ALU_OPS:
            if val != IMM and not _reg_ok(val):
                raise DecodeError(f"{op.name}: bad register {val}")
        elif not _reg_ok(val):
            raise DecodeError(f"{op.name}: bad register {val}")
    if "imm" not in used and not (op in ALU_OPS and rs2 == IMM) and imm != 0:
        raise DecodeError(f"{op.name}: unused immediate must be zero")


_FIELDS: dict[Op, frozenset[str]] = {
    Op.LDI: frozenset({"rd", "imm"}),
    Op.MOV: frozenset({"rd", "rs1"}),
    Op.LD: frozenset({"rd", "rs1", "imm"}),
    Op.ST: frozenset({"rs1", "rs2", "imm"}),
    Op.JMP: frozenset({"imm"}),
    Op.CALLT: frozenset({"imm"}),
    Op.CALLD: frozenset({"imm"}),
    Op.RET: frozenset(),
    Op.HALT: frozenset(),
}
for _op in ALU_OPS:
    _FIELDS[_op] = frozenset({"rd", "rs1", "rs2"})
for _op in COND_BRANCHES:
    _FIELDS[_op] = frozenset({"rs1", "rs2", "imm"})


def encode(ins: Instruction) -> bytes:
    validate(ins)
    return _FMT.pack(ins.op, ins.rd, ins.rs1, ins.rs2, ins.imm)


def decode(word: bytes) -> Instruction:
    if len(word) != INSN_SIZE:
        raise DecodeError("instruction words are 8 bytes")
    op, rd, rs1, rs2, imm = _FMT.unpack(word)
    try:
        opc = Op(op)
    except ValueError:
        raise DecodeError(f"unknown opcode {op}") from None
    ins = Instruction(opc, rd, rs1, rs2, imm)
    validate(ins)
    return ins


def encode_all(instrs) -> bytes:
    return b"".join(encode(i) for i in instrs)


def decode_all(code: bytes) -> list[Instruction]:
    if len(code) % INSN_SIZE:
        raise DecodeError("code length is not a multiple of 8")
    return [decode(code[i:i + INSN_SIZE]) for i in range(0, len(code), INSN_SIZE)]


def uses(ins: Instruction) -> frozenset[int]:
    """Registers read by ``ins`` (calls and HALT read everything)."""
    op = ins.op
    if op in ALU_OPS:
        return frozenset({ins.rs1} if ins.rs2 == IMM else {ins.rs1, ins.rs2})
    if op is Op.MOV or op is Op.LD:
        return frozenset({ins.rs1})
    if op is Op.ST or op in COND_BRANCHES:
        return frozenset({ins.rs1, ins.rs2})
    if op in CALLS or op is Op.HALT:
        return frozenset(range(SP + 1))
    if op is Op.RET:
        return frozenset({0, SP})
    return frozenset()


def defs(ins: Instruction) -> frozenset[int]:
    if ins.op in ALU_OPS or ins.op in (Op.LDI, Op.MOV, Op.LD):
        return frozenset({ins.rd})
    return frozenset()


def use_mask(ins: Instruction) -> int:
    m = 0
    for r in uses(ins):
        m |= 1 << r
    return m


def reg_name(r: int) -> str:
    return "sp" if r == SP else f"r{r}"


def format_instruction(ins: Instruction, target: str | None = None) -> str:
    op = ins.op
    name = op.name.lower()
    if op is Op.LDI:
        return f"{name} {reg_name(ins.rd)}, {ins.imm}"
    if op is Op.MOV:
        return f"{name} {reg_name(ins.rd)}, {reg_name(ins.rs1)}"
    if op in ALU_OPS:
        src = f"#{ins.imm}" if ins.rs2 == IMM else reg_name(ins.rs2)
        return f"{name} {reg_name(ins.rd)}, {reg_name(ins.rs1)}, {src}"
    if op is Op.LD:
        return f"{name} {reg_name(ins.rd)}, [{reg_name(ins.rs1)}{ins.imm:+d}]"
    if op is Op.ST:
        return f"{name} {reg_name(ins.rs2)}, [{reg_name(ins.rs1)}{ins.imm:+d}]"
    tgt = target if target is not None else f"{ins.imm:+d}"
    if op is Op.JMP:
        return f"{name} {tgt}"
    if op in COND_BRANCHES:
        return f"{name} {reg_name(ins.rs1)}, {reg_name(ins.rs2)}, {tgt}"
    if op in CALLS:
        return f"{name} {target if target is not None else ins.imm}"
    return name
