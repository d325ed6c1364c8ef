"""Relocatable function objects, their editable IR form, and an assembler.

A :class:`FunctionObject` is encoded code plus relocations.  Passes work on
the lifted form: a flat list of :class:`Ins` and :class:`Label` items where
branches point at labels, so inserting or deleting instructions never
invalidates control flow.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import (ALU_OPS, COND_BRANCHES, IMM, INSN_SIZE, SP, Instruction, Op,
                  decode_all, encode, format_instruction)


class ObjectError(ValueError):
    pass


@dataclass(frozen=True)
class FunctionObject:
    name: str
    code: bytes
    relocations: tuple[tuple[int, str], ...] = ()
    referenced_symbols: frozenset[str] = frozenset()
    # linker GC root even if never called (the dummy caller)
    keep: bool = False

    def __post_init__(self):
        if len(self.code) % INSN_SIZE:
            raise ObjectError(f"{self.name}: code length not a multiple of 8")
        for off, sym in self.relocations:
            if not 0 <= off < len(self.code) or off % INSN_SIZE:
                raise ObjectError(f"{self.name}: relocation offset {off} outside code")
            if sym not in self.referenced_symbols:
                raise ObjectError(f"{self.name}: relocated symbol {sym!r} not referenced")

    @property
    def size(self) -> int:
        return len(self.code)

    def instructions(self) -> list[Instruction]:
        return decode_all(self.code)


class Label:
    __slots__ = ("name",)

    def __init__(self, name: str = ""):
        self.name = name

    def __repr__(self) -> str:
        return f"Label({self.name!r})"


@dataclass(eq=False)
class Ins:
    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    target: Label | None = None
    sym: str | None = None

    def copy(self, **changes) -> "Ins":
        fields = dict(op=self.op, rd=self.rd, rs1=self.rs1, rs2=self.rs2, imm=self.imm,
                      target=self.target, sym=self.sym)
        fields.update(changes)
        return Ins(**fields)

    @property
    def is_imm(self) -> bool:
        return self.op in ALU_OPS and self.rs2 == IMM

    def __str__(self) -> str:
        ins = Instruction(self.op, self.rd, self.rs1, self.rs2, 0 if self.target else self.imm)
        tgt = self.target.name if self.target is not None else self.sym
        return format_instruction(ins, tgt)


def lift(obj: FunctionObject) -> list:
    """Decode ``obj`` into an item list with labels for every branch target."""
    instrs = obj.instructions()
    n = len(instrs)
    relocs = dict(obj.relocations)
    labels: dict[int, Label] = {}
    items_ins = []
    for i, ins in enumerate(instrs):
        off = i * INSN_SIZE
        it = Ins(ins.op, ins.rd, ins.rs1, ins.rs2, ins.imm, sym=relocs.get(off))
        if ins.op is Op.JMP or ins.op in COND_BRANCHES:
            dest = off + ins.imm
            if dest % INSN_SIZE or not 0 <= dest <= n * INSN_SIZE:
                raise ObjectError(f"{obj.name}: branch at {off} leaves the function")
            lab = labels.setdefault(dest, Label(f"L{dest}"))
            it.target = lab
            it.imm = 0
        items_ins.append(it)
    items: list = []
    for i, it in enumerate(items_ins):
        if i * INSN_SIZE in labels:
            items.append(labels[i * INSN_SIZE])
        items.append(it)
    if n * INSN_SIZE in labels:
        items.append(labels[n * INSN_SIZE])
    return items


def instructions_of(items) -> list[Ins]:
    return [it for it in items if isinstance(it, Ins)]


def layout_offsets(items) -> dict[int, int]:
    """id(item) -> byte offset, labels taking the offset of the next instruction."""
    offs = {}
    off = 0
    for it in items:
        offs[id(it)] = off
        if isinstance(it, Ins):
            off += INSN_SIZE
    return offs


def lower(name: str, items, keep: bool = False) -> FunctionObject:
    """Encode an item list back into a FunctionObject."""
    offs = layout_offsets(items)
    placed = {id(it) for it in items if isinstance(it, Label)}
    out = bytearray()
    relocs = []
    syms = set()
    for it in items:
        if not isinstance(it, Ins):
            continue
        off = offs[id(it)]
        imm = it.imm
        if it.target is not None:
            if id(it.target) not in placed:
                raise ObjectError(f"{name}: branch to unplaced label {it.target.name}")
            imm = offs[id(it.target)] - off
        if it.sym is not None:
            relocs.append((off, it.sym))
            syms.add(it.sym)
            imm = 0
        out += encode(Instruction(it.op, it.rd, it.rs1, it.rs2, imm))
    return FunctionObject(name, bytes(out), tuple(relocs), frozenset(syms), keep)


def listing(items) -> str:
    lines = []
    for it in items:
        if isinstance(it, Label):
            lines.append(f"{it.name}:")
        else:
            lines.append(f"    {it}")
    return "\n".join(lines)


# -- assembler -----------------------------------------------------------------

_REG = r"(r\d+|sp)"
_MEM = re.compile(r"^\[\s*(r\d+|sp)\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+))?\s*\]$")


class AsmError(ObjectError):
    pass


def _reg(tok: str, line: str) -> int:
    tok = tok.strip().lower()
    if tok == "sp":
        return SP
    m = re.fullmatch(r"r(\d+)", tok)
    if not m or int(m.group(1)) > 15:
        raise AsmError(f"bad register {tok!r} in {line!r}")
    return int(m.group(1))


def _int(tok: str, line: str) -> int:
    try:
        return int(tok.strip(), 0)
    except ValueError:
        raise AsmError(f"bad integer {tok!r} in {line!r}") from None


def _mem(tok: str, line: str) -> tuple[int, int]:
    m = _MEM.match(tok.strip().lower())
    if not m:
        raise AsmError(f"bad memory operand {tok!r} in {line!r}")
    base = _reg(m.group(1), line)
    off = int(m.group(3), 0) if m.group(3) else 0
    return base, -off if m.group(2) == "-" else off


def _split_operands(rest: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in rest:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def parse(text: str) -> list:
    """Parse assembly text into an item list (labels resolved by name)."""
    labels: dict[str, Label] = {}
    defined: set[str] = set()
    items: list = []

    def label(name: str) -> Label:
        return labels.setdefault(name, Label(name))

    for raw in text.splitlines():
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        while ":" in line and re.match(r"^[A-Za-z_.][\w.]*\s*:", line):
            name, line = line.split(":", 1)
            name = name.strip()
            if name in defined:
                raise AsmError(f"duplicate label {name!r}")
            defined.add(name)
            items.append(label(name))
            line = line.strip()
        if not line:
            continue
        mnem, _, rest = line.partition(" ")
        try:
            op = Op[mnem.upper()]
        except KeyError:
            raise AsmError(f"unknown mnemonic {mnem!r}") from None
        ops = _split_operands(rest)
        want = {Op.LDI: 2, Op.MOV: 2, Op.LD: 2, Op.ST: 2, Op.JMP: 1, Op.CALLT: 1,
                Op.CALLD: 1, Op.RET: 0, Op.HALT: 0}.get(op, 3)
        if len(ops) != want:
            raise AsmError(f"{mnem} expects {want} operands: {raw!r}")
        if op is Op.LDI:
            if ops[1].startswith("="):
                items.append(Ins(op, rd=_reg(ops[0], raw), sym=ops[1][1:].strip()))
            else:
                items.append(Ins(op, rd=_reg(ops[0], raw), imm=_int(ops[1], raw)))
        elif op is Op.MOV:
            items.append(Ins(op, rd=_reg(ops[0], raw), rs1=_reg(ops[1], raw)))
        elif op in ALU_OPS:
            rd, rs1 = _reg(ops[0], raw), _reg(ops[1], raw)
            if ops[2].startswith("#"):
                items.append(Ins(op, rd=rd, rs1=rs1, rs2=IMM, imm=_int(ops[2][1:], raw)))
            else:
                items.append(Ins(op, rd=rd, rs1=rs1, rs2=_reg(ops[2], raw)))
        elif op is Op.LD:
            base, off = _mem(ops[1], raw)
            items.append(Ins(op, rd=_reg(ops[0], raw), rs1=base, imm=off))
        elif op is Op.ST:
            base, off = _mem(ops[1], raw)
            items.append(Ins(op, rs1=base, rs2=_reg(ops[0], raw), imm=off))
        elif op is Op.JMP:
            items.append(Ins(op, target=label(ops[0])))
        elif op in COND_BRANCHES:
            items.append(Ins(op, rs1=_reg(ops[0], raw), rs2=_reg(ops[1], raw), target=label(ops[2])))
        elif op in (Op.CALLT, Op.CALLD):
            items.append(Ins(op, sym=ops[0]))
        else:
            items.append(Ins(op))
    undefined = set(labels) - defined
    if undefined:
        raise AsmError(f"undefined labels: {sorted(undefined)}")
    return items


def assemble(name: str, text: str, keep: bool = False) -> FunctionObject:
    return lower(name, parse(text), keep=keep)


def dummy_caller(helpers, name: str = "__dummy_caller") -> FunctionObject:
    """Never-executed function that calls every helper, pinning their call-table slots."""
    body = "\n".join(f"callt {h.name if hasattr(h, 'name') else h}" for h in helpers)
    return assemble(name, body + "\nret", keep=True)
