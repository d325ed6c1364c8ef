"""Helper routines the optimizer may call from a transformed hot function.

Register contract: arguments in r13..r15, results in r14/r15, and nothing
outside r13..r15 is touched, so a call site only needs those three free.
"""
from __future__ import annotations

from ..objects import FunctionObject, assemble

DIV_FAST = """
    ; r14 / r15 -> quotient r14, remainder r15
    div r13, r14, r15
    mul r15, r13, r15
    sub r15, r14, r15
    mov r14, r13
    ret
"""

MEMFILL_FAST = """
    ; store r13 to every word in [r14, r15); r14 ends equal to r15
    beq r14, r15, done
    mov r13, r13
    mov r13, r13
    mov r13, r13
loop:                       ; 32-byte aligned
    st r13, [r14+0]
    add r14, r14, #8
    bne r14, r15, loop
done:
    ret
"""

HELPER_REGS = frozenset({13, 14, 15})


def div_fast() -> FunctionObject:
    return assemble("div_fast", DIV_FAST)


def memfill_fast() -> FunctionObject:
    return assemble("memfill_fast", MEMFILL_FAST)


HELPERS = {"div_fast": div_fast, "memfill_fast": memfill_fast}
