"""Bitwise CRC over a short message; the hot function is about 1% of a run."""
from .common import G, H, DataSymbol, assemble, finish, rng_for, spin_function, words

N = 24
BITS = 32
POLY = 0xC96C5795D7870F42
COLD_ITERS = 12360

CRC = """
    ldi r1, =params
    ld r2, [r1+0]          ; n words
    ld r3, [r1+8]          ; polynomial
    ld r8, [r1+16]         ; bits per word
    ldi r4, =message
    ldi r0, -1
    ldi r5, 0
word:
    beq r5, r2, done
    mul r6, r5, #8
    add r6, r6, r4
    ld r6, [r6+0]
    xor r0, r0, r6
    ldi r7, 0
bit:
    and r9, r0, #1
    shr r0, r0, #1
    ldi r10, 0
    beq r9, r10, skip
    xor r0, r0, r3
skip:
    add r7, r7, #1
    bne r7, r8, bit
    mul r6, r5, #8
    ldi r9, =crcs
    add r6, r6, r9
    st r0, [r6+0]
    add r5, r5, #1
    jmp word
done:
    ret
"""

MAIN = f"""
    callt crc
    ldi r2, =result
    st r0, [r2+0]
    ldi r1, {COLD_ITERS}
    callt background
    ldi r2, =result
    ld r0, [r2+0]
    halt
"""


def build(seed: int = 0, space=None):
    rng = rng_for(seed, "crc")
    msg = rng.integers(0, 1 << 63, N, dtype="u8")
    data = [
        DataSymbol("params", G, 0, 24),
        DataSymbol("result", G, 24, 8),
        DataSymbol("message", H, 0, 8 * N),
        DataSymbol("crcs", H, 0x1000, 8 * N),
    ]
    inputs = {"params": words([N, POLY, BITS]), "message": words(msg)}
    program = [assemble("main", MAIN), assemble("crc", CRC), spin_function()]
    return finish("crc", program, "crc", data, inputs, "crcs", space,
                  description="bitwise CRC, hot function about 1% of the run", input_seed=seed)
