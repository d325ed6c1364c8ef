"""Symbol-frequency weighting, the first stage of Huffman coding.

A histogram of the input symbols is scaled to integer weights with a
repeated-subtraction divide, so the hot function is dominated by that
idiom.  The 32 MiB heap is almost entirely untouched.
"""
from .common import G, H, DataSymbol, assemble, finish, rng_for, spin_function, words

N = 1024
BINS = 64
SCALE = 16000
HEAP = 32 << 20
COLD_ITERS = 23000

WEIGH = f"""
    ldi r1, =params
    ld r2, [r1+0]          ; n symbols
    ld r3, [r1+8]          ; scale
    ldi r4, =syms
    ldi r5, =hist
    ldi r6, {BINS * 8}
    add r6, r5, r6
    ldi r7, 0
    mov r8, r5
clear:
    beq r8, r6, cleared
    st r7, [r8+0]
    add r8, r8, #8
    jmp clear
cleared:
    ldi r7, 0
count:
    beq r7, r2, counted
    mul r8, r7, #8
    add r8, r8, r4
    ld r8, [r8+0]
    mul r8, r8, #8
    add r8, r8, r5
    ld r9, [r8+0]
    add r9, r9, #1
    st r9, [r8+0]
    add r7, r7, #1
    jmp count
counted:
    ldi r0, 0
    ldi r7, 0
    ldi r12, {BINS}
    ldi r11, =weights
weigh:
    beq r7, r12, done
    mul r8, r7, #8
    add r9, r8, r5
    ld r9, [r9+0]
    mul r9, r9, r3
    ldi r10, 0
divide:
    blt r9, r2, divided
    sub r9, r9, r2
    add r10, r10, #1
    jmp divide
divided:
    add r8, r8, r11
    st r10, [r8+0]
    add r0, r0, r10
    mul r0, r0, #3
    add r7, r7, #1
    jmp weigh
done:
    ret
"""

MAIN = f"""
    callt weigh
    ldi r2, =result
    st r0, [r2+0]
    ldi r1, {COLD_ITERS}
    callt background
    ldi r2, =result
    ld r0, [r2+0]
    halt
"""


def build(seed: int = 0, space=None):
    rng = rng_for(seed, "huffman")
    # skewed symbol distribution, as in text
    p = 1.0 / (1.0 + rng.permutation(BINS))
    syms = rng.choice(BINS, size=N, p=p / p.sum())
    data = [
        DataSymbol("params", G, 0, 16),
        DataSymbol("result", G, 16, 8),
        DataSymbol("syms", H, 0x800000, 8 * N),
        DataSymbol("hist", H, 0x1000000, 8 * BINS),
        DataSymbol("weights", H, 0x1800000, 8 * BINS),
    ]
    inputs = {"params": words([N, SCALE]), "syms": words(syms)}
    program = [assemble("main", MAIN), assemble("weigh", WEIGH), spin_function()]
    return finish("huffman", program, "weigh", data, inputs, "weights", space, heap_size=HEAP,
                  description="symbol-frequency weighting with software divide, 32 MiB heap",
                  input_seed=seed)
