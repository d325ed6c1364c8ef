"""FIR filter over a sample block, called several times per run.

The hot function clears its output with a word-fill loop, then computes
``out[i] = (sum_j xs[i+j] * coef[j]) >> 4`` with a loop-invariant bounds
check at the head of the inner loop.
"""
from .common import G, H, DataSymbol, assemble, finish, rng_for, spin_function, words

N_OUT = 128
TAPS = 12
CALLS = 5
COLD_ITERS = 2650

FIR = f"""
    ldi r1, =params
    ld r2, [r1+0]          ; n outputs
    ld r3, [r1+8]          ; taps
    ld r12, [r1+16]        ; capacity
    ldi r4, =out
    ldi r6, 8
    mul r5, r2, r6
    add r5, r4, r5
    ldi r7, 0
clear:
    beq r4, r5, cleared
    st r7, [r4+0]
    add r4, r4, #8
    jmp clear
cleared:
    ldi r0, 0
    ldi r8, 0
outer:
    beq r8, r2, done
    ldi r9, 0
    ldi r10, 0
inner:
    blt r12, r3, fail      ; capacity < taps
    add r11, r8, r10
    mul r11, r11, #8
    ldi r6, =xs
    add r11, r11, r6
    ld r11, [r11+0]
    mul r6, r10, #8
    ldi r7, =coef
    add r6, r6, r7
    ld r6, [r6+0]
    mul r11, r11, r6
    add r9, r9, r11
    add r10, r10, #1
    bne r10, r3, inner
    shr r9, r9, #4
    mul r6, r8, #8
    ldi r7, =out
    add r6, r6, r7
    st r9, [r6+0]
    add r0, r0, r9
    add r8, r8, #1
    jmp outer
done:
    ret
fail:
    ldi r0, 0
    ret
"""

MAIN = f"""
    ldi r2, =state
    ldi r1, {CALLS}
    st r1, [r2+0]
again:
    callt fir_filter
    ldi r2, =state
    ld r1, [r2+8]
    add r1, r1, r0
    st r1, [r2+8]
    ld r1, [r2+0]
    sub r1, r1, #1
    st r1, [r2+0]
    ldi r3, 0
    bne r1, r3, again
    ldi r1, {COLD_ITERS}
    callt background
    ldi r2, =state
    ld r0, [r2+8]
    halt
"""


def build(seed: int = 0, space=None):
    rng = rng_for(seed, "fir")
    xs = rng.integers(0, 1 << 12, N_OUT + TAPS)
    coef = rng.integers(1, 64, TAPS)
    data = [
        DataSymbol("params", G, 0, 24),
        DataSymbol("state", G, 64, 16),
        DataSymbol("xs", H, 0, 8 * (N_OUT + TAPS)),
        DataSymbol("coef", H, 0x2000, 8 * TAPS),
        DataSymbol("out", H, 0x3000, 8 * N_OUT),
    ]
    inputs = {"params": words([N_OUT, TAPS, 64]), "xs": words(xs), "coef": words(coef)}
    program = [assemble("main", MAIN), assemble("fir_filter", FIR), spin_function()]
    return finish("fir", program, "fir_filter", data, inputs, "out", space,
                  description="FIR filter, hot function called several times",
                  input_seed=seed)
