"""Uniform quantizer: rescale each sample, then bucket it by a fixed width.

The rescale divides by a power of two held in a register and the bucket
index comes from a repeated-subtraction divide, so both divide-related
passes have something to do.
"""
from .common import G, H, DataSymbol, assemble, finish, rng_for, spin_function, words

N = 256
WIDTH = 37
LEVELS = 40
COLD_ITERS = 5400

QUANT = """
    ldi r1, =params
    ld r2, [r1+0]          ; n samples
    ld r3, [r1+8]          ; bucket width
    ldi r4, =samples
    ldi r5, =levels
    ldi r0, 0
    ldi r7, 0
sample:
    beq r7, r2, done
    mul r8, r7, #8
    add r9, r8, r4
    ld r9, [r9+0]
    ldi r6, 16
    div r9, r9, r6
    ldi r10, 0
bucket:
    blt r9, r3, bucketed
    sub r9, r9, r3
    add r10, r10, #1
    jmp bucket
bucketed:
    add r8, r8, r5
    st r10, [r8+0]
    add r0, r0, r10
    add r7, r7, #1
    jmp sample
done:
    ret
"""

MAIN = f"""
    callt quantize
    ldi r2, =result
    st r0, [r2+0]
    ldi r1, {COLD_ITERS}
    callt background
    ldi r2, =result
    ld r0, [r2+0]
    halt
"""


def build(seed: int = 0, space=None):
    rng = rng_for(seed, "quantize")
    samples = rng.integers(0, 16 * WIDTH * LEVELS, N)
    data = [
        DataSymbol("params", G, 0, 16),
        DataSymbol("result", G, 16, 8),
        DataSymbol("samples", H, 0, 8 * N),
        DataSymbol("levels", H, 0x4000, 8 * N),
    ]
    inputs = {"params": words([N, WIDTH]), "samples": words(samples)}
    program = [assemble("main", MAIN), assemble("quantize", QUANT), spin_function()]
    return finish("quantize", program, "quantize", data, inputs, "levels", space,
                  description="quantizer with power-of-two rescale and software divide",
                  input_seed=seed)
