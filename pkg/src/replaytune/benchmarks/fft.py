"""Walsh-Hadamard transform (the integer cousin of an FFT) in a 64 MiB heap.

The hot function windows the input into ``ys`` and transforms it in place.
It touches 48 pages while the process maps more than sixteen
thousand, which is what makes page-level capture pay off.
"""
from .common import G, H, DataSymbol, assemble, finish, rng_for, spin_function, words

N = 4096
WIN_MUL = 15
WIN = (N * WIN_MUL) >> 2   # window words actually reachable: 30 pages
HEAP = 64 << 20
COLD_ITERS = 30000

WHT = """
    ldi r1, =params
    ld r2, [r1+0]          ; n
    ld r3, [r1+8]          ; window stride numerator (stride = r3 / 4)
    ldi r4, =xs
    ldi r5, =win
    ldi r6, =ys
    ldi r7, 0
copy:
    beq r7, r2, copied
    mul r8, r7, #8
    add r9, r8, r4
    ld r9, [r9+0]
    mul r10, r7, r3
    shr r10, r10, #2
    mul r10, r10, #8
    add r10, r10, r5
    ld r10, [r10+0]
    xor r9, r9, r10
    add r8, r8, r6
    st r9, [r8+0]
    add r7, r7, #1
    jmp copy
copied:
    ldi r7, 1              ; h
hloop:
    beq r7, r2, transformed
    ldi r8, 0              ; block start
iloop:
    beq r8, r2, inext
    mov r9, r8
    add r10, r8, r7
jloop:
    mul r11, r9, #8
    add r11, r11, r6
    mul r12, r7, #8
    add r12, r12, r11
    ld r3, [r11+0]
    ld r4, [r12+0]
    add r5, r3, r4
    st r5, [r11+0]
    sub r5, r3, r4
    st r5, [r12+0]
    add r9, r9, #1
    bne r9, r10, jloop
    mul r12, r7, #2
    add r8, r8, r12
    jmp iloop
inext:
    mul r7, r7, #2
    jmp hloop
transformed:
    ldi r0, 0
    ldi r9, 0
sum:
    beq r9, r2, done
    mul r11, r9, #8
    add r11, r11, r6
    ld r3, [r11+0]
    xor r0, r0, r3
    mul r0, r0, #3
    add r9, r9, #16
    jmp sum
done:
    ret
"""

MAIN = f"""
    callt wht
    ldi r2, =result
    st r0, [r2+0]
    ldi r1, {COLD_ITERS}
    callt background
    ldi r2, =result
    ld r0, [r2+0]
    halt
"""


def build(seed: int = 0, space=None):
    rng = rng_for(seed, "fft")
    data = [
        DataSymbol("params", G, 0, 16),
        DataSymbol("result", G, 16, 8),
        DataSymbol("xs", H, 0x100000, 8 * N),
        DataSymbol("win", H, 0x1800000, 8 * WIN),
        DataSymbol("ys", H, 0x3000000, 8 * N),
    ]
    inputs = {"params": words([N, WIN_MUL]), "xs": words(rng.integers(0, 1 << 16, N)),
              "win": words(rng.integers(0, 1 << 16, WIN))}
    program = [assemble("main", MAIN), assemble("wht", WHT), spin_function()]
    return finish("fft", program, "wht", data, inputs, "ys", space, heap_size=HEAP,
                  description="Walsh-Hadamard transform, 64 MiB heap", input_seed=seed)
