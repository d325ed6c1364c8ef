"""Bubble sort: one invocation of the hot function is the whole run."""
from .common import G, H, DataSymbol, assemble, finish, rng_for, words

N = 200

SORT = """
    ldi r11, 0
    ldi r1, =arr
    ldi r12, =params
    ld r2, [r12+0]         ; n
    ld r10, [r12+8]        ; capacity
    sub r3, r2, #1
outer:
    beq r3, r11, sorted
    ldi r4, 0
inner:
    blt r10, r2, fail      ; capacity < n
    mul r5, r4, #8
    add r5, r5, r1
    ld r6, [r5+0]
    ld r7, [r5+8]
    blt r7, r6, swap
    jmp next
swap:
    st r7, [r5+0]
    st r6, [r5+8]
next:
    add r4, r4, #1
    bne r4, r3, inner
    sub r3, r3, #1
    jmp outer
sorted:
    ldi r0, 0
    ldi r4, 0
sum:
    beq r4, r2, done
    mul r5, r4, #8
    add r5, r5, r1
    ld r6, [r5+0]
    add r7, r4, #1
    mul r6, r6, r7
    add r0, r0, r6
    add r4, r4, #1
    jmp sum
done:
    ret
fail:
    ldi r0, 0
    ret
"""

MAIN = """
    callt bubblesort
    halt
"""


def build(seed: int = 0, space=None):
    rng = rng_for(seed, "bubblesort")
    arr = rng.integers(0, 1 << 20, N)
    data = [DataSymbol("params", G, 0, 16), DataSymbol("arr", H, 0, 8 * N)]
    inputs = {"params": words([N, 1024]), "arr": words(arr)}
    program = [assemble("main", MAIN), assemble("bubblesort", SORT)]
    return finish("bubblesort", program, "bubblesort", data, inputs, "arr", space,
                  description="bubble sort, single dominant invocation", input_seed=seed)
