"""Shared pieces for the bundled benchmarks.

Conventions every benchmark follows:

* the hot function uses r0..r12 only (r13..r15 stay free for helper calls),
  reads its parameters from memory and returns a checksum in r0;
* callers keep nothing in registers across a call, so only r0 and sp are
  live at a return;
* the observable symbol is written entirely by the hot function, so its
  pages are always part of a capture.
"""
from __future__ import annotations

import numpy as np

from ..image import BenchmarkManifest, DataSymbol
from ..memory import PAGE_SIZE, RegionKind
from ..objects import FunctionObject, assemble, dummy_caller
from ..optimizer import FlagSpace, load_space

G, H = RegionKind.GLOBALS, RegionKind.HEAP


def words(values) -> bytes:
    """Little-endian u64 encoding of an integer sequence."""
    return np.asarray(values, dtype=np.uint64).astype("<u8").tobytes()


def spin_function(name: str = "background") -> FunctionObject:
    """Cold filler: r1 iterations of a divide loop, 51 cycles each."""
    return assemble(name, """
        ldi r2, 7
        ldi r4, 0
    spin:
        div r3, r1, r2
        div r3, r3, r2
        div r3, r1, r2
        div r3, r3, r2
        sub r1, r1, #1
        bne r1, r4, spin
        ret
    """)


def finish(name: str, program: list[FunctionObject], hot: str, data, inputs: dict,
           observable: str, space: FlagSpace | None = None, **kw) -> BenchmarkManifest:
    """Append the optimizer helpers and their dummy caller, then build the manifest."""
    space = space or load_space()
    helpers = list(space.helper_routines)
    objects = tuple(program) + tuple(helpers)
    if helpers:
        objects += (dummy_caller(helpers),)
    return BenchmarkManifest(name=name, objects=objects, hot_function=hot, data=tuple(data),
                             inputs=inputs, observable=observable, **kw)


def rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(name.encode())])


__all__ = ["G", "H", "PAGE_SIZE", "DataSymbol", "words", "spin_function", "finish", "rng_for",
           "assemble"]
