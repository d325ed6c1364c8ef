"""Bundled micro-benchmarks, each exposing ``build(seed=0, space=None)``."""
from __future__ import annotations

from . import bubblesort, crc, fft, fir, huffman, quantize

BENCHMARKS = {
    "fir": fir.build,
    "bubblesort": bubblesort.build,
    "fft": fft.build,
    "huffman": huffman.build,
    "crc": crc.build,
    "quantize": quantize.build,
}

# benchmarks whose heap dwarfs the hot working set
LARGE_HEAP = ("fft", "huffman")


class UnknownBenchmark(KeyError):
    pass


def get(name: str, seed: int = 0, space=None):
    try:
        build = BENCHMARKS[name]
    except KeyError:
        raise UnknownBenchmark(name) from None
    return build(seed, space)


def names() -> list[str]:
    return list(BENCHMARKS)
