"""Per-function cycle attribution from CALL/RET events (a tiny callgrind)."""
from __future__ import annotations

import bisect
from dataclasses import dataclass

from .image import BenchmarkManifest, ProgramImage, load
from .isa import Op
from .vm import DEFAULT_COSTS, BudgetExceeded, CostModel, Outcome, run


@dataclass(frozen=True)
class FunctionProfile:
    function: str
    exclusive_cycles: int
    invocation_count: int
    # inclusive cycles of the first invocation (call excluded, return included)
    first_inclusive_cycles: int | None = None


@dataclass(frozen=True)
class Profile:
    functions: tuple[FunctionProfile, ...]
    total_cycles: int
    return_value: int

    def __getitem__(self, name: str) -> FunctionProfile:
        for f in self.functions:
            if f.function == name:
                return f
        raise KeyError(name)

    def ranked(self) -> list[str]:
        return [f.function for f in self.functions]


class _Attributor:
    def __init__(self, image: ProgramImage, start_cycles: int):
        ranges = image.function_ranges()
        self.starts = [r[0] for r in ranges]
        self.ranges = ranges
        self.stack: list[tuple[str, int]] = []  # (function, inclusive start)
        self.exclusive: dict[str, int] = {}
        self.calls: dict[str, int] = {}
        self.first: dict[str, int] = {}
        self.mark = start_cycles

    def function_at(self, pc: int) -> str:
        i = bisect.bisect_right(self.starts, pc) - 1
        if i < 0 or pc >= self.ranges[i][1]:
            return f"<unknown {pc:#x}>"
        return self.ranges[i][2]

    def enter(self, name: str, cycles: int) -> None:
        self.stack.append((name, cycles))
        self.calls[name] = self.calls.get(name, 0) + 1
        self.mark = cycles

    def charge(self, cycles: int) -> None:
        if self.stack:
            name = self.stack[-1][0]
            self.exclusive[name] = self.exclusive.get(name, 0) + cycles - self.mark
        self.mark = cycles

    def __call__(self, op: int, cycles: int, new_pc: int) -> None:
        if op == Op.RET:
            self.charge(cycles)
            name, start = self.stack.pop()
            if name not in self.first:
                self.first[name] = cycles - start
        else:
            self.charge(cycles)
            self.enter(self.function_at(new_pc), cycles)


def profile(image: ProgramImage, manifest: BenchmarkManifest, costs: CostModel = DEFAULT_COSTS,
            cycle_budget: int | None = None) -> Profile:
    """Run the image to completion attributing exclusive cycles per function.

    The cycles of a call instruction go to the caller, those of a return to
    the callee.  Exclusive cycles sum to the total cycle count.
    """
    proc = load(image, manifest, costs)
    att = _Attributor(image, proc.cycles)
    att.enter(att.function_at(proc.pc), proc.cycles)
    proc.call_observer = att
    budget = cycle_budget if cycle_budget is not None else manifest.cycle_budget
    out = run(proc, budget)
    if out is Outcome.BUDGET_EXCEEDED:
        raise BudgetExceeded(f"{manifest.name}: profile exceeded {budget} cycles")
    if proc.error:
        raise RuntimeError(f"{manifest.name}: program failed: {proc.error}")
    att.charge(proc.cycles)
    funcs = [FunctionProfile(name, att.exclusive.get(name, 0), att.calls.get(name, 0),
                             att.first.get(name))
             for name in set(att.exclusive) | set(att.calls)]
    funcs.sort(key=lambda f: (-f.exclusive_cycles, f.function))
    return Profile(tuple(funcs), proc.cycles, proc.regs[0])
