"""Re-execute a captured invocation against a layout-compatible image."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .capture import Snapshot
from .image import STUB_BASE, BenchmarkManifest, ProgramImage, instantiate, layout_digest, load
from .isa import Instruction, Op, encode
from .memory import PAGE_SHIFT, PAGE_SIZE, Protection, Region, RegionKind
from .vm import DEFAULT_COSTS, CostModel, Outcome, ProcessState, predecode, run


class LayoutMismatch(Exception):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Multiplicative timing noise: ``off``, ``gaussian`` or ``spikes``."""

    kind: str = "off"
    sigma: float = 0.0
    spike_prob: float = 0.0
    spike_factor: float = 1.0
    seed: int = 0

    # multipliers are clamped here so timings stay positive for any sigma
    FLOOR = 1e-3

    def __post_init__(self):
        if self.kind not in ("off", "gaussian", "spikes"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0 or not 0 <= self.spike_prob <= 1 or self.spike_factor <= 0:
            raise ValueError("invalid noise parameters")

    @classmethod
    def off(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def gaussian(cls, sigma: float, seed: int = 0) -> "NoiseModel":
        return cls("gaussian", sigma, seed=seed)

    @classmethod
    def spikes(cls, sigma: float, spike_prob: float, spike_factor: float,
               seed: int = 0) -> "NoiseModel":
        return cls("spikes", sigma, spike_prob, spike_factor, seed)

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """``off``, ``gaussian:SIGMA`` or ``spikes:SIGMA:PROB:FACTOR``."""
        parts = text.split(":")
        try:
            if parts[0] == "off" and len(parts) == 1:
                return cls.off()
            if parts[0] == "gaussian" and len(parts) == 2:
                return cls.gaussian(float(parts[1]))
            if parts[0] == "spikes" and len(parts) == 4:
                return cls.spikes(*map(float, parts[1:]))
        except ValueError as e:
            raise ValueError(f"bad noise spec {text!r}: {e}") from None
        raise ValueError(f"bad noise spec {text!r}")

    def describe(self) -> str:
        if self.kind == "off":
            return "off"
        if self.kind == "gaussian":
            return f"gaussian:{self.sigma:g}"
        return f"spikes:{self.sigma:g}:{self.spike_prob:g}:{self.spike_factor:g}"

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def multiplier(self, rng: np.random.Generator) -> float:
        if self.kind == "off":
            return 1.0
        m = 1.0 + self.sigma * rng.standard_normal()
        if self.kind == "spikes" and rng.random() < self.spike_prob:
            m *= self.spike_factor
        return max(m, self.FLOOR)


def measure(cycles: int, noise: NoiseModel, rng: np.random.Generator | None = None) -> float:
    """Perceived time of a run that took ``cycles`` deterministic cycles."""
    if cycles <= 0:
        raise ValueError("cycles must be positive")
    if noise.kind == "off":
        return float(cycles)
    return cycles * noise.multiplier(rng)


@dataclass(frozen=True)
class ReplayResult:
    variant: int
    deterministic_cycles: int
    measured_time: float
    return_value: int
    observable_digest: str
    status: str = "ok"
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def record(self, rep: int) -> dict:
        return {"variant": self.variant, "rep": rep, "cycles": self.deterministic_cycles,
                "time": self.measured_time, "digest": self.observable_digest,
                "status": self.status}

    def remeasure(self, noise: NoiseModel, rng) -> "ReplayResult":
        """Same deterministic run, fresh noise draw."""
        if not self.ok:
            return self
        return ReplayResult(self.variant, self.deterministic_cycles,
                            measure(self.deterministic_cycles, noise, rng), self.return_value,
                            self.observable_digest)


def write_records(path, records) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def observable_digest(proc: ProcessState, manifest: BenchmarkManifest, image: ProgramImage) -> str:
    addr, size = manifest.observable_region(image.layout)
    return hashlib.sha256(proc.space.host_read(addr, size)).hexdigest()


_STUB = Region(STUB_BASE, PAGE_SIZE, RegionKind.CODE)
_HALT = Instruction(Op.HALT)


def prepare(image: ProgramImage, snapshot: Snapshot,
            costs: CostModel = DEFAULT_COSTS) -> ProcessState:
    """Fresh process from ``image`` with the snapshot state restored at the hot entry."""
    if layout_digest(image) != snapshot.layout_digest:
        raise LayoutMismatch(
            f"snapshot of {snapshot.benchmark!r} was captured against a different layout; "
            "recapture it for this image")
    proc = instantiate(image, costs)
    proc.space.map_region(_STUB, Protection.READ, encode(_HALT))
    proc.code[STUB_BASE] = predecode(_HALT)
    for vpn, data in snapshot.pages:
        proc.space.host_write(vpn << PAGE_SHIFT, data)
    proc.set_registers(snapshot.registers)
    proc.cycles = 0
    proc.pc = image.hot_entry
    proc.space.host_write(proc.sp, STUB_BASE.to_bytes(8, "little"))
    return proc


def replay(image: ProgramImage, snapshot: Snapshot, manifest: BenchmarkManifest,
           noise: NoiseModel = NoiseModel(), rng: np.random.Generator | None = None,
           variant: int = 0, cycle_budget: int | None = None,
           costs: CostModel = DEFAULT_COSTS) -> ReplayResult:
    """Run the hot function once from the captured state until it returns.

    Budget overruns and guest errors are reported in ``status``; a layout
    mismatch is refused with :class:`LayoutMismatch`.
    """
    proc = prepare(image, snapshot, costs)
    budget = cycle_budget if cycle_budget is not None else manifest.cycle_budget
    out = run(proc, budget, stop_pc=STUB_BASE)
    if out is Outcome.BUDGET_EXCEEDED:
        return ReplayResult(variant, proc.cycles, math.nan, 0, "", "budget",
                            f"exceeded {budget} cycles")
    if proc.pc != STUB_BASE or proc.error:
        return ReplayResult(variant, proc.cycles, math.nan, 0, "", "error",
                            proc.error or f"stopped at {proc.pc:#x}")
    cycles = proc.cycles
    return ReplayResult(variant, cycles, measure(cycles, noise, rng), proc.regs[0],
                        observable_digest(proc, manifest, image))


def full_run_cycles(image: ProgramImage, manifest: BenchmarkManifest,
                    costs: CostModel = DEFAULT_COSTS) -> int:
    proc = load(image, manifest, costs)
    out = run(proc, manifest.cycle_budget)
    if out is not Outcome.HALTED or proc.error:
        raise RuntimeError(f"{manifest.name}: full run did not halt cleanly ({proc.error})")
    return proc.cycles


def replays_per_full_execution(manifest: BenchmarkManifest, image: ProgramImage,
                               snapshot: Snapshot, costs: CostModel = DEFAULT_COSTS,
                               full_cycles: int | None = None) -> float:
    """How many replays fit in the time of one complete program run."""
    if full_cycles is None:
        full_cycles = full_run_cycles(image, manifest, costs)
    res = replay(image, snapshot, manifest, costs=costs)
    if not res.ok:
        raise RuntimeError(f"replay failed: {res.error}")
    return full_cycles / (res.deterministic_cycles + costs.replay_setup(len(snapshot.pages)))


__all__ = ["LayoutMismatch", "NoiseModel", "ReplayResult", "measure", "replay", "prepare",
           "replays_per_full_execution", "full_run_cycles", "write_records", "observable_digest"]
