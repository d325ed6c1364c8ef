"""Flag spaces, transformation sets and the coin-flip sampler."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

from ..objects import FunctionObject
from .helpers import HELPERS


class FlagSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Flag:
    name: str
    kind: str                     # "boolean" or "enumerated"
    values: tuple = (False, True)
    default: Any = False

    def __post_init__(self):
        if self.kind not in ("boolean", "enumerated"):
            raise FlagSpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "boolean" and self.values != (False, True):
            raise FlagSpaceError(f"{self.name}: boolean flags take no value list")
        if not self.values:
            raise FlagSpaceError(f"{self.name}: empty value list")
        if len(set(self.values)) != len(self.values):
            raise FlagSpaceError(f"{self.name}: duplicate values")
        if self.default not in self.values:
            raise FlagSpaceError(f"{self.name}: default {self.default!r} not a value")

    @property
    def option_count(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FlagSpace:
    flags: tuple[Flag, ...]
    helper_routines: tuple[FunctionObject, ...] = ()
    baseline: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.flags]
        if len(set(names)) != len(names):
            raise FlagSpaceError("duplicate flag names")
        for name, value in self.baseline:
            self.flag(name)
            if value not in self.flag(name).values:
                raise FlagSpaceError(f"baseline value {value!r} invalid for {name}")

    def flag(self, name: str) -> Flag:
        for f in self.flags:
            if f.name == name:
                return f
        raise FlagSpaceError(f"unknown flag {name!r}")

    @property
    def helper_names(self) -> tuple[str, ...]:
        return tuple(h.name for h in self.helper_routines)

    def defaults(self) -> "TransformationSet":
        return TransformationSet(tuple((f.name, f.default) for f in self.flags))

    def make(self, **assign) -> "TransformationSet":
        """Set with the given values (keyword names use _ for -), defaults elsewhere."""
        given = {k.replace("_", "-"): v for k, v in assign.items()}
        for k, v in given.items():
            if v not in self.flag(k).values:
                raise FlagSpaceError(f"{v!r} is not a value of {k}")
        return TransformationSet(tuple((f.name, given.get(f.name, f.default)) for f in self.flags))

    def baseline_set(self) -> "TransformationSet":
        base = dict(self.baseline)
        return TransformationSet(tuple((f.name, base.get(f.name, f.default)) for f in self.flags))


@dataclass(frozen=True)
class TransformationSet:
    assignments: tuple[tuple[str, Any], ...]

    def __getitem__(self, name: str):
        for k, v in self.assignments:
            if k == name:
                return v
        raise KeyError(name)

    def as_dict(self) -> dict[str, Any]:
        return dict(self.assignments)

    def canonical(self) -> str:
        """Order-independent text form, e.g. ``const-fold=on,loop-unroll=4``."""
        def fmt(v):
            if v is True:
                return "on"
            if v is False:
                return "off"
            return str(v)
        return ",".join(f"{k}={fmt(v)}" for k, v in sorted(self.assignments))

    def enabled(self, space: FlagSpace) -> list[str]:
        return [k for k, v in self.assignments if v != space.flag(k).default]

    def __str__(self) -> str:
        return self.canonical()


class CoinSource(Protocol):
    def random(self) -> float: ...
    def integers(self, high: int) -> int: ...


def sample_set(space: FlagSpace, rng: CoinSource) -> TransformationSet:
    """One fair coin per flag decides inclusion; an included enumerated flag
    then draws its value uniformly.  Included booleans are switched on."""
    out = []
    for f in space.flags:
        if rng.random() < 0.5:
            if f.kind == "boolean":
                out.append((f.name, True))
            else:
                out.append((f.name, f.values[int(rng.integers(len(f.values)))]))
        else:
            out.append((f.name, f.default))
    return TransformationSet(tuple(out))


def space_size(space: FlagSpace) -> tuple[int, int]:
    """(2^N, exact number of distinct assignments)."""
    return 2 ** len(space.flags), math.prod(f.option_count for f in space.flags)


def enumerate_space(space: FlagSpace):
    for combo in itertools.product(*(f.values for f in space.flags)):
        yield TransformationSet(tuple(zip((f.name for f in space.flags), combo)))


def _flag_from_json(d: dict) -> Flag:
    kind = d.get("kind", "boolean")
    if kind == "boolean":
        return Flag(d["name"], "boolean", default=bool(d.get("default", False)))
    values = tuple(d["values"])
    return Flag(d["name"], "enumerated", values, d.get("default", values[0]))


def space_from_dict(doc: dict) -> FlagSpace:
    try:
        flags = tuple(_flag_from_json(d) for d in doc["flags"])
        helpers = []
        for name in doc.get("helpers", []):
            if name not in HELPERS:
                raise FlagSpaceError(f"unknown helper routine {name!r}")
            helpers.append(HELPERS[name]())
        baseline = tuple(doc.get("baseline", {}).items())
    except (KeyError, TypeError) as e:
        raise FlagSpaceError(f"malformed flag space: {e}") from None
    return FlagSpace(flags, tuple(helpers), baseline)


def load_space(path: str | Path | None = None) -> FlagSpace:
    """Load a flag space from JSON; the bundled default when ``path`` is None."""
    if path is None:
        text = resources.files("replaytune.optimizer").joinpath("default_flags.json").read_text()
    else:
        text = Path(path).read_text()
    return space_from_dict(json.loads(text))
