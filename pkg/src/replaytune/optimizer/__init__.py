"""Hot-function optimizer: flag space, sampler and transformation passes."""
from __future__ import annotations

from ..objects import FunctionObject, lift, lower
from .flags import (Flag, FlagSpace, FlagSpaceError, TransformationSet, enumerate_space,
                    load_space, sample_set, space_from_dict, space_size)
from .ir import PassInternalError
from .passes import PASSES, check_items


def apply(hot: FunctionObject, tset: TransformationSet, space: FlagSpace) -> FunctionObject:
    """Run the enabled passes over ``hot`` in flag declaration order.

    Flags at their default value are skipped, so the all-defaults set returns
    ``hot`` unchanged.  Any failure inside a pass is reported as
    :class:`PassInternalError`.
    """
    ctx = {"helpers": space.helper_names}
    items = None
    for flag in space.flags:
        value = tset[flag.name]
        if value == flag.default:
            continue
        if flag.name not in PASSES:
            raise PassInternalError(f"no pass implements flag {flag.name!r}")
        if items is None:
            items = lift(hot)
        try:
            items = PASSES[flag.name](items, value, ctx)
            check_items(items)
        except PassInternalError:
            raise
        except Exception as e:  # a bug in a pass must not take down the search
            raise PassInternalError(f"{flag.name}: {type(e).__name__}: {e}") from e
    if items is None:
        return hot
    try:
        return lower(hot.name, items, keep=hot.keep)
    except Exception as e:
        raise PassInternalError(f"lowering failed: {e}") from e


__all__ = ["apply", "Flag", "FlagSpace", "FlagSpaceError", "TransformationSet", "enumerate_space",
           "load_space", "sample_set", "space_from_dict", "space_size", "PassInternalError"]
