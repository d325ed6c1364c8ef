"""Variant construction: optimize the hot function and relink at a fixed layout."""
from __future__ import annotations

from .image import BenchmarkManifest, LayoutSpec, ProgramImage, default_layout, link
from .optimizer import FlagSpace, TransformationSet, apply


def baseline_layout(manifest: BenchmarkManifest, space: FlagSpace) -> LayoutSpec:
    """Layout sized for the larger of the raw and baseline-pipeline hot function."""
    hot = apply(manifest.hot, space.baseline_set(), space)
    base = default_layout(manifest)
    alt = default_layout_for_size(max(hot.size, manifest.hot.size))
    return alt if alt.hot_region_capacity > base.hot_region_capacity else base


def default_layout_for_size(size: int, slack_pages: int = 1) -> LayoutSpec:
    from .image import page_align
    from .memory import PAGE_SIZE
    return LayoutSpec(hot_region_capacity=page_align(max(size, 1)) + slack_pages * PAGE_SIZE)


def build_variant(manifest: BenchmarkManifest, tset: TransformationSet, space: FlagSpace,
                  layout: LayoutSpec) -> ProgramImage:
    """Apply ``tset`` to the hot function and link.

    Raises :class:`PassInternalError` or :class:`HotRegionOverflow`; callers
    that evaluate many variants record these rather than propagate them.
    """
    hot = apply(manifest.hot, tset, space)
    objects = tuple(hot if o.name == manifest.hot_function else o for o in manifest.objects)
    return link(objects, manifest, layout, transform=tset.canonical())
