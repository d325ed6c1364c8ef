import pytest
from hypothesis import given, settings, strategies as st

from replaytune import benchmarks
from replaytune.build import baseline_layout, build_variant
from replaytune.image import (HotRegionOverflow, ImageError, LayoutSpec, UnresolvedSymbol,
                              default_layout, deserialize_image, layout_digest, link, load,
                              serialize_image, verify_layout)
from replaytune.memory import PAGE_SIZE
from replaytune.objects import assemble
from replaytune.optimizer import apply, load_space, sample_set

from util import tiny_manifest

SPACE = load_space()


@pytest.fixture(scope="module")
def fir():
    m = benchmarks.get("fir")
    return m, baseline_layout(m, SPACE)


def test_link_is_deterministic(fir):
    m, lay = fir
    a, b = link(m.objects, m, lay), link(m.objects, m, lay)
    assert serialize_image(a) == serialize_image(b)


def test_helper_call_keeps_layout(fir):
    m, lay = fir
    base = build_variant(m, SPACE.baseline_set(), SPACE, lay)
    helped = build_variant(m, SPACE.make(fast_helper_substitution=True), SPACE, lay)
    assert b"div_fast" not in base.function_code(m.hot_function)
    assert base.function_code(m.hot_function) != helped.function_code(m.hot_function)
    assert helped.call_table == base.call_table
    assert verify_layout(base, helped)


def test_padding_places_next_function_at_fixed_offset(fir):
    m, lay = fir
    img = link(m.objects, m, lay)
    ranges = img.function_ranges()
    names = [r[2] for r in ranges]
    nxt = ranges[names.index(m.hot_function) + 1][0]
    assert nxt - img.hot_entry == lay.hot_region_capacity


def test_call_table_holds_every_helper_whatever_the_set(fir):
    m, lay = fir
    import numpy as np
    rng = np.random.default_rng(3)
    tables = {build_variant(m, sample_set(SPACE, rng), SPACE, lay).call_table for _ in range(10)}
    assert len(tables) == 1
    names = {n for n, _ in tables.pop()}
    assert set(SPACE.helper_names) <= names


def _inflated_manifest():
    body = "\n".join(f"    add r{1 + k % 8}, r{1 + k % 8}, #1" for k in range(300))
    work = f"""
    ldi r9, 0
    ldi r10, 4
loop:
{body}
    add r9, r9, #1
    blt r9, r10, loop
    ret
"""
    return tiny_manifest("callt work\nhalt", ("work", work), hot="work")


def test_unrolled_variant_overflowing_capacity_is_rejected():
    m = _inflated_manifest()
    lay = baseline_layout(m, SPACE)
    assert m.hot.size <= lay.hot_region_capacity
    grown = apply(m.hot, SPACE.make(loop_unroll=8), SPACE)
    assert grown.size > lay.hot_region_capacity
    with pytest.raises(HotRegionOverflow):
        build_variant(m, SPACE.make(loop_unroll=8), SPACE, lay)


def test_unresolved_symbol():
    m = tiny_manifest("callt work\nhalt", ("work", "callt nowhere\nret"), hot="work")
    with pytest.raises(UnresolvedSymbol):
        link(m.objects, m, default_layout(m))


def test_verify_layout_cases(fir):
    m, lay = fir
    a = link(m.objects, m, lay)
    assert verify_layout(a, a)
    other = link(m.objects, m, LayoutSpec(hot_region_capacity=lay.hot_region_capacity + PAGE_SIZE))
    assert not verify_layout(a, other)
    assert layout_digest(a) != layout_digest(other)


def test_serialization_round_trip(fir):
    m, lay = fir
    img = link(m.objects, m, lay)
    blob = serialize_image(img)
    assert deserialize_image(blob) == img


def test_truncated_image_rejected(fir):
    blob = serialize_image(link(fir[0].objects, fir[0], fir[1]))
    with pytest.raises(ImageError):
        deserialize_image(blob[:len(blob) // 2])


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_flipped_byte_rejected(fir, data):
    blob = bytearray(serialize_image(link(fir[0].objects, fir[0], fir[1])))
    i = data.draw(st.integers(0, len(blob) - 1))
    blob[i] ^= 1 << data.draw(st.integers(0, 7))
    with pytest.raises(ImageError):
        deserialize_image(bytes(blob))


def test_corrupted_image_refused_by_loader(fir):
    m, lay = fir
    img = link(m.objects, m, lay)
    from dataclasses import replace
    bad = replace(img, hot_size=img.hot_size + 8)
    with pytest.raises(ImageError):
        load(bad, m)


def test_load_twice_identical(fir):
    m, lay = fir
    img = link(m.objects, m, lay)
    a, b = load(img, m), load(img, m)
    assert a.registers == b.registers
    assert a.space.snapshot_bytes() == b.space.snapshot_bytes()
