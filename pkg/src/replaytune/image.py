"""Layout-stabilizing linker, program images, loader and the image file format.

Every variant of a benchmark links to the same layout: all functions are
reached through a fixed call table whose slots are pinned by a dummy caller,
and the hot function sits in a padded region so whatever follows it never
moves.

Image file layout (little-endian)::

    "HRIM" u16 version
    LayoutSpec      6 x u64 (code, call table, globals, heap, stack bases; hot capacity)
    u32 nsegments   { u8 kind, u64 start, u64 length, u32 nblob, blob }
    u32 nslots      { str name, u64 address }
    u32 nsymbols    { str name, u64 address, u64 size, u8 is_data }
    hot metadata    str entry name, u64 entry, str hot name, u64 hot_entry,
                    u64 hot_size, str transform
    sha256 digest of everything above

``str`` is a u16 length followed by UTF-8 bytes.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .isa import Instruction, Op, decode, encode
from .memory import (PAGE_SIZE, AddressSpace, Protection, Region, RegionKind)
from .objects import FunctionObject
from .vm import DEFAULT_COSTS, CostModel, ProcessState, decode_code

CALL_TABLE_BASE = 0x0000_8000
CODE_BASE = 0x0001_0000
GLOBALS_BASE = 0x0010_0000
HEAP_BASE = 0x0100_0000
STACK_BASE = 0x0800_0000
SHARED_LOG_BASE = 0x0F00_0000
SHARED_LOG_PAGES = 16
STUB_BASE = 0x0F10_0000

RESERVED = (
    Region(SHARED_LOG_BASE, SHARED_LOG_PAGES * PAGE_SIZE, RegionKind.SHARED_LOG),
    Region(STUB_BASE, PAGE_SIZE, RegionKind.CODE),
)

FUNC_ALIGN = 32
MAGIC = b"HRIM"
VERSION = 1


class LinkError(Exception):
    pass


class HotRegionOverflow(LinkError):
    pass


class UnresolvedSymbol(LinkError):
    pass


class ImageError(Exception):
    """Malformed, truncated or corrupted image."""


class LoadError(Exception):
    pass


def page_align(n: int) -> int:
    return (n + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)


def _align(n: int, a: int) -> int:
    return (n + a - 1) & ~(a - 1)


@dataclass(frozen=True)
class LayoutSpec:
    code_base: int = CODE_BASE
    call_table_base: int = CALL_TABLE_BASE
    globals_base: int = GLOBALS_BASE
    heap_base: int = HEAP_BASE
    stack_base: int = STACK_BASE
    hot_region_capacity: int = 2 * PAGE_SIZE

    def __post_init__(self):
        if self.hot_region_capacity % PAGE_SIZE or self.hot_region_capacity <= 0:
            raise ValueError("hot region capacity must be a positive page multiple")

    def base_for(self, kind: RegionKind) -> int:
        return {RegionKind.GLOBALS: self.globals_base, RegionKind.HEAP: self.heap_base,
                RegionKind.STACK: self.stack_base}[kind]


@dataclass(frozen=True)
class DataSymbol:
    name: str
    kind: RegionKind
    offset: int
    size: int


@dataclass(frozen=True)
class BenchmarkManifest:
    name: str
    objects: tuple[FunctionObject, ...]
    hot_function: str
    data: tuple[DataSymbol, ...]
    inputs: dict[str, bytes]
    observable: str
    globals_size: int = PAGE_SIZE
    heap_size: int = 16 * PAGE_SIZE
    stack_size: int = 16 * PAGE_SIZE
    entry: str = "main"
    description: str = ""
    input_seed: int = 0
    cycle_budget: int = 50_000_000

    def __post_init__(self):
        names = [o.name for o in self.objects]
        if self.hot_function not in names:
            raise ValueError(f"hot function {self.hot_function!r} not among objects")
        if self.entry not in names:
            raise ValueError(f"entry {self.entry!r} not among objects")
        syms = {d.name: d for d in self.data}
        if self.observable not in syms:
            raise ValueError(f"observable {self.observable!r} is not a data symbol")
        sizes = {RegionKind.GLOBALS: self.globals_size, RegionKind.HEAP: self.heap_size}
        for d in self.data:
            if d.kind not in sizes or d.offset < 0 or d.offset + d.size > sizes[d.kind]:
                raise ValueError(f"data symbol {d.name!r} outside its segment")
        for name, blob in self.inputs.items():
            if name not in syms or len(blob) > syms[name].size:
                raise ValueError(f"input {name!r} does not fit its symbol")

    @property
    def hot(self) -> FunctionObject:
        return next(o for o in self.objects if o.name == self.hot_function)

    def data_symbol(self, name: str) -> DataSymbol:
        return next(d for d in self.data if d.name == name)

    def data_address(self, name: str, layout: LayoutSpec) -> int:
        d = self.data_symbol(name)
        return layout.base_for(d.kind) + d.offset

    def observable_region(self, layout: LayoutSpec) -> tuple[int, int]:
        d = self.data_symbol(self.observable)
        return layout.base_for(d.kind) + d.offset, d.size

    @property
    def data_bytes(self) -> int:
        return self.globals_size + self.heap_size + self.stack_size


@dataclass(frozen=True)
class Segment:
    region: Region
    data: bytes = b""


@dataclass(frozen=True)
class Symbol:
    name: str
    address: int
    size: int
    is_data: bool = False


@dataclass(frozen=True)
class ProgramImage:
    layout: LayoutSpec
    segments: tuple[Segment, ...]
    call_table: tuple[tuple[str, int], ...]
    symbols: tuple[Symbol, ...]
    entry_name: str
    entry: int
    hot_name: str
    hot_entry: int
    hot_size: int
    transform: str = ""
    digest: bytes = field(default=b"", compare=True)

    @property
    def symbol_map(self) -> dict[str, int]:
        return {s.name: s.address for s in self.symbols}

    @property
    def text(self) -> Segment:
        return next(s for s in self.segments if s.region.start == self.layout.code_base)

    def function_ranges(self) -> list[tuple[int, int, str]]:
        """(start, end, name) of every placed function, sorted by address."""
        return sorted((s.address, s.address + s.size, s.name) for s in self.symbols if not s.is_data)

    def function_code(self, name: str) -> bytes:
        sym = next(s for s in self.symbols if s.name == name and not s.is_data)
        off = sym.address - self.text.region.start
        return self.text.data[off:off + sym.size]

    @property
    def content_digest(self) -> bytes:
        return hashlib.sha256(_body(self)).digest()

    def verify_integrity(self) -> None:
        if self.digest != self.content_digest:
            raise ImageError("image digest mismatch (corrupted image)")


def default_layout(manifest: BenchmarkManifest, slack_pages: int = 1) -> LayoutSpec:
    """Hot capacity = baseline hot size rounded up to a page, plus slack."""
    return LayoutSpec(hot_region_capacity=page_align(max(manifest.hot.size, 1))
                      + slack_pages * PAGE_SIZE)


def _reachable(objects: dict[str, FunctionObject], roots) -> set[str]:
    seen = set()
    todo = [r for r in roots]
    while todo:
        name = todo.pop()
        if name in seen or name not in objects:
            continue
        seen.add(name)
        todo.extend(s for s in objects[name].referenced_symbols if s in objects)
    return seen


def link(objects, manifest: BenchmarkManifest, layout: LayoutSpec,
         transform: str = "") -> ProgramImage:
    """Link ``objects`` into an image.

    Functions unreachable from the entry or from a ``keep`` object are
    dropped; reachable ones get call-table slots in object order.  The hot
    function starts on a page boundary and is padded to the layout's
    capacity.
    """
    by_name: dict[str, FunctionObject] = {}
    for o in objects:
        if o.name in by_name:
            raise LinkError(f"duplicate function {o.name!r}")
        by_name[o.name] = o
    data_addr = {d.name: layout.base_for(d.kind) + d.offset for d in manifest.data}
    clash = set(data_addr) & set(by_name)
    if clash:
        raise LinkError(f"symbols defined as both code and data: {sorted(clash)}")
    roots = [manifest.entry] + [o.name for o in objects if o.keep]
    live = _reachable(by_name, roots)
    included = [o for o in objects if o.name in live]
    if manifest.hot_function not in live:
        raise LinkError(f"hot function {manifest.hot_function!r} is not reachable")
    slots = {o.name: i for i, o in enumerate(included)}

    addr = layout.code_base
    placed: dict[str, int] = {}
    hot_entry = hot_size = None
    for o in included:
        if o.name == manifest.hot_function:
            addr = page_align(addr)
            if o.size > layout.hot_region_capacity:
                raise HotRegionOverflow(
                    f"{o.name}: {o.size} bytes exceed hot region capacity "
                    f"{layout.hot_region_capacity}")
            hot_entry, hot_size = addr, o.size
            placed[o.name] = addr
            addr += layout.hot_region_capacity
        else:
            addr = _align(addr, FUNC_ALIGN)
            placed[o.name] = addr
            addr += o.size
    text_len = page_align(addr - layout.code_base)
    text = bytearray(text_len)
    for o in included:
        code = bytearray(o.code)
        for off, sym in o.relocations:
            ins = decode(bytes(code[off:off + 8]))
            if ins.op is Op.CALLT:
                if sym not in slots:
                    raise UnresolvedSymbol(f"{o.name}: call to unknown function {sym!r}")
                value = slots[sym]
            elif sym in placed:
                value = placed[sym]
            elif sym in data_addr and ins.op is not Op.CALLD:
                value = data_addr[sym]
            else:
                raise UnresolvedSymbol(f"{o.name}: unresolved symbol {sym!r}")
            if value >= 1 << 31:
                raise LinkError(f"{sym!r} address does not fit an immediate")
            code[off:off + 8] = encode(Instruction(ins.op, ins.rd, ins.rs1, ins.rs2, value))
        start = placed[o.name] - layout.code_base
        text[start:start + len(code)] = code

    table = tuple((o.name, placed[o.name]) for o in included)
    table_blob = b"".join(a.to_bytes(8, "little") for _, a in table)
    segments = (
        Segment(Region(layout.call_table_base, page_align(max(len(table_blob), 1)), RegionKind.CODE),
                table_blob),
        Segment(Region(layout.code_base, text_len, RegionKind.CODE), bytes(text)),
        Segment(Region(layout.globals_base, page_align(manifest.globals_size), RegionKind.GLOBALS)),
        Segment(Region(layout.heap_base, page_align(manifest.heap_size), RegionKind.HEAP)),
        Segment(Region(layout.stack_base, page_align(manifest.stack_size), RegionKind.STACK)),
    )
    regions = sorted(s.region for s in segments)
    for a, b in zip(regions, regions[1:]):
        if a.overlaps(b):
            raise LinkError(f"segments overlap: {a} / {b}")
    symbols = tuple(Symbol(o.name, placed[o.name], o.size) for o in included) + tuple(
        Symbol(d.name, data_addr[d.name], d.size, True) for d in manifest.data)
    img = ProgramImage(layout, segments, table, symbols, manifest.entry, placed[manifest.entry],
                       manifest.hot_function, hot_entry, hot_size, transform)
    return _seal(img)


def _seal(img: ProgramImage) -> ProgramImage:
    return ProgramImage(img.layout, img.segments, img.call_table, img.symbols, img.entry_name,
                        img.entry, img.hot_name, img.hot_entry, img.hot_size, img.transform,
                        img.content_digest)


def _layout_key(img: ProgramImage) -> tuple:
    return (
        img.layout,
        tuple(sorted((s.name, s.address, s.is_data) for s in img.symbols)),
        img.call_table,
        tuple(s.region for s in img.segments),
        img.hot_entry,
        img.entry,
    )


def verify_layout(a: ProgramImage, b: ProgramImage) -> bool:
    """True iff symbol addresses, call table, segment bases and hot entry all match."""
    if a.layout != b.layout or a.hot_entry != b.hot_entry or a.entry != b.entry:
        return False
    if a.call_table != b.call_table:
        return False
    if [s.region for s in a.segments] != [s.region for s in b.segments]:
        return False
    return a.symbol_map == b.symbol_map


def layout_digest(img: ProgramImage) -> bytes:
    return hashlib.sha256(repr(_layout_key(img)).encode()).digest()


# -- loading -------------------------------------------------------------------

_PROT = {RegionKind.CODE: Protection.READ}


def instantiate(image: ProgramImage, costs: CostModel = DEFAULT_COSTS) -> ProcessState:
    """Map the image (zeroed data segments, no inputs) into a fresh process."""
    image.verify_integrity()
    for seg in image.segments:
        for res in RESERVED:
            if seg.region.overlaps(res):
                raise LoadError(f"segment {seg.region} overlaps reserved {res}")
    space = AddressSpace()
    for seg in image.segments:
        space.map_region(seg.region, _PROT.get(seg.region.kind, Protection.READ_WRITE), seg.data)
    stack = next(s.region for s in image.segments if s.region.kind is RegionKind.STACK)
    text = image.text
    proc = ProcessState(
        space=space,
        code=decode_code(text.region.start, text.data),
        call_table=tuple(a for _, a in image.call_table),
        costs=costs,
    )
    proc.sp = stack.end
    proc.pc = image.entry
    proc.meta.update(layout_digest=layout_digest(image), hot_entry=image.hot_entry,
                     image_digest=image.digest)
    return proc


def load(image: ProgramImage, manifest: BenchmarkManifest,
         costs: CostModel = DEFAULT_COSTS) -> ProcessState:
    proc = instantiate(image, costs)
    syms = image.symbol_map
    for name, blob in sorted(manifest.inputs.items()):
        proc.space.host_write(syms[name], blob)
    return proc


# -- serialization ---------------------------------------------------------------

def _str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


_KINDS = list(RegionKind)


def _body(img: ProgramImage) -> bytes:
    out = bytearray(MAGIC + struct.pack("<H", VERSION))
    L = img.layout
    out += struct.pack("<6Q", L.code_base, L.call_table_base, L.globals_base, L.heap_base,
                       L.stack_base, L.hot_region_capacity)
    out += struct.pack("<I", len(img.segments))
    for s in img.segments:
        out += struct.pack("<BQQI", _KINDS.index(s.region.kind), s.region.start,
                           s.region.length, len(s.data)) + s.data
    out += struct.pack("<I", len(img.call_table))
    for name, addr in img.call_table:
        out += _str(name) + struct.pack("<Q", addr)
    out += struct.pack("<I", len(img.symbols))
    for s in img.symbols:
        out += _str(s.name) + struct.pack("<QQB", s.address, s.size, int(s.is_data))
    out += _str(img.entry_name) + struct.pack("<Q", img.entry)
    out += _str(img.hot_name) + struct.pack("<QQ", img.hot_entry, img.hot_size)
    out += _str(img.transform)
    return bytes(out)


def serialize_image(img: ProgramImage) -> bytes:
    return _body(img) + img.digest


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ImageError("truncated file")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode()
        except UnicodeDecodeError:
            raise ImageError("bad string") from None


def deserialize_image(buf: bytes) -> ProgramImage:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ImageError("bad magic")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise ImageError(f"unsupported image version {version}")
    try:
        layout = LayoutSpec(*r.unpack("<6Q"))
        (nseg,) = r.unpack("<I")
        segs = []
        for _ in range(nseg):
            kind, start, length, nblob = r.unpack("<BQQI")
            if kind >= len(_KINDS):
                raise ImageError(f"bad region kind {kind}")
            segs.append(Segment(Region(start, length, _KINDS[kind]), r.take(nblob)))
        (nslot,) = r.unpack("<I")
        table = tuple((r.str(), r.unpack("<Q")[0]) for _ in range(nslot))
        (nsym,) = r.unpack("<I")
        syms = []
        for _ in range(nsym):
            name = r.str()
            addr, size, is_data = r.unpack("<QQB")
            syms.append(Symbol(name, addr, size, bool(is_data)))
        entry_name = r.str()
        (entry,) = r.unpack("<Q")
        hot_name = r.str()
        hot_entry, hot_size = r.unpack("<QQ")
        transform = r.str()
    except ValueError as e:
        raise ImageError(str(e)) from None
    body_end = r.pos
    digest = r.take(32)
    if r.pos != len(buf):
        raise ImageError("trailing bytes after digest")
    if hashlib.sha256(buf[:body_end]).digest() != digest:
        raise ImageError("image digest mismatch")
    img = ProgramImage(layout, tuple(segs), table, tuple(syms), entry_name, entry, hot_name,
                       hot_entry, hot_size, transform, digest)
    return img
