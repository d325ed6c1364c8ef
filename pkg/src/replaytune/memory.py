"""Paged virtual memory with refcounted frames, COW and page protection."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

PAGE_SIZE = 4096
PAGE_SHIFT = 12
PAGE_MASK = PAGE_SIZE - 1


class Protection(IntEnum):
    NONE = 0
    READ = 1
    READ_WRITE = 2


class RegionKind(Enum):
    CODE = "code"
    GLOBALS = "globals"
    HEAP = "heap"
    STACK = "stack"
    SHARED_LOG = "shared_log"


DATA_KINDS = frozenset({RegionKind.GLOBALS, RegionKind.HEAP, RegionKind.STACK})


class Access(Enum):
    READ = "read"
    WRITE = "write"


class FaultKind(Enum):
    PROTECTION = "protection"
    UNMAPPED = "unmapped"


@dataclass(frozen=True)
class Fault:
    vaddr: int
    access: Access
    kind: FaultKind

    @property
    def vpn(self) -> int:
        return self.vaddr >> PAGE_SHIFT


class FaultError(Exception):
    """Internal signal carrying a Fault out of the slow access path."""

    def __init__(self, fault: Fault):
        super().__init__(fault)
        self.fault = fault


class MappingError(Exception):
    """Host-level misuse: unmapped ranges, overlapping regions."""


@dataclass(frozen=True, order=True)
class Region:
    start: int
    length: int
    kind: RegionKind

    def __post_init__(self):
        if self.start & PAGE_MASK or self.length & PAGE_MASK or self.length <= 0:
            raise ValueError(f"region {self.start:#x}+{self.length:#x} is not page aligned")

    @property
    def end(self) -> int:
        return self.start + self.length

    @property
    def pages(self) -> range:
        return range(self.start >> PAGE_SHIFT, self.end >> PAGE_SHIFT)

    def overlaps(self, other: "Region") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, addr: int, length: int = 1) -> bool:
        return self.start <= addr and addr + length <= self.end


class Frame:
    __slots__ = ("id", "data", "refcount")

    def __init__(self, fid: int, data: bytearray):
        self.id = fid
        self.data = data
        self.refcount = 0


class FrameStore:
    """Physical frames shared by a process and every process forked from it."""

    def __init__(self):
        self.frames: dict[int, Frame] = {}
        self._next = 0
        self._zero: Frame | None = None
        self.allocations = 0

    def alloc(self, data: bytes | bytearray | None = None) -> Frame:
        buf = bytearray(PAGE_SIZE) if data is None else bytearray(data)
        if len(buf) != PAGE_SIZE:
            raise ValueError("frames hold exactly one page")
        f = Frame(self._next, buf)
        self._next += 1
        self.frames[f.id] = f
        self.allocations += 1
        return f

    def zero_frame(self) -> Frame:
        """Shared all-zero frame; only ever mapped copy-on-write."""
        if self._zero is None or self._zero.id not in self.frames:
            self._zero = self.alloc()
        return self._zero

    def incref(self, f: Frame) -> None:
        f.refcount += 1

    def decref(self, f: Frame) -> None:
        f.refcount -= 1
        if f.refcount == 0:
            del self.frames[f.id]
        elif f.refcount < 0:
            raise AssertionError(f"frame {f.id} refcount underflow")

    def __len__(self) -> int:
        return len(self.frames)


class PageTableEntry:
    __slots__ = ("vpn", "frame", "prot", "cow", "shared")

    def __init__(self, vpn: int, frame: Frame, prot: Protection, cow: bool = False, shared: bool = False):
        self.vpn = vpn
        self.frame = frame
        self.prot = prot
        self.cow = cow
        self.shared = shared

    def __repr__(self) -> str:
        return (f"PTE(vpn={self.vpn:#x}, frame={self.frame.id}, prot={self.prot.name}, "
                f"cow={self.cow}, shared={self.shared})")


class AddressSpace:
    """Regions plus a page table over a (possibly shared) FrameStore.

    ``rcache``/``wcache`` map vpn -> frame buffer for pages that may be read
    (resp. written without a COW break) by guest code.  They are the VM's
    fast path and are invalidated on every page table change.
    """

    def __init__(self, store: FrameStore | None = None):
        self.store = store if store is not None else FrameStore()
        self.regions: list[Region] = []
        self.ptes: dict[int, PageTableEntry] = {}
        self.rcache: dict[int, bytearray] = {}
        self.wcache: dict[int, bytearray] = {}

    # -- mapping -------------------------------------------------------------

    def map_region(self, region: Region, prot: Protection = Protection.READ_WRITE,
                   data: bytes = b"", shared: bool = False) -> None:
        for r in self.regions:
            if r.overlaps(region):
                raise MappingError(f"region {region} overlaps {r}")
        if len(data) > region.length:
            raise MappingError("initial bytes exceed region length")
        self.regions.append(region)
        self.regions.sort()
        for i, vpn in enumerate(region.pages):
            chunk = data[i * PAGE_SIZE:(i + 1) * PAGE_SIZE]
            if shared or chunk.strip(b"\x00"):
                frame = self.store.alloc(chunk.ljust(PAGE_SIZE, b"\x00"))
                cow = False
            else:
                frame = self.store.zero_frame()
                cow = True
            self.store.incref(frame)
            self.ptes[vpn] = PageTableEntry(vpn, frame, prot, cow=cow, shared=shared)

    def unmap_region(self, region: Region) -> None:
        self.regions.remove(region)
        for vpn in region.pages:
            pte = self.ptes.pop(vpn)
            self.store.decref(pte.frame)
            self.rcache.pop(vpn, None)
            self.wcache.pop(vpn, None)

    def grow_region(self, region: Region, extra_pages: int,
                    prot: Protection = Protection.READ_WRITE) -> Region:
        """Extend ``region`` upward by ``extra_pages`` zero pages."""
        grown = Region(region.start, region.length + extra_pages * PAGE_SIZE, region.kind)
        tail = Region(region.end, extra_pages * PAGE_SIZE, region.kind)
        for r in self.regions:
            if r != region and r.overlaps(tail):
                raise MappingError(f"cannot grow {region}: collides with {r}")
        idx = self.regions.index(region)
        self.regions[idx] = grown
        zero = self.store.zero_frame()
        for vpn in tail.pages:
            self.store.incref(zero)
            self.ptes[vpn] = PageTableEntry(vpn, zero, prot, cow=True)
        return grown

    def region_of(self, addr: int) -> Region | None:
        for r in self.regions:
            if r.start <= addr < r.end:
                return r
        return None

    def regions_of_kind(self, *kinds: RegionKind) -> list[Region]:
        return [r for r in self.regions if r.kind in kinds]

    @property
    def mapped_pages(self) -> int:
        return len(self.ptes)

    # -- protection ----------------------------------------------------------

    def set_protection(self, start: int, length: int, prot: Protection) -> None:
        first = start >> PAGE_SHIFT
        last = (start + length - 1) >> PAGE_SHIFT
        missing = [v for v in range(first, last + 1) if v not in self.ptes]
        if missing:
            raise MappingError(f"set_protection on unmapped page {missing[0]:#x}")
        for vpn in range(first, last + 1):
            self.set_page_protection(vpn, prot)

    def set_page_protection(self, vpn: int, prot: Protection) -> None:
        pte = self.ptes.get(vpn)
        if pte is None:
            raise MappingError(f"set_protection on unmapped page {vpn:#x}")
        pte.prot = prot
        self.rcache.pop(vpn, None)
        self.wcache.pop(vpn, None)

    # -- guest access slow path ----------------------------------------------

    def _page_for(self, vpn: int, vaddr: int, write: bool) -> bytearray:
        pte = self.ptes.get(vpn)
        access = Access.WRITE if write else Access.READ
        if pte is None:
            raise FaultError(Fault(vaddr, access, FaultKind.UNMAPPED))
        need = Protection.READ_WRITE if write else Protection.READ
        if pte.prot < need:
            raise FaultError(Fault(vaddr, access, FaultKind.PROTECTION))
        if write:
            if pte.cow:
                self._break_cow(pte)
            self.wcache[vpn] = pte.frame.data
        self.rcache[vpn] = pte.frame.data
        return pte.frame.data

    def _check(self, vaddr: int, n: int, write: bool) -> None:
        """Raise the first fault an n-byte access would take, touching nothing."""
        access = Access.WRITE if write else Access.READ
        need = Protection.READ_WRITE if write else Protection.READ
        for vpn in range(vaddr >> PAGE_SHIFT, ((vaddr + n - 1) >> PAGE_SHIFT) + 1):
            pte = self.ptes.get(vpn)
            addr = max(vaddr, vpn << PAGE_SHIFT)
            if pte is None:
                raise FaultError(Fault(addr, access, FaultKind.UNMAPPED))
            if pte.prot < need:
                raise FaultError(Fault(addr, access, FaultKind.PROTECTION))

    def load_word(self, vaddr: int) -> int:
        self._check(vaddr, 8, False)
        return int.from_bytes(self._raw_read(vaddr, 8, guest=True), "little")

    def store_word(self, vaddr: int, value: int) -> None:
        self._check(vaddr, 8, True)
        self._raw_write(vaddr, value.to_bytes(8, "little"), guest=True)

    # -- host access (bypasses protection) ------------------------------------

    def _raw_read(self, vaddr: int, n: int, guest: bool = False) -> bytes:
        out = bytearray()
        addr = vaddr
        end = vaddr + n
        while addr < end:
            vpn = addr >> PAGE_SHIFT
            off = addr & PAGE_MASK
            take = min(PAGE_SIZE - off, end - addr)
            if guest:
                page = self._page_for(vpn, addr, False)
            else:
                pte = self.ptes.get(vpn)
                if pte is None:
                    raise MappingError(f"host read of unmapped address {addr:#x}")
                page = pte.frame.data
            out += page[off:off + take]
            addr += take
        return bytes(out)

    def _raw_write(self, vaddr: int, data: bytes, guest: bool = False) -> None:
        if not guest:
            for vpn in range(vaddr >> PAGE_SHIFT, ((vaddr + max(len(data), 1) - 1) >> PAGE_SHIFT) + 1):
                if vpn not in self.ptes:
                    raise MappingError(f"host write to unmapped page {vpn:#x}")
        addr = vaddr
        pos = 0
        while pos < len(data):
            vpn = addr >> PAGE_SHIFT
            off = addr & PAGE_MASK
            take = min(PAGE_SIZE - off, len(data) - pos)
            if guest:
                page = self._page_for(vpn, addr, True)
            else:
                pte = self.ptes[vpn]
                if pte.cow:
                    self._break_cow(pte)
                page = pte.frame.data
            page[off:off + take] = data[pos:pos + take]
            addr += take
            pos += take

    def host_read(self, vaddr: int, n: int) -> bytes:
        return self._raw_read(vaddr, n)

    def host_write(self, vaddr: int, data: bytes) -> None:
        self._raw_write(vaddr, bytes(data))

    def _break_cow(self, pte: PageTableEntry) -> None:
        old = pte.frame
        fresh = self.store.alloc(old.data)
        self.store.incref(fresh)
        self.store.decref(old)
        pte.frame = fresh
        pte.cow = False
        self.rcache.pop(pte.vpn, None)
        self.wcache.pop(pte.vpn, None)

    # -- fork / teardown -------------------------------------------------------

    def fork(self) -> "AddressSpace":
        """COW-duplicate this space; shared entries stay shared."""
        child = AddressSpace(self.store)
        child.regions = list(self.regions)
        incref = self.store.incref
        for vpn, pte in self.ptes.items():
            if pte.shared:
                child.ptes[vpn] = PageTableEntry(vpn, pte.frame, pte.prot, cow=False, shared=True)
            else:
                pte.cow = True
                child.ptes[vpn] = PageTableEntry(vpn, pte.frame, pte.prot, cow=True)
            incref(pte.frame)
        # every private page is now COW; nothing may be written through the cache
        for vpn in [v for v in self.wcache if not self.ptes[v].shared]:
            del self.wcache[vpn]
        return child

    def release(self) -> None:
        for pte in self.ptes.values():
            self.store.decref(pte.frame)
        self.ptes.clear()
        self.regions.clear()
        self.rcache.clear()
        self.wcache.clear()

    def check_refcounts(self, *others: "AddressSpace") -> None:
        """Assert refcount == number of referencing PTEs across spaces sharing the store."""
        counts: dict[int, int] = {}
        for space in (self, *others):
            if space.store is not self.store:
                raise ValueError("spaces do not share a frame store")
            for pte in space.ptes.values():
                counts[pte.frame.id] = counts.get(pte.frame.id, 0) + 1
        for fid, frame in self.store.frames.items():
            if frame.refcount != counts.get(fid, 0):
                raise AssertionError(
                    f"frame {fid}: refcount {frame.refcount} != {counts.get(fid, 0)} references")
        for fid in counts:
            if fid not in self.store.frames:
                raise AssertionError(f"PTE references freed frame {fid}")

    def snapshot_bytes(self, kinds=DATA_KINDS) -> dict[int, bytes]:
        """Eager copy of every page in regions of ``kinds`` (test oracle helper)."""
        out = {}
        for r in self.regions:
            if r.kind in kinds:
                for vpn in r.pages:
                    out[vpn] = bytes(self.ptes[vpn].frame.data)
        return out
