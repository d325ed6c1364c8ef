"""Page-level capture of one hot-function invocation.

The protocol: enumerate the parent's regions, map a shared log, fork a
suspended child, revoke access to every data page, and log each page the
parent faults on.  When the hot function returns, the child writes out the
pre-invocation contents of exactly the logged pages, which copy-on-write
has kept intact in its own address space.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

from .image import SHARED_LOG_BASE, SHARED_LOG_PAGES
from .isa import NUM_REGS
from .memory import (PAGE_SHIFT, PAGE_SIZE, Fault, FaultKind, Protection, Region, RegionKind)
from .vm import ProcessState, RegisterFile, Status, VMError, resume, vm_fork

MAGIC = b"HRSN"
VERSION = 1
LOG_CAPACITY = (SHARED_LOG_PAGES * PAGE_SIZE - 8) // 8

_CAPTURED_KINDS = (RegionKind.GLOBALS, RegionKind.HEAP, RegionKind.STACK)


class CaptureError(Exception):
    pass


class CaptureIOError(CaptureError):
    pass


class SnapshotError(Exception):
    pass


@dataclass
class CaptureStats:
    pages_captured: int = 0
    fault_count: int = 0
    full_state_bytes: int = 0
    snapshot_bytes: int = 0
    capture_overhead_cycles: int = 0
    vma_cycles: int = 0
    fork_cycles: int = 0
    fault_cycles: int = 0


@dataclass(frozen=True)
class Snapshot:
    benchmark: str
    hot_function: str
    registers: RegisterFile
    pages: tuple[tuple[int, bytes], ...]
    layout_digest: bytes

    def __post_init__(self):
        vpns = [v for v, _ in self.pages]
        if vpns != sorted(set(vpns)):
            raise SnapshotError("snapshot pages must be sorted by vpn and duplicate-free")
        if any(len(b) != PAGE_SIZE for _, b in self.pages):
            raise SnapshotError("snapshot page is not 4096 bytes")

    @property
    def vpns(self) -> list[int]:
        return [v for v, _ in self.pages]

    def to_bytes(self) -> bytes:
        return serialize_snapshot(self)


# -- region enumeration ---------------------------------------------------------

def enumerate_vmas(proc: ProcessState) -> list[Region]:
    """Sorted, disjoint list of the process's regions; charges the parse cost."""
    regions = sorted(proc.space.regions)
    proc.cycles += proc.costs.vma_cost(len(regions))
    return regions


# -- the shared log ----------------------------------------------------------------

class SharedLog:
    """Count plus vpn array in a region shared between parent and child."""

    region = Region(SHARED_LOG_BASE, SHARED_LOG_PAGES * PAGE_SIZE, RegionKind.SHARED_LOG)

    def __init__(self, proc: ProcessState):
        self.space = proc.space

    @classmethod
    def map_into(cls, proc: ProcessState) -> "SharedLog":
        proc.space.map_region(cls.region, Protection.READ_WRITE, shared=True)
        return cls(proc)

    def count(self) -> int:
        return int.from_bytes(self.space.host_read(SHARED_LOG_BASE, 8), "little")

    def append(self, vpn: int) -> None:
        n = self.count()
        if n >= LOG_CAPACITY:
            raise CaptureError(f"shared log full ({LOG_CAPACITY} pages); is the hot function "
                               "declared correctly?")
        self.space.host_write(SHARED_LOG_BASE + 8 + 8 * n, vpn.to_bytes(8, "little"))
        self.space.host_write(SHARED_LOG_BASE, (n + 1).to_bytes(8, "little"))

    def entries(self) -> list[int]:
        n = self.count()
        raw = self.space.host_read(SHARED_LOG_BASE + 8, 8 * n)
        return list(struct.unpack(f"<{n}Q", raw))


# -- session ---------------------------------------------------------------------

@dataclass(eq=False)
class CaptureSession:
    parent: ProcessState
    child: ProcessState
    log: SharedLog
    entry_registers: RegisterFile
    benchmark: str
    hot_function: str
    layout_digest: bytes
    revoked: dict[int, Protection] = field(default_factory=dict)
    accessed: list[int] = field(default_factory=list)
    stats: CaptureStats = field(default_factory=CaptureStats)
    reusable: bool = True
    _seen: set[int] = field(default_factory=set)

    def on_fault(self, proc: ProcessState, fault: Fault) -> bool:
        """Fault hook: log the page, restore its rights, let the access retry."""
        if fault.kind is not FaultKind.PROTECTION:
            return False
        vpn = fault.vpn
        prot = self.revoked.get(vpn)
        if prot is None or vpn in self._seen:
            return False
        self.log.append(vpn)
        self._seen.add(vpn)
        self.accessed.append(vpn)
        proc.space.set_page_protection(vpn, prot)
        self.stats.fault_count += 1
        self.stats.fault_cycles += proc.costs.fault
        return True

    def finalize(self, sink=None) -> tuple[Snapshot, CaptureStats]:
        """Have the child persist the logged pages; tear down the session.

        ``sink`` may be a path, a binary file object, or None.
        """
        if not self.reusable:
            raise CaptureError("capture session already finalized")
        self.reusable = False
        parent, child = self.parent, self.child
        try:
            resume(child)
            vpns = sorted(SharedLog(child).entries())
            pages = tuple((v, child.space.host_read(v << PAGE_SHIFT, PAGE_SIZE)) for v in vpns)
        finally:
            for vpn, prot in self.revoked.items():
                if vpn not in self._seen:
                    parent.space.set_page_protection(vpn, prot)
            parent.fault_hook = None
            parent.meta.pop("capture_session", None)
            child.space.release()
            child.halt()
            parent.space.unmap_region(SharedLog.region)
        snap = Snapshot(self.benchmark, self.hot_function, self.entry_registers, pages,
                        self.layout_digest)
        blob = serialize_snapshot(snap)
        st = self.stats
        st.pages_captured = len(pages)
        st.snapshot_bytes = len(blob)
        st.capture_overhead_cycles = st.vma_cycles + st.fork_cycles + st.fault_cycles
        if sink is not None:
            _write(sink, blob)
        return snap, st


def _write(sink, blob: bytes) -> None:
    try:
        if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
            with open(sink, "wb") as f:
                f.write(blob)
        else:
            sink.write(blob)
    except OSError as e:
        raise CaptureIOError(f"cannot write snapshot: {e}") from e


def begin_capture(proc: ProcessState, hot_entry: int, benchmark: str = "",
                  hot_function: str = "") -> CaptureSession:
    """Arm capture at the hot function's entry.

    The child is forked Suspended, every Globals/Heap page and every Stack
    page at or above the entry sp page loses its access rights, and a fault
    hook logs first touches.
    """
    if proc.pc != hot_entry:
        raise CaptureError(f"pc {proc.pc:#x} is not at the hot entry {hot_entry:#x}")
    if proc.status is not Status.RUNNING:
        raise CaptureError(f"cannot capture a {proc.status.value} process")
    if "capture_session" in proc.meta:
        raise CaptureError("a capture is already in progress on this process")
    if proc.meta.get("capture_done"):
        raise CaptureError("this run was already captured (only the first invocation is)")
    entry = proc.registers
    before = proc.cycles
    regions = enumerate_vmas(proc)
    vma_cycles = proc.cycles - before
    log = SharedLog.map_into(proc)
    before = proc.cycles
    try:
        child = vm_fork(proc)
    except VMError as e:
        proc.space.unmap_region(SharedLog.region)
        raise CaptureError(str(e)) from e
    fork_cycles = proc.cycles - before

    sp_page = entry.sp >> PAGE_SHIFT
    revoked: dict[int, Protection] = {}
    full = 0
    for r in regions:
        if r.kind not in _CAPTURED_KINDS:
            continue
        full += r.length
        for vpn in r.pages:
            if r.kind is RegionKind.STACK and vpn < sp_page:
                continue
            revoked[vpn] = proc.space.ptes[vpn].prot
            proc.space.set_page_protection(vpn, Protection.NONE)

    session = CaptureSession(
        parent=proc, child=child, log=log, entry_registers=entry,
        benchmark=benchmark, hot_function=hot_function,
        layout_digest=proc.meta.get("layout_digest", b""), revoked=revoked,
        stats=CaptureStats(full_state_bytes=full, vma_cycles=vma_cycles, fork_cycles=fork_cycles),
    )
    proc.fault_hook = session.on_fault
    proc.meta["capture_session"] = session
    return session


# -- snapshot format ---------------------------------------------------------------

def _str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def serialize_snapshot(snap: Snapshot) -> bytes:
    rf = snap.registers
    out = bytearray(MAGIC + struct.pack("<H", VERSION))
    out += _str(snap.benchmark) + _str(snap.hot_function)
    out += struct.pack(f"<{NUM_REGS}Q3Q", *rf.r, rf.pc, rf.sp, rf.cycles)
    out += struct.pack("<I", len(snap.pages))
    for vpn, data in snap.pages:
        out += struct.pack("<Q", vpn) + data
    if len(snap.layout_digest) != 32:
        raise SnapshotError("layout digest must be 32 bytes")
    out += snap.layout_digest
    out += hashlib.sha256(out).digest()
    return bytes(out)


def deserialize_snapshot(buf: bytes) -> Snapshot:
    if len(buf) < 6 + 32 or buf[:4] != MAGIC:
        raise SnapshotError("not a snapshot (bad magic)")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SnapshotError("snapshot digest mismatch (corrupted file)")
    f = io.BytesIO(body)

    def take(n: int) -> bytes:
        b = f.read(n)
        if len(b) != n:
            raise SnapshotError("truncated snapshot")
        return b

    def unpack(fmt: str):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    take(4)
    (version,) = unpack("<H")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    names = []
    for _ in range(2):
        (n,) = unpack("<H")
        names.append(take(n).decode())
    vals = unpack(f"<{NUM_REGS}Q3Q")
    rf = RegisterFile(tuple(vals[:NUM_REGS]), vals[NUM_REGS], vals[NUM_REGS + 1],
                      vals[NUM_REGS + 2])
    (count,) = unpack("<I")
    pages = []
    for _ in range(count):
        (vpn,) = unpack("<Q")
        pages.append((vpn, take(PAGE_SIZE)))
    layout = take(32)
    if f.read(1):
        raise SnapshotError("trailing bytes in snapshot")
    return Snapshot(names[0], names[1], rf, tuple(pages), layout)
