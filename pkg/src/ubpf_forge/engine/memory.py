"""Region-based address space shared by the interpreter, the image executor and helpers.

An address is ``region_id << 32 | offset``; region 0 is never allocated so
that 0 acts as NULL.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

REGION_SHIFT = 32
OFF_MASK = (1 << REGION_SHIFT) - 1
U64 = (1 << 64) - 1


class MemoryFault(Exception):
    def __init__(self, addr: int, size: int, why: str):
        self.addr, self.size, self.why = addr, size, why
        super().__init__(f"fault at {addr:#x} size {size}: {why}")


@dataclass
class Region:
    data: bytearray
    name: str
    writable: bool = True


@dataclass
class Memory:
    regions: dict[int, Region] = field(default_factory=dict)
    _next: int = 1
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def alloc(self, size: int, name: str = "", writable: bool = True,
              init: bytes | None = None) -> int:
        data = bytearray(init) if init is not None else bytearray(size)
        with self._lock:
            rid = self._next
            self._next += 1
            self.regions[rid] = Region(data, name, writable)
        return rid << REGION_SHIFT

    def free(self, addr: int) -> None:
        with self._lock:
            self.regions.pop(addr >> REGION_SHIFT, None)

    def region(self, addr: int) -> Region | None:
        return self.regions.get(addr >> REGION_SHIFT)

    def _resolve(self, addr: int, size: int, write: bool) -> tuple[bytearray, int]:
        addr &= U64
        r = self.regions.get(addr >> REGION_SHIFT)
        if r is None:
            raise MemoryFault(addr, size, "unmapped")
        off = addr & OFF_MASK
        if off + size > len(r.data):
            raise MemoryFault(addr, size, f"outside {r.name or 'region'} of {len(r.data)} bytes")
        if write and not r.writable:
            raise MemoryFault(addr, size, f"{r.name or 'region'} is read-only")
        return r.data, off

    def load(self, addr: int, size: int) -> int:
        data, off = self._resolve(addr, size, False)
        return int.from_bytes(data[off:off + size], "little")

    def store(self, addr: int, size: int, value: int) -> None:
        data, off = self._resolve(addr, size, True)
        data[off:off + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")

    def read_bytes(self, addr: int, size: int) -> bytes:
        data, off = self._resolve(addr, size, False)
        return bytes(data[off:off + size])

    def write_bytes(self, addr: int, payload: bytes) -> None:
        data, off = self._resolve(addr, len(payload), True)
        data[off:off + len(payload)] = payload


__all__ = ["Memory", "MemoryFault", "Region", "REGION_SHIFT", "OFF_MASK", "U64"]
