"""Array and hash maps backed by engine memory regions."""

from __future__ import annotations

import threading
from dataclasses import dataclass

from ..engine.memory import Memory

MAP_TYPES = ("array", "hash")


class InvalidDef(ValueError):
    pass


@dataclass(frozen=True)
class MapDef:
    map_type: str
    key_size: int
    value_size: int
    max_entries: int

    def __post_init__(self):
        if self.map_type not in MAP_TYPES:
            raise InvalidDef(f"unknown map type {self.map_type!r}")
        if min(self.key_size, self.value_size, self.max_entries) <= 0:
            raise InvalidDef("key_size, value_size and max_entries must be positive")
        if self.map_type == "array" and self.key_size != 4:
            raise InvalidDef("array maps use 4-byte keys")

    def to_json(self) -> dict:
        return {"map_type": self.map_type, "key_size": self.key_size,
                "value_size": self.value_size, "max_entries": self.max_entries}


class MapInstance:
    """Common interface; helper calls on one instance are serialized."""

    def __init__(self, d: MapDef, mem: Memory, name: str = ""):
        self.defn = d
        self.mem = mem
        self.name = name
        self.lock = threading.RLock()
        # zero-sized region: a handle programs can pass around but never dereference
        self.handle = mem.alloc(0, f"map:{name}")

    def _key(self, key: bytes) -> bytes:
        if len(key) != self.defn.key_size:
            raise ValueError(f"key must be {self.defn.key_size} bytes")
        return bytes(key)

    def _value(self, value: bytes) -> bytes:
        if len(value) != self.defn.value_size:
            raise ValueError(f"value must be {self.defn.value_size} bytes")
        return bytes(value)

    def destroy(self) -> None:
        self.mem.free(self.handle)


class ArrayMap(MapInstance):
    def __init__(self, d: MapDef, mem: Memory, name: str = ""):
        super().__init__(d, mem, name)
        self.storage = mem.alloc(d.max_entries * d.value_size, f"array:{name}")

    def _index(self, key: bytes) -> int | None:
        i = int.from_bytes(self._key(key), "little")
        return i if i < self.defn.max_entries else None

    def lookup_addr(self, key: bytes) -> int:
        with self.lock:
            i = self._index(key)
            return 0 if i is None else self.storage + i * self.defn.value_size

    def update(self, key: bytes, value: bytes, flags: int = 0) -> int:
        with self.lock:
            i = self._index(key)
            if i is None:
                return -1
            self.mem.write_bytes(self.storage + i * self.defn.value_size, self._value(value))
            return 0

    def delete(self, key: bytes) -> int:
        return -1   # array slots always exist

    def lookup(self, key: bytes) -> bytes | None:
        a = self.lookup_addr(key)
        return None if a == 0 else self.mem.read_bytes(a, self.defn.value_size)

    def dump(self) -> dict[bytes, bytes]:
        vs = self.defn.value_size
        raw = self.mem.read_bytes(self.storage, self.defn.max_entries * vs)
        return {i.to_bytes(4, "little"): raw[i * vs:(i + 1) * vs]
                for i in range(self.defn.max_entries)}

    def destroy(self) -> None:
        super().destroy()
        self.mem.free(self.storage)


class HashMap(MapInstance):
    """Each value lives in its own region, so a deleted entry's address faults."""

    def __init__(self, d: MapDef, mem: Memory, name: str = ""):
        super().__init__(d, mem, name)
        self.entries: dict[bytes, int] = {}

    def lookup_addr(self, key: bytes) -> int:
        with self.lock:
            return self.entries.get(self._key(key), 0)

    def update(self, key: bytes, value: bytes, flags: int = 0) -> int:
        with self.lock:
            k, v = self._key(key), self._value(value)
            addr = self.entries.get(k)
            if addr is None:
                if len(self.entries) >= self.defn.max_entries:
                    return -1
                addr = self.mem.alloc(self.defn.value_size, f"hash:{self.name}")
                self.entries[k] = addr
            self.mem.write_bytes(addr, v)
            return 0

    def delete(self, key: bytes) -> int:
        with self.lock:
            addr = self.entries.pop(self._key(key), None)
            if addr is None:
                return -1
            self.mem.free(addr)
            return 0

    def lookup(self, key: bytes) -> bytes | None:
        a = self.lookup_addr(key)
        return None if a == 0 else self.mem.read_bytes(a, self.defn.value_size)

    def dump(self) -> dict[bytes, bytes]:
        with self.lock:
            return {k: self.mem.read_bytes(a, self.defn.value_size)
                    for k, a in sorted(self.entries.items())}

    def destroy(self) -> None:
        super().destroy()
        for a in self.entries.values():
            self.mem.free(a)
        self.entries.clear()


def create_map(d: MapDef, mem: Memory, name: str = "") -> MapInstance:
    return (ArrayMap if d.map_type == "array" else HashMap)(d, mem, name)


__all__ = ["MapDef", "MapInstance", "ArrayMap", "HashMap", "InvalidDef", "create_map"]
