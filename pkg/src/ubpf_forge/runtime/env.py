"""Helper implementations, registered under the same ids the verifier checks."""

from __future__ import annotations

from typing import Sequence

from ..absdom import to_signed
from ..engine.context import EngineError, Env, ExecContext
from ..engine.memory import U64, Memory
from ..helpers import (ACQUIRE_REF, ITER_DESTROY, ITER_NEW, ITER_NEXT, MAP_DELETE, MAP_LOOKUP,
                       MAP_UPDATE, OBJ_SIZE, RELEASE_REF, SPIN_LOCK, SPIN_UNLOCK, TRACE_EMIT)
from .maps import MapInstance

NEG1 = U64   # -1 as a register value


class RuntimeEnv(Env):
    """Binds a program's map indices to live map instances."""

    def __init__(self, mem: Memory, maps: Sequence[MapInstance] = ()):
        super().__init__(mem)
        self.maps = list(maps)
        self._by_handle = {m.handle: m for m in self.maps}
        self.objects: set[int] = set()
        self._obj_seq = 0

    def map_handle(self, map_index: int) -> int:
        return self.maps[map_index].handle

    def map_value_base(self, map_index: int) -> int:
        return self.maps[map_index].storage

    def _map(self, handle: int) -> MapInstance:
        m = self._by_handle.get(handle)
        if m is None:
            raise EngineError(f"{handle:#x} is not a map handle")
        return m

    def call_helper(self, hid: int, args: list[int], ctx: ExecContext) -> int:
        if hid in (MAP_LOOKUP, MAP_UPDATE, MAP_DELETE):
            return self._map_op(self._map(args[0]), hid, args)
        mem = self.mem
        if hid == TRACE_EMIT:
            self.trace.append(mem.read_bytes(args[0], args[1]))
            return 0
        if hid == SPIN_LOCK:
            if mem.load(args[0], 4):
                raise EngineError("spin_lock on a held lock")
            mem.store(args[0], 4, 1)
            return 0
        if hid == SPIN_UNLOCK:
            mem.store(args[0], 4, 0)
            return 0
        if hid == ACQUIRE_REF:
            self._obj_seq += 1
            addr = mem.alloc(OBJ_SIZE, "test_ref", init=self._obj_seq.to_bytes(OBJ_SIZE, "little"))
            self.objects.add(addr)
            return addr
        if hid == RELEASE_REF:
            self.objects.discard(args[0])
            mem.free(args[0])
            return 0
        if hid == ITER_NEW:
            mem.store(args[0], 8, args[1])
            mem.store(args[0] + 8, 8, args[2])
            return 0
        if hid == ITER_NEXT:
            cur, end = mem.load(args[0], 8), mem.load(args[0] + 8, 8)
            if to_signed(cur) < to_signed(end):
                mem.store(args[0], 8, cur + 1)
                return 1
            return 0
        if hid == ITER_DESTROY:
            mem.store(args[0], 8, 0)
            mem.store(args[0] + 8, 8, 0)
            return 0
        raise EngineError(f"unknown helper {hid}")

    def call_direct(self, map_index: int, hid: int, args: list[int], ctx: ExecContext) -> int:
        return self._map_op(self.maps[map_index], hid, args)

    def _map_op(self, m: MapInstance, hid: int, args: list[int]) -> int:
        d = m.defn
        key = self.mem.read_bytes(args[1], d.key_size)
        if hid == MAP_LOOKUP:
            return m.lookup_addr(key)
        if hid == MAP_UPDATE:
            r = m.update(key, self.mem.read_bytes(args[2], d.value_size), args[3])
        else:
            r = m.delete(key)
        return r & U64


__all__ = ["RuntimeEnv"]
