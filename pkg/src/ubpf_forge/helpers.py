"""Helper contracts: argument kinds, return kinds and resource behaviour.

The verifier checks calls against these specs; the runtime provides the
implementations under the same ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto

from .isa import HELPER_NAMES

__all__ = ["Arg", "Ret", "HelperSpec", "HELPERS", "helper_by_name",
           "MAP_LOOKUP", "MAP_UPDATE", "MAP_DELETE", "TRACE_EMIT", "SPIN_LOCK",
           "SPIN_UNLOCK", "ACQUIRE_REF", "RELEASE_REF", "ITER_NEW", "ITER_NEXT",
           "ITER_DESTROY", "ITER_SIZE", "OBJ_SIZE", "LOCK_SIZE"]

MAP_LOOKUP, MAP_UPDATE, MAP_DELETE, TRACE_EMIT = 1, 2, 3, 4
SPIN_LOCK, SPIN_UNLOCK, ACQUIRE_REF, RELEASE_REF = 5, 6, 7, 8
ITER_NEW, ITER_NEXT, ITER_DESTROY = 9, 10, 11

ITER_SIZE = 16   # stack bytes an iterator occupies: current and end, both s64
OBJ_SIZE = 8     # bytes readable through an acquired test object
LOCK_SIZE = 4    # lock word at offset 0 of a map value


class Arg(Enum):
    NONE = auto()
    ANYTHING = auto()         # any initialized scalar
    CONST_MAP_PTR = auto()
    PTR_TO_MAP_KEY = auto()   # readable memory of the map's key_size
    PTR_TO_MAP_VALUE = auto() # readable memory of the map's value_size
    PTR_TO_MEM = auto()       # readable memory, size in the next argument
    CONST_SIZE = auto()       # bounded positive scalar, precise
    PTR_TO_LOCK = auto()      # non-null map value pointer at offset 0
    PTR_TO_REF_OBJ = auto()   # object holding an acquired reference
    PTR_TO_ITER = auto()      # 8-byte aligned stack slot of ITER_SIZE bytes


class Ret(Enum):
    VOID = auto()
    INTEGER = auto()
    MAP_VALUE_OR_NULL = auto()
    REF_OBJ = auto()
    ITER_NEXT = auto()        # 1 with an item, 0 once drained


@dataclass(frozen=True)
class HelperSpec:
    id: int
    name: str
    args: tuple[Arg, ...]
    ret: Ret
    ret_range: tuple[int, int] | None = None   # signed range of an INTEGER result
    acquires: bool = False
    releases: bool = False
    inline_template: bool = False              # rewrite pass may inline on array maps
    map_op: bool = field(default=False)

    @property
    def nargs(self) -> int:
        return len(self.args)


HELPERS: dict[int, HelperSpec] = {s.id: s for s in (
    HelperSpec(MAP_LOOKUP, "map_lookup_elem", (Arg.CONST_MAP_PTR, Arg.PTR_TO_MAP_KEY),
               Ret.MAP_VALUE_OR_NULL, inline_template=True, map_op=True),
    HelperSpec(MAP_UPDATE, "map_update_elem",
               (Arg.CONST_MAP_PTR, Arg.PTR_TO_MAP_KEY, Arg.PTR_TO_MAP_VALUE, Arg.ANYTHING),
               Ret.INTEGER, ret_range=(-1, 0), map_op=True),
    HelperSpec(MAP_DELETE, "map_delete_elem", (Arg.CONST_MAP_PTR, Arg.PTR_TO_MAP_KEY),
               Ret.INTEGER, ret_range=(-1, 0), map_op=True),
    HelperSpec(TRACE_EMIT, "trace_emit", (Arg.PTR_TO_MEM, Arg.CONST_SIZE),
               Ret.INTEGER, ret_range=(0, 0)),
    HelperSpec(SPIN_LOCK, "spin_lock", (Arg.PTR_TO_LOCK,), Ret.VOID),
    HelperSpec(SPIN_UNLOCK, "spin_unlock", (Arg.PTR_TO_LOCK,), Ret.VOID),
    HelperSpec(ACQUIRE_REF, "acquire_test_ref", (), Ret.REF_OBJ, acquires=True),
    HelperSpec(RELEASE_REF, "release_test_ref", (Arg.PTR_TO_REF_OBJ,), Ret.VOID, releases=True),
    HelperSpec(ITER_NEW, "iter_num_new", (Arg.PTR_TO_ITER, Arg.ANYTHING, Arg.ANYTHING),
               Ret.INTEGER, ret_range=(0, 0)),
    HelperSpec(ITER_NEXT, "iter_num_next", (Arg.PTR_TO_ITER,), Ret.ITER_NEXT),
    HelperSpec(ITER_DESTROY, "iter_num_destroy", (Arg.PTR_TO_ITER,), Ret.VOID),
)}

assert {k: v.name for k, v in HELPERS.items()} == HELPER_NAMES


def helper_by_name(name: str) -> HelperSpec:
    for spec in HELPERS.values():
        if spec.name == name:
            return spec
    raise KeyError(name)
