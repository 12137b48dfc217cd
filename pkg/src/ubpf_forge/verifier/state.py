"""Verifier state: registers, stack bytes, call frames and path facts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from ..absdom import ScalarAbs, abs_const, abs_unknown

__all__ = ["RegType", "RegState", "StackState", "Frame", "PathState", "VerifierState",
           "Checkpoint", "VerifierConfig", "NOT_INIT", "INVALID", "MISC", "ZERO", "SPILL"]

# stack byte tags
INVALID, MISC, ZERO, SPILL = 0, 1, 2, 3
_TAG_CHAR = ".mzs"


class RegType(Enum):
    NOT_INIT = "not_init"
    SCALAR_VALUE = "scalar"
    PTR_TO_CTX = "ctx"
    PTR_TO_STACK = "fp"
    PTR_TO_PACKET = "pkt"
    PTR_TO_PACKET_END = "pkt_end"
    PTR_TO_MAP_VALUE = "map_value"
    PTR_TO_MAP_VALUE_OR_NULL = "map_value_or_null"
    CONST_MAP_PTR = "map_ptr"
    PTR_TO_OBJ = "obj"

    @property
    def is_pointer(self) -> bool:
        return self not in (RegType.NOT_INIT, RegType.SCALAR_VALUE)


_ZERO = abs_const(0)


@dataclass(frozen=True)
class RegState:
    rtype: RegType = RegType.NOT_INIT
    scalar: ScalarAbs | None = None
    fixed_off: int = 0
    var_off: ScalarAbs = _ZERO
    mem_len: int = 0
    map_index: int = -1
    frameno: int = 0
    id: int = 0
    ref_id: int = 0
    origin: int = -1
    precise: bool = False
    stale: bool = False      # hash-map value whose entry may have been deleted

    @classmethod
    def scalar_of(cls, a: ScalarAbs) -> "RegState":
        return cls(RegType.SCALAR_VALUE, scalar=a)

    @classmethod
    def const(cls, v: int) -> "RegState":
        return cls(RegType.SCALAR_VALUE, scalar=abs_const(v))

    @classmethod
    def unknown(cls) -> "RegState":
        return cls(RegType.SCALAR_VALUE, scalar=abs_unknown())

    @property
    def is_scalar(self) -> bool:
        return self.rtype == RegType.SCALAR_VALUE

    @property
    def is_pointer(self) -> bool:
        return self.rtype.is_pointer

    def with_(self, **kw) -> "RegState":
        return replace(self, **kw)

    def __str__(self) -> str:
        t = self.rtype
        if t == RegType.NOT_INIT:
            return "?"
        if t == RegType.SCALAR_VALUE:
            return f"{'P' if self.precise else ''}scalar({self.scalar})"
        parts = []
        if t in (RegType.CONST_MAP_PTR, RegType.PTR_TO_MAP_VALUE,
                 RegType.PTR_TO_MAP_VALUE_OR_NULL):
            parts.append(f"map={self.map_index}")
        if t == RegType.PTR_TO_STACK:
            parts.append(f"frame={self.frameno}")
        if t != RegType.CONST_MAP_PTR:
            parts.append(f"off={self.fixed_off}")
        if not self.var_off.is_const or self.var_off.const_value:
            parts.append(f"var={self.var_off}")
        if self.id:
            parts.append(f"id={self.id}")
        if self.ref_id:
            parts.append(f"ref={self.ref_id}")
        if self.stale:
            parts.append("stale")
        return f"{t.value}({','.join(parts)})"


NOT_INIT = RegState()


@dataclass
class StackState:
    """Byte tags over the frame plus spilled registers keyed by 8-byte slot."""
    size: int
    tags: bytearray = None
    spills: dict[int, RegState] = field(default_factory=dict)

    def __post_init__(self):
        if self.tags is None:
            self.tags = bytearray(self.size)

    def byte(self, off: int) -> int:
        """Index of the byte at frame offset ``off`` (negative)."""
        return self.size + off

    def clone(self) -> "StackState":
        return StackState(self.size, bytearray(self.tags), dict(self.spills))

    def describe(self) -> str:
        used = [i for i, t in enumerate(self.tags) if t != INVALID]
        if not used:
            return ""
        lo = min(used) // 8 * 8
        return "".join(_TAG_CHAR[t] for t in self.tags[lo:])


@dataclass
class Frame:
    regs: list[RegState]
    stack: StackState
    subprog: int
    callsite: int   # index of the call that created this frame, -1 for main

    def clone(self) -> "Frame":
        return Frame(list(self.regs), self.stack.clone(), self.subprog, self.callsite)


@dataclass
class PathState:
    acquired_refs: dict[int, int] = field(default_factory=dict)   # ref_id -> acquire site
    released: set[int] = field(default_factory=set)
    lock: tuple[int, int] | None = None                          # (map index, pointer id)
    lock_site: int = -1
    iter_states: dict[tuple[int, int], list] = field(default_factory=dict)  # (frame, slot) -> [state, depth]
    pkt_range: int = 0
    branch_count: int = 0

    def clone(self) -> "PathState":
        return PathState(dict(self.acquired_refs), set(self.released), self.lock, self.lock_site,
                         {k: list(v) for k, v in self.iter_states.items()}, self.pkt_range,
                         self.branch_count)


@dataclass
class VerifierState:
    frames: list[Frame]
    path: PathState
    pc: int = 0
    trace: list[tuple[int, int, tuple[int, int] | None]] = field(default_factory=list)
    parent: "Checkpoint | None" = None

    @property
    def cur(self) -> Frame:
        return self.frames[-1]

    @property
    def regs(self) -> list[RegState]:
        return self.frames[-1].regs

    @property
    def depth(self) -> int:
        return len(self.frames) - 1

    def clone(self) -> "VerifierState":
        return VerifierState([f.clone() for f in self.frames], self.path.clone(), self.pc,
                             list(self.trace), self.parent)


@dataclass(eq=False)
class Checkpoint:
    """A cached state at a pruning point; fully explored once ``branches`` is 0."""
    idx: int
    state: VerifierState
    parent: "Checkpoint | None"
    trace: list
    branches: int = 1


@dataclass
class VerifierConfig:
    complexity_limit: int = 100_000
    stack_size: int = 512
    max_call_depth: int = 8
    pruning_enabled: bool = True
    log_level: int = 1
