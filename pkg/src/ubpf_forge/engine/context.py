"""Execution context, the environment interface helpers run against, and engine errors."""

from __future__ import annotations

from dataclasses import dataclass, field

from .memory import Memory


class EngineError(Exception):
    pass


class FuelExhausted(EngineError):
    pass


class ConcreteBoundsViolation(EngineError):
    """A verified program touched memory it should not; unreachable when the verifier is sound."""


class MissingExceptionEntry(EngineError):
    pass


class ReadOnlyImage(EngineError):
    pass


class Env:
    """Services a running program needs: memory, helpers and map storage.

    The default has no maps and only the trace helper; the runtime supplies
    a full implementation.
    """

    def __init__(self, mem: Memory | None = None):
        self.mem = mem or Memory()
        self.trace: list[bytes] = []

    def call_helper(self, hid: int, args: list[int], ctx: "ExecContext") -> int:
        raise EngineError(f"helper {hid} not available in this environment")

    def call_direct(self, map_index: int, hid: int, args: list[int], ctx: "ExecContext") -> int:
        raise EngineError("no maps in this environment")

    def map_handle(self, map_index: int) -> int:
        raise EngineError("no maps in this environment")

    def map_value_base(self, map_index: int) -> int:
        raise EngineError("no maps in this environment")


@dataclass
class ExecContext:
    env: Env
    ctx_addr: int
    packet_addr: int = 0
    packet_len: int = 0
    stack_size: int = 512
    insn_count: int = 0
    regions: list[int] = field(default_factory=list)

    @property
    def mem(self) -> Memory:
        return self.env.mem

    def release(self) -> None:
        for a in self.regions:
            self.mem.free(a)
        self.regions.clear()


def make_xdp_context(env: Env, packet: bytes, stack_size: int = 512) -> ExecContext:
    """Packet buffer plus a read-only 16-byte ctx holding data and data_end."""
    mem = env.mem
    pkt = mem.alloc(len(packet), "packet", init=packet)
    raw = pkt.to_bytes(8, "little") + (pkt + len(packet)).to_bytes(8, "little")
    ctx = mem.alloc(16, "xdp_md", writable=False, init=raw)
    return ExecContext(env, ctx, pkt, len(packet), stack_size, regions=[pkt, ctx])


@dataclass
class ExecResult:
    r0: int
    trace: list[bytes]
    insn_count: int
    zero_filled: int = 0


__all__ = ["Env", "ExecContext", "ExecResult", "make_xdp_context", "EngineError",
           "FuelExhausted", "ConcreteBoundsViolation", "MissingExceptionEntry", "ReadOnlyImage"]
