"""Memory access checks for every pointer kind, including stack spill/fill."""

from __future__ import annotations

from ..absdom import abs_alu, abs_const, abs_from_range
from ..isa import AluOp
from .state import INVALID, MISC, SPILL, ZERO, RegState, RegType, VerifierState

CTX_SIZE = 16
CTX_DATA, CTX_DATA_END = 0, 8
MAX_PTR_OFF = 1 << 29


def _bounded_scalar(size: int) -> RegState:
    return RegState.scalar_of(abs_from_range(0, (1 << (8 * size)) - 1))


class MemoryMixin:
    """Mixed into the verifier; expects ``reject``, ``config``, ``maps``."""

    def _offset_span(self, reg: RegState, off: int) -> tuple[int, int]:
        """Signed min/max byte offset addressed by ``reg + off``."""
        base = reg.fixed_off + off
        return base + reg.var_off.smin, base + reg.var_off.smax

    def _check_alignment(self, reg: RegState, off: int, size: int, idx: int) -> None:
        if size == 1:
            return
        tot = abs_alu(AluOp.ADD, reg.var_off, abs_const(reg.fixed_off + off))
        if (tot.tnum.value | tot.tnum.mask) & (size - 1):
            self.reject("MisalignedAccess", idx,
                        f"{size}-byte access at {reg.rtype.value}{reg.fixed_off + off:+d} "
                        f"is not {size}-byte aligned")

    def _check_bounds(self, reg: RegState, off: int, size: int, limit: int, idx: int,
                      what: str) -> None:
        lo, hi = self._offset_span(reg, off)
        if lo < 0 or hi + size > limit:
            self.reject("OutOfBounds", idx,
                        f"{what} access [{lo}, {hi + size}) outside [0, {limit})")

    def _check_pointer_base(self, reg: RegState, idx: int) -> None:
        t = reg.rtype
        if t == RegType.SCALAR_VALUE:
            self.reject("InvalidPointer", idx, "dereference of a scalar")
        if t == RegType.PTR_TO_MAP_VALUE_OR_NULL:
            self.reject("NullDeref", idx, "map value pointer may be null; check it first")
        if t in (RegType.CONST_MAP_PTR, RegType.PTR_TO_PACKET_END):
            self.reject("InvalidPointer", idx, f"{t.value} cannot be dereferenced")

    def check_mem_access(self, st: VerifierState, reg: RegState, off: int, size: int,
                         write: bool, idx: int, value: RegState | None = None,
                         note: dict | None = None) -> RegState | None:
        """Validate one load or store; returns the loaded value for reads."""
        self._check_pointer_base(reg, idx)
        self._check_alignment(reg, off, size, idx)
        t = reg.rtype
        if t == RegType.PTR_TO_CTX:
            return self._ctx_access(reg, off, size, write, idx)
        if t == RegType.PTR_TO_STACK:
            return self._stack_access(st, reg, off, size, write, idx, value, note)
        if value is not None and value.is_pointer:
            self.reject("PointerLeak", idx, f"storing a pointer into {t.value} memory")
        if t == RegType.PTR_TO_PACKET:
            self._check_bounds(reg, off, size, st.path.pkt_range, idx, "packet")
        elif t == RegType.PTR_TO_MAP_VALUE:
            if write and reg.stale:
                self.reject("StaleMapValueWrite", idx,
                            "store through a map value pointer whose entry may be deleted")
            self._check_bounds(reg, off, size, reg.mem_len, idx, "map value")
        elif t == RegType.PTR_TO_OBJ:
            if reg.ref_id in st.path.released:
                self.reject("UseAfterRelease", idx, f"reference {reg.ref_id} was released")
            self._check_bounds(reg, off, size, reg.mem_len, idx, "object")
        else:  # pragma: no cover - all pointer kinds handled above
            self.reject("InvalidPointer", idx, f"cannot access {t.value}")
        return None if write else _bounded_scalar(size)

    # -- context

    def _ctx_access(self, reg, off, size, write, idx):
        if not reg.var_off.is_const:
            self.reject("InvalidPointer", idx, "variable offset into ctx")
        o = reg.fixed_off + reg.var_off.const_value + off
        if not 0 <= o < CTX_SIZE or o + size > CTX_SIZE:
            self.reject("OutOfBounds", idx, f"ctx access at {o} size {size}")
        if write:
            self.reject("KernelStateWrite", idx, f"write to read-only ctx field at {o}")
        if size != 8 or o not in (CTX_DATA, CTX_DATA_END):
            self.reject("OutOfBounds", idx, f"invalid ctx field access at {o} size {size}")
        if o == CTX_DATA:
            return RegState(RegType.PTR_TO_PACKET)
        return RegState(RegType.PTR_TO_PACKET_END)

    # -- stack

    def _stack_offset(self, reg: RegState, off: int, size: int, idx: int) -> int:
        if not reg.var_off.is_const:
            self.reject("InvalidPointer", idx, "variable offset stack access")
        o = reg.fixed_off + reg.var_off.const_value + off
        if o < -self.config.stack_size or o + size > 0:
            self.reject("OutOfBounds", idx,
                        f"stack access [{o}, {o + size}) outside [-{self.config.stack_size}, 0)")
        return o

    def _stack_access(self, st, reg, off, size, write, idx, value, note):
        o = self._stack_offset(reg, off, size, idx)
        frame = st.frames[reg.frameno]
        stack = frame.stack
        b = stack.byte(o)
        spi = b // 8
        if note is not None and size == 8:
            note["slot"] = (reg.frameno, spi)
        if write:
            self._check_iter_overlap(st, reg.frameno, b, size, idx)
            self.stack_write(stack, b, size, value, idx)
            return None
        tags = stack.tags[b:b + size]
        if INVALID in tags:
            self.reject("UninitializedStackRead", idx,
                        f"read of uninitialized stack at fp{o:+d} size {size}")
        if size == 8 and all(t == SPILL for t in tags):
            return stack.spills[spi]
        if SPILL in tags:
            sp = stack.spills.get(spi)
            if sp is not None and sp.is_pointer:
                self.reject("InvalidSpillFill", idx,
                            f"partial fill of spilled {sp.rtype.value} at fp{o:+d}")
            return _bounded_scalar(size)
        if all(t == ZERO for t in tags):
            return RegState.const(0)
        return _bounded_scalar(size)

    def stack_write(self, stack, b: int, size: int, value: RegState | None, idx: int) -> None:
        spi = b // 8
        if size == 8:
            stack.spills[spi] = value
            stack.tags[b:b + 8] = bytes([SPILL]) * 8
            return
        if value is not None and value.is_pointer:
            self.reject("InvalidSpillFill", idx, "partial spill of a pointer")
        for s in {b // 8, (b + size - 1) // 8}:
            if s in stack.spills:
                del stack.spills[s]
                for k in range(s * 8, s * 8 + 8):
                    if stack.tags[k] == SPILL:
                        stack.tags[k] = MISC
        zero = value is not None and value.is_scalar and value.scalar.is_const \
            and value.scalar.const_value == 0
        stack.tags[b:b + size] = bytes([ZERO if zero else MISC]) * size

    def _check_iter_overlap(self, st, frameno, b, size, idx):
        for (fno, spi) in st.path.iter_states:
            if fno == frameno and b < spi * 8 + 16 and spi * 8 < b + size:
                self.reject("IteratorClobber", idx, "store overwrites a live iterator")

    def check_mem_region(self, st: VerifierState, reg: RegState, size: int, idx: int,
                         what: str) -> None:
        """Helper argument check: ``size`` readable bytes at ``reg``."""
        if reg.rtype == RegType.NOT_INIT:
            self.reject("UninitializedRead", idx, f"{what} argument is uninitialized")
        if reg.rtype == RegType.SCALAR_VALUE:
            self.reject("ArgTypeMismatch", idx, f"{what} argument must be a pointer, got scalar")
        if reg.rtype == RegType.PTR_TO_MAP_VALUE_OR_NULL:
            self.reject("NullDeref", idx, f"{what} argument may be null")
        if reg.rtype in (RegType.CONST_MAP_PTR, RegType.PTR_TO_PACKET_END, RegType.PTR_TO_CTX):
            self.reject("ArgTypeMismatch", idx, f"{what} argument cannot be {reg.rtype.value}")
        if size == 0:
            return
        if reg.rtype == RegType.PTR_TO_STACK:
            o = self._stack_offset(reg, 0, size, idx)
            stack = st.frames[reg.frameno].stack
            b = stack.byte(o)
            if INVALID in stack.tags[b:b + size]:
                self.reject("UninitializedStackRead", idx,
                            f"{what} argument reads uninitialized stack at fp{o:+d}")
        elif reg.rtype == RegType.PTR_TO_PACKET:
            self._check_bounds(reg, 0, size, st.path.pkt_range, idx, "packet")
        elif reg.rtype == RegType.PTR_TO_MAP_VALUE:
            self._check_bounds(reg, 0, size, reg.mem_len, idx, "map value")
        elif reg.rtype == RegType.PTR_TO_OBJ:
            if reg.ref_id in st.path.released:
                self.reject("UseAfterRelease", idx, f"reference {reg.ref_id} was released")
            self._check_bounds(reg, 0, size, reg.mem_len, idx, "object")


__all__ = ["MemoryMixin", "CTX_SIZE", "CTX_DATA", "CTX_DATA_END", "MAX_PTR_OFF"]
