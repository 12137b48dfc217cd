"""Helper calls, subprog calls and returns, lock and iterator discipline."""

from __future__ import annotations

from ..helpers import (ACQUIRE_REF, ITER_DESTROY, ITER_NEW, ITER_NEXT, ITER_SIZE, LOCK_SIZE,
                       MAP_DELETE, OBJ_SIZE, SPIN_LOCK, SPIN_UNLOCK, Arg, Ret)
from ..isa import Pseudo
from .state import MISC, NOT_INIT, Frame, RegState, RegType, StackState, VerifierState

MAX_MEM_ARG = 512
ACTIVE, DRAINED = "active", "drained"


def _signed_range(lo: int, hi: int) -> RegState:
    from ..absdom import abs_const, abs_join
    if lo == hi:
        return RegState.const(lo)
    # small signed ranges such as [-1, 0]
    acc = abs_const(lo)
    for v in range(lo + 1, hi + 1):
        acc = abs_join(acc, abs_const(v))
    return RegState.scalar_of(acc)


def _mark_stale(st: VerifierState, map_index: int) -> None:
    """A delete may free any entry of the map: every pointer into it goes stale."""
    kinds = (RegType.PTR_TO_MAP_VALUE, RegType.PTR_TO_MAP_VALUE_OR_NULL)
    for frame in st.frames:
        for r, reg in enumerate(frame.regs):
            if reg.rtype in kinds and reg.map_index == map_index:
                frame.regs[r] = reg.with_(stale=True)
        for spi, reg in list(frame.stack.spills.items()):
            if reg.rtype in kinds and reg.map_index == map_index:
                frame.stack.spills[spi] = reg.with_(stale=True)


class CallMixin:

    def _arg(self, st: VerifierState, r: int, idx: int) -> RegState:
        reg = st.regs[r]
        if reg.rtype == RegType.NOT_INIT:
            self.reject("UninitializedRead", idx, f"helper argument r{r} is uninitialized")
        if reg.stale:
            # helpers access memory directly, with no fault recovery
            self.reject("StaleMapValueWrite", idx,
                        f"r{r} points into a map value whose entry may be deleted")
        return reg

    def _iter_slot(self, st, reg: RegState, idx: int) -> tuple[int, int]:
        if reg.rtype != RegType.PTR_TO_STACK:
            self.reject("ArgTypeMismatch", idx, f"iterator argument must be a stack pointer, "
                        f"got {reg.rtype.value}")
        o = self._stack_offset(reg, 0, ITER_SIZE, idx)
        if o % 8:
            self.reject("MisalignedAccess", idx, "iterator slot must be 8-byte aligned")
        b = st.frames[reg.frameno].stack.byte(o)
        return reg.frameno, b // 8

    def _lock_region(self, reg: RegState, idx: int) -> tuple[int, int]:
        if reg.rtype == RegType.PTR_TO_MAP_VALUE_OR_NULL:
            self.reject("NullDeref", idx, "lock pointer may be null")
        if reg.rtype != RegType.PTR_TO_MAP_VALUE:
            self.reject("ArgTypeMismatch", idx,
                        f"lock argument must be a map value pointer, got {reg.rtype.value}")
        if reg.fixed_off != 0 or not reg.var_off.is_const or reg.var_off.const_value != 0:
            self.reject("ArgTypeMismatch", idx, "lock must be at offset 0 of the map value")
        if reg.mem_len < LOCK_SIZE:
            self.reject("ArgTypeMismatch", idx, "map value too small to hold a lock")
        return reg.map_index, reg.id

    def check_helper_call(self, st: VerifierState, idx: int) -> list[VerifierState]:
        insn = self.prog.insns[idx]
        if insn.pseudo == Pseudo.DIRECT_CALL:
            self.reject("UnknownHelper", idx, "direct map calls are internal to the rewrite pass")
        spec = self.helpers.get(insn.imm)
        if spec is None:
            self.reject("UnknownHelper", idx, f"unknown helper id {insn.imm}")
        path = st.path
        if path.lock is not None and insn.imm not in (SPIN_LOCK, SPIN_UNLOCK):
            self.reject("CallWhileLocked", idx, f"call to {spec.name} while holding a lock")

        map_ref = None
        mem_reg = None
        ref_target = None
        iter_key = None
        lock_region = None
        for k, kind in enumerate(spec.args, start=1):
            reg = self._arg(st, k, idx)
            if kind == Arg.ANYTHING:
                if not reg.is_scalar:
                    self.reject("ArgTypeMismatch", idx, f"r{k} must be a scalar, "
                                f"got {reg.rtype.value}")
            elif kind == Arg.CONST_MAP_PTR:
                if reg.rtype != RegType.CONST_MAP_PTR:
                    self.reject("ArgTypeMismatch", idx,
                                f"r{k} must be a map pointer, got {reg.rtype.value}")
                map_ref = self.maps[reg.map_index]
                self.call_maps.setdefault(idx, set()).add(reg.map_index)
            elif kind == Arg.PTR_TO_MAP_KEY:
                self.check_mem_region(st, reg, map_ref.key_size, idx, f"r{k} map key")
            elif kind == Arg.PTR_TO_MAP_VALUE:
                self.check_mem_region(st, reg, map_ref.value_size, idx, f"r{k} map value")
            elif kind == Arg.PTR_TO_MEM:
                mem_reg = (k, reg)
            elif kind == Arg.CONST_SIZE:
                if not reg.is_scalar:
                    self.reject("ArgTypeMismatch", idx, f"r{k} size must be a scalar")
                self.mark_precise(st, {k})
                if reg.scalar.umin < 1 or reg.scalar.umax > MAX_MEM_ARG:
                    self.reject("ArgTypeMismatch", idx, f"r{k} size {reg.scalar} must be within "
                                f"[1, {MAX_MEM_ARG}]")
                mk, mreg = mem_reg
                self.check_mem_region(st, mreg, reg.scalar.umax, idx, f"r{mk} memory")
            elif kind == Arg.PTR_TO_LOCK:
                lock_region = self._lock_region(reg, idx)
            elif kind == Arg.PTR_TO_REF_OBJ:
                if reg.rtype != RegType.PTR_TO_OBJ:
                    self.reject("ArgTypeMismatch", idx,
                                f"r{k} must be an acquired object, got {reg.rtype.value}")
                if reg.ref_id in path.released:
                    self.reject("DoubleRelease", idx, f"reference {reg.ref_id} already released")
                if reg.ref_id not in path.acquired_refs:
                    self.reject("ReleaseOfUnownedRef", idx, f"reference {reg.ref_id} not held")
                if reg.fixed_off != 0 or not reg.var_off.is_const or reg.var_off.const_value:
                    self.reject("ArgTypeMismatch", idx, "object pointer must be unmodified")
                ref_target = reg.ref_id
            elif kind == Arg.PTR_TO_ITER:
                iter_key = self._iter_slot(st, reg, idx)

        # effects
        result: RegState
        forks: list[VerifierState] = []
        iid = insn.imm
        if iid == SPIN_LOCK:
            if path.lock is not None:
                self.reject("SecondLockHeld", idx, "a lock is already held")
            path.lock, path.lock_site = lock_region, idx
        elif iid == SPIN_UNLOCK:
            if path.lock is None:
                self.reject("UnlockWithoutLock", idx, "no lock is held")
            if path.lock != lock_region:
                self.reject("LockRegionMismatch", idx,
                            f"unlock of a different region than the one locked at {path.lock_site}")
            path.lock, path.lock_site = None, -1
        elif iid == ITER_NEW:
            if iter_key in path.iter_states:
                self.reject("IteratorClobber", idx, "re-initialising a live iterator")
            self._check_iter_overlap(st, iter_key[0], iter_key[1] * 8, ITER_SIZE, idx)
            stack = st.frames[iter_key[0]].stack
            b = iter_key[1] * 8
            for s in (iter_key[1], iter_key[1] + 1):
                stack.spills.pop(s, None)
            stack.tags[b:b + ITER_SIZE] = bytes([MISC]) * ITER_SIZE
            path.iter_states[iter_key] = [ACTIVE, 0]
        elif iid in (ITER_NEXT, ITER_DESTROY):
            if iter_key not in path.iter_states:
                self.reject("ArgTypeMismatch", idx, "argument is not an initialised iterator")
            if iid == ITER_DESTROY:
                del path.iter_states[iter_key]
        elif spec.releases:
            path.acquired_refs.pop(ref_target)
            path.released.add(ref_target)
        if iid == MAP_DELETE and map_ref.map_type == "hash":
            _mark_stale(st, self.maps.index(map_ref))

        if spec.ret == Ret.MAP_VALUE_OR_NULL:
            result = RegState(RegType.PTR_TO_MAP_VALUE_OR_NULL, mem_len=map_ref.value_size,
                              map_index=self.maps.index(map_ref), id=self.new_id(), origin=idx)
        elif spec.ret == Ret.REF_OBJ:
            rid = self.new_id()
            path.acquired_refs[rid] = idx
            result = RegState(RegType.PTR_TO_OBJ, mem_len=OBJ_SIZE, ref_id=rid, id=rid)
        elif spec.ret == Ret.INTEGER:
            lo, hi = spec.ret_range or (None, None)
            result = RegState.unknown() if lo is None else _signed_range(lo, hi)
        elif spec.ret == Ret.ITER_NEXT:
            result = RegState.const(0)
            it = path.iter_states[iter_key]
            if it[0] == ACTIVE:
                other = st.clone()
                other.path.iter_states[iter_key] = [ACTIVE, it[1] + 1]
                self._finish_call(other, RegState.const(1), idx)
                forks.append(other)
                it[0] = DRAINED
        else:
            result = NOT_INIT
        self._finish_call(st, result, idx)
        return [st, *forks]

    def _finish_call(self, st: VerifierState, r0: RegState, idx: int) -> None:
        regs = st.regs
        regs[0] = r0
        for r in range(1, 6):
            regs[r] = NOT_INIT
        st.pc = idx + 1

    # -- subprogs

    def enter_subprog(self, st: VerifierState, idx: int) -> None:
        if st.path.lock is not None:
            self.reject("CallWhileLocked", idx, "subprog call while holding a lock")
        if len(st.frames) >= self.config.max_call_depth:
            self.reject("CallStackOverflow", idx,
                        f"call depth would exceed {self.config.max_call_depth}")
        target = self.prog.jump_target(idx)
        caller = st.cur.regs
        depth = len(st.frames)
        regs = [NOT_INIT] * 11
        for r in range(1, 6):
            regs[r] = caller[r]
        regs[10] = RegState(RegType.PTR_TO_STACK, frameno=depth)
        st.frames.append(Frame(regs, StackState(self.config.stack_size),
                               self.prog.subprog_of(target), idx))
        st.pc = target

    def check_exit(self, st: VerifierState, idx: int) -> bool:
        """Handle ``exit``; returns True when the path is complete."""
        r0 = st.regs[0]
        if r0.rtype == RegType.NOT_INIT:
            self.reject("UninitializedReturn", idx, "r0 is not initialized at exit")
        depth = st.depth
        path = st.path
        if depth > 0:
            if r0.rtype == RegType.PTR_TO_STACK and r0.frameno == depth:
                self.reject("InvalidPointer", idx, "returning a pointer to the callee's stack")
            if any(f == depth for f, _ in path.iter_states):
                self.reject("ResourceLeak", idx, "iterator still live at subprog exit")
            frame = st.frames.pop()
            regs = st.cur.regs
            regs[0] = r0
            for r in range(1, 6):
                regs[r] = NOT_INIT
            st.pc = frame.callsite + 1
            return False
        if r0.is_pointer:
            self.reject("PointerLeak", idx, f"returning {r0.rtype.value} to the caller")
        if path.lock is not None:
            self.reject("ExitWhileLocked", idx, f"lock taken at {path.lock_site} still held")
        if path.acquired_refs:
            rid, site = next(iter(path.acquired_refs.items()))
            self.reject("ResourceLeak", idx,
                        f"reference {rid} acquired at {site} was never released")
        if path.iter_states:
            self.reject("ResourceLeak", idx, "iterator never destroyed")
        return True


__all__ = ["CallMixin", "ACTIVE", "DRAINED", "MAX_MEM_ARG"]
