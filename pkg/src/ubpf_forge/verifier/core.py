"""Path-sensitive symbolic execution over the abstract domain.

States are explored depth-first from a worklist. At pruning points the
current state is compared against cached, fully explored checkpoints; a
match ends the path. Precision demands travel backwards through the
recorded history into those checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..absdom import abs_alu, abs_const, abs_refine_branch, abs_unknown, to_signed, trunc32, zext
from ..cfg import CfgReport, check_cfg, compute_liveness
from ..helpers import HELPERS, ITER_NEXT, HelperSpec
from ..isa import AluOp, InsnClass, JmpOp, MapRef, Program, Pseudo, SrcKind, format_insn
from ..rejection import Rejection
from .calls import ACTIVE, CallMixin
from .memory import MAX_PTR_OFF, MemoryMixin
from .prune import mark_chain_precision, mark_all_precise, precise_demand, states_equal
from .state import (NOT_INIT, Checkpoint, Frame, PathState, RegState, RegType, StackState,
                    VerifierConfig, VerifierState)

MAP_TYPES = ("array", "hash")
MIN_CP_GAP = 8
_PTR_ARITH_OK = (RegType.PTR_TO_CTX, RegType.PTR_TO_STACK, RegType.PTR_TO_PACKET,
                 RegType.PTR_TO_MAP_VALUE, RegType.PTR_TO_OBJ)


@dataclass
class VerifierStats:
    insn_processed: int = 0
    states_explored: int = 0
    checkpoints: int = 0
    pruned: int = 0
    peak_worklist: int = 0


@dataclass
class VerifiedProgram:
    program: Program
    cfg: CfgReport
    seen: tuple[bool, ...]
    branch_outcomes: dict[int, frozenset[bool]]
    map_value_loads: dict[int, frozenset[int]]
    helper_maps: dict[int, frozenset[int]]
    stats: VerifierStats
    log: list[str] = field(default_factory=list)

    @property
    def insn_processed(self) -> int:
        return self.stats.insn_processed

    @property
    def states_explored(self) -> int:
        return self.stats.states_explored


def _sext32(v: int) -> int:
    return to_signed(v & 0xFFFFFFFF, 32)


class Verifier(MemoryMixin, CallMixin):

    def __init__(self, prog: Program, helpers: dict[int, HelperSpec] | None = None,
                 maps: tuple[MapRef, ...] | None = None, cfg: CfgReport | None = None,
                 config: VerifierConfig | None = None):
        self.prog = prog
        self.helpers = HELPERS if helpers is None else helpers
        self.maps = list(prog.map_refs if maps is None else maps)
        self.config = config or VerifierConfig()
        self.cfg = cfg
        self.stats = VerifierStats()
        self.log: list[str] = []
        self._next_id = 0

    # -- plumbing

    def reject(self, kind: str, idx: int, detail: str = "") -> None:
        if self.config.log_level:
            self.log.append(f"{idx}: REJECT {kind}: {detail}")
        raise Rejection(kind, idx, detail, log=self.log, insn_processed=self.stats.insn_processed)

    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def mark_precise(self, st: VerifierState, regs: set[int], slots=None) -> None:
        mark_chain_precision(self.prog, st, regs, slots)

    def _read(self, st: VerifierState, r: int, idx: int) -> RegState:
        reg = st.regs[r]
        if reg.rtype == RegType.NOT_INIT:
            self.reject("UninitializedRead", idx, f"r{r} is read before being written")
        return reg

    def initial_state(self) -> VerifierState:
        regs = [NOT_INIT] * 11
        regs[1] = RegState(RegType.PTR_TO_CTX, mem_len=16)
        regs[10] = RegState(RegType.PTR_TO_STACK, frameno=0)
        return VerifierState([Frame(regs, StackState(self.config.stack_size), 0, -1)], PathState())

    # -- driver

    def run(self) -> VerifiedProgram:
        p = self.prog
        if self.cfg is None:
            self.cfg = check_cfg(p)
        for k, m in enumerate(self.maps):
            if m.map_type not in MAP_TYPES or m.key_size <= 0 or m.value_size <= 0 \
                    or m.max_entries <= 0:
                self.reject("InvalidInstruction", -1,
                            f"map {k} ({m.name}) has unsupported definition {m}")
        self.liveness = compute_liveness(p)
        self.points = self.cfg.pruning_points
        self.iter_sites = frozenset(i for i, insn in enumerate(p.insns)
                                    if insn.is_call() and insn.pseudo == Pseudo.NONE
                                    and insn.imm == ITER_NEXT)
        self.cache: dict[int, list[Checkpoint]] = {}
        self.done: dict[int, list[Checkpoint]] = {}
        self.seen = [False] * len(p.insns)
        self.outcomes: dict[int, set[bool]] = {}
        self.mv_loads: dict[int, set[int]] = {}
        self.call_maps: dict[int, set[int]] = {}

        work = [self.initial_state()]
        while work:
            st = work.pop()
            self.stats.states_explored += 1
            self._explore(st, work)
        return VerifiedProgram(p, self.cfg, tuple(self.seen),
                               {k: frozenset(v) for k, v in self.outcomes.items()},
                               {k: frozenset(v) for k, v in self.mv_loads.items()},
                               {k: frozenset(v) for k, v in self.call_maps.items()},
                               self.stats, self.log)

    def _explore(self, st: VerifierState, work: list[VerifierState]) -> None:
        limit = self.config.complexity_limit
        prune = self.config.pruning_enabled
        while True:
            idx = st.pc
            if prune and idx in self.points:
                if self.is_state_pruned(st, idx):
                    self._finish(st)
                    return
                self._checkpoint(st, idx)
            if self.stats.insn_processed >= limit:
                self.reject("ComplexityLimitExceeded", idx,
                            f"processed {self.stats.insn_processed} instructions, limit {limit}")
            self.stats.insn_processed += 1
            self.seen[idx] = True
            succ = self.simulate_insn(st, idx)
            if not succ:
                self._finish(st)
                return
            for other in succ[1:]:
                if other.parent is not None:
                    other.parent.branches += 1
                work.append(other)
            self.stats.peak_worklist = max(self.stats.peak_worklist, len(work))
            st = succ[0]

    def _finish(self, st: VerifierState) -> None:
        cp = st.parent
        while cp is not None:
            cp.branches -= 1
            if cp.branches > 0:
                break
            self.done.setdefault(cp.idx, []).append(cp)
            cp = cp.parent

    def _checkpoint(self, st: VerifierState, idx: int) -> None:
        # a tight loop re-entering the same point gains nothing from a new cache entry
        if st.parent is not None and st.parent.idx == idx and len(st.trace) < MIN_CP_GAP:
            return
        snap = st.clone()
        snap.trace = []
        cp = Checkpoint(idx, snap, st.parent, st.trace)
        st.parent = cp
        st.trace = []
        self.cache.setdefault(idx, []).append(cp)
        self.stats.checkpoints += 1

    def is_state_pruned(self, st: VerifierState, idx: int) -> bool:
        if idx in self.iter_sites:
            cands = [cp for cp in self.cache.get(idx, ()) if cp.branches == 0 or any(
                v[0] == ACTIVE for v in cp.state.path.iter_states.values())]
        else:
            cands = self.done.get(idx, ())
        for cp in cands:
            if states_equal(cp.state, st, self.liveness, idx):
                regs, slots, lower = precise_demand(cp.state)
                if lower:
                    mark_all_precise(st)
                elif regs or slots:
                    self.mark_precise(st, regs, slots)
                self.stats.pruned += 1
                if self.config.log_level:
                    self.log.append(f"{idx}: pruned (matches checkpoint)")
                return True
        return False

    # -- transfer

    def simulate_insn(self, st: VerifierState, idx: int) -> list[VerifierState]:
        """Apply instruction ``idx`` to ``st``; returns the successor states.

        The first successor continues in place; an empty list ends the path.
        """
        insn = self.prog.insns[idx]
        c = insn.cls
        note: dict = {}
        depth = st.depth
        before = list(st.regs) if self.config.log_level else None
        st.trace.append((idx, depth, None))
        if c.is_alu:
            self._alu(st, idx, insn)
            st.pc = idx + 1
            out = [st]
        elif c == InsnClass.LD:
            self._ld_imm64(st, idx, insn)
            st.pc = idx + 1
            out = [st]
        elif c in (InsnClass.LDX, InsnClass.STX, InsnClass.ST):
            self._mem(st, idx, insn, note)
            st.pc = idx + 1
            out = [st]
        elif insn.is_exit():
            out = [] if self.check_exit(st, idx) else [st]
        elif insn.is_call():
            if insn.pseudo == Pseudo.CALL:
                self.enter_subprog(st, idx)
                out = [st]
            else:
                out = self.check_helper_call(st, idx)
        elif insn.is_ja():
            st.pc = self.prog.jump_target(idx)
            out = [st]
        else:
            out = self._cond_jump(st, idx, insn)
        if note:
            st.trace[-1] = (idx, depth, note.get("slot"))
            for o in out[1:]:
                o.trace[-1] = st.trace[-1]
        if before is not None:
            self._log_step(idx, insn, before, out)
        return out

    def _log_step(self, idx, insn, before, out) -> None:
        line = f"{idx}: {format_insn(insn, maps=self.maps)}"
        if out and len(out[0].regs) == len(before):
            delta = [f"r{r}={reg}" for r, reg in enumerate(out[0].regs) if reg != before[r]]
            if delta:
                line += " ; " + " ".join(delta)
        if len(out) > 1:
            line += f" ; fork -> {out[1].pc}"
        self.log.append(line)

    def _ld_imm64(self, st, idx, insn) -> None:
        if insn.dst == 10:
            self.reject("WriteToR10", idx, "r10 is read-only")
        if insn.pseudo == Pseudo.MAP:
            k = insn.value64
            if not 0 <= k < len(self.maps):
                self.reject("InvalidInstruction", idx, f"map index {k} out of range")
            st.regs[insn.dst] = RegState(RegType.CONST_MAP_PTR, map_index=k)
        elif insn.pseudo == Pseudo.MAP_VALUE:
            self.reject("InvalidInstruction", idx, "direct map value loads are internal")
        else:
            st.regs[insn.dst] = RegState.const(insn.value64)

    def _mem(self, st, idx, insn, note) -> None:
        size = insn.size.nbytes
        c = insn.cls
        if c == InsnClass.LDX:
            if insn.dst == 10:
                self.reject("WriteToR10", idx, "r10 is read-only")
            base = self._read(st, insn.src, idx)
            val = self.check_mem_access(st, base, insn.offset, size, False, idx, note=note)
            if base.rtype == RegType.PTR_TO_MAP_VALUE:
                self.mv_loads.setdefault(idx, set()).add(base.origin)
            st.regs[insn.dst] = val
            return
        base = self._read(st, insn.dst, idx)
        if c == InsnClass.STX:
            val = self._read(st, insn.src, idx)
            if val.is_scalar and size < 8:
                val = RegState.scalar_of(abs_alu(AluOp.AND, val.scalar,
                                                 abs_const((1 << (8 * size)) - 1)))
        else:
            val = RegState.const(insn.imm if size == 8 else insn.imm & ((1 << (8 * size)) - 1))
        self.check_mem_access(st, base, insn.offset, size, True, idx, value=val, note=note)

    # -- ALU

    def _alu(self, st: VerifierState, idx: int, insn) -> None:
        d = insn.dst
        if d == 10:
            self.reject("WriteToR10", idx, "r10 is read-only")
        is64 = insn.cls == InsnClass.ALU64
        width = 64 if is64 else 32
        op = insn.alu
        regs = st.regs
        x = insn.src_kind == SrcKind.X
        if op == AluOp.MOV:
            if x:
                s = self._read(st, insn.src, idx)
                if is64:
                    regs[d] = s
                elif s.is_pointer:
                    self.reject("BadPointerArithmetic", idx, "32-bit move of a pointer")
                else:
                    regs[d] = RegState.scalar_of(zext(trunc32(s.scalar)))
            else:
                v = insn.imm if is64 else insn.imm & 0xFFFFFFFF
                regs[d] = RegState.const(v)
            return
        dv = self._read(st, d, idx)
        if op in (AluOp.NEG, AluOp.END):
            if not dv.is_scalar:
                self.reject("BadPointerArithmetic", idx, f"{op.name} on {dv.rtype.value}")
            if op == AluOp.NEG:
                res = abs_alu(AluOp.SUB, abs_const(0), dv.scalar, width) if is64 else \
                    abs_alu(AluOp.SUB, abs_const(0), dv.scalar, 32)
            else:
                res = abs_alu(AluOp.END, dv.scalar, abs_const(insn.imm),
                              to_be=insn.src_kind == SrcKind.X)
            regs[d] = RegState.scalar_of(res)
            return
        sv = self._read(st, insn.src, idx) if x else RegState.const(insn.imm)
        if dv.is_scalar and sv.is_scalar:
            regs[d] = RegState.scalar_of(abs_alu(op, dv.scalar, sv.scalar, width))
            return
        if not is64:
            self.reject("BadPointerArithmetic", idx, "32-bit arithmetic on a pointer")
        if op == AluOp.ADD:
            if dv.is_pointer and sv.is_pointer:
                self.reject("BadPointerArithmetic", idx, "pointer + pointer")
            ptr, scal, sreg = (dv, sv, insn.src if x else None) if dv.is_pointer \
                else (sv, dv, d)
            regs[d] = self._ptr_add(st, idx, ptr, scal, sreg, +1)
        elif op == AluOp.SUB:
            if dv.is_pointer and sv.is_scalar:
                regs[d] = self._ptr_add(st, idx, dv, sv, insn.src if x else None, -1)
            elif dv.is_pointer and sv.is_pointer and dv.rtype == sv.rtype \
                    and dv.rtype in (RegType.PTR_TO_PACKET, RegType.PTR_TO_STACK,
                                     RegType.PTR_TO_MAP_VALUE) and dv.map_index == sv.map_index:
                diff = abs_alu(AluOp.SUB, abs_alu(AluOp.ADD, dv.var_off, abs_const(dv.fixed_off)),
                               abs_alu(AluOp.ADD, sv.var_off, abs_const(sv.fixed_off)))
                regs[d] = RegState.scalar_of(diff)
            else:
                self.reject("BadPointerArithmetic", idx,
                            f"{dv.rtype.value} - {sv.rtype.value}")
        else:
            self.reject("BadPointerArithmetic", idx, f"{op.name} on a pointer")

    def _ptr_add(self, st, idx, ptr: RegState, scal: RegState, sreg, sign: int) -> RegState:
        if ptr.rtype not in _PTR_ARITH_OK:
            self.reject("BadPointerArithmetic", idx, f"arithmetic on {ptr.rtype.value}")
        if sreg is not None:
            self.mark_precise(st, {sreg})
        s = scal.scalar
        if s.is_const:
            off = ptr.fixed_off + sign * to_signed(s.const_value)
            if abs(off) >= MAX_PTR_OFF:
                self.reject("BadPointerArithmetic", idx, f"pointer offset {off} out of range")
            return ptr.with_(fixed_off=off)
        if ptr.rtype in (RegType.PTR_TO_CTX, RegType.PTR_TO_OBJ):
            self.reject("BadPointerArithmetic", idx,
                        f"variable offset added to {ptr.rtype.value}")
        var = abs_alu(AluOp.ADD if sign > 0 else AluOp.SUB, ptr.var_off, s)
        if var.smin <= -MAX_PTR_OFF or var.smax >= MAX_PTR_OFF:
            self.reject("BadPointerArithmetic", idx,
                        f"unbounded variable offset {s} added to {ptr.rtype.value}")
        return ptr.with_(var_off=var)

    # -- branches

    def _note(self, idx: int, *outcomes: bool) -> None:
        self.outcomes.setdefault(idx, set()).update(outcomes)

    def _cond_jump(self, st: VerifierState, idx: int, insn) -> list[VerifierState]:
        x = insn.src_kind == SrcKind.X
        is32 = insn.cls == InsnClass.JMP32
        cond = insn.jmp
        dv = self._read(st, insn.dst, idx)
        sv = self._read(st, insn.src, idx) if x else RegState.const(
            insn.imm & 0xFFFFFFFF if is32 else insn.imm)
        target = self.prog.jump_target(idx)
        if dv.is_scalar and sv.is_scalar:
            taken, not_taken = abs_refine_branch(cond, dv.scalar, sv.scalar, 32 if is32 else 64)
            if taken is None and not_taken is None:
                return []
            if taken is None or not_taken is None:
                self.mark_precise(st, {insn.dst, insn.src} if x else {insn.dst})
                go = taken is not None
                self._note(idx, go)
                self._apply_refine(st, insn, taken if go else not_taken)
                st.pc = target if go else idx + 1
                return [st]
            self._note(idx, True, False)
            other = st.clone()
            self._apply_refine(st, insn, not_taken)
            self._apply_refine(other, insn, taken)
            st.pc, other.pc = idx + 1, target
            return [st, other]
        return self._pointer_jump(st, idx, insn, dv, sv, target, is32)

    def _apply_refine(self, st, insn, pair) -> None:
        regs = st.regs
        a, b = pair
        d = regs[insn.dst]
        regs[insn.dst] = d.with_(scalar=a)
        if insn.src_kind == SrcKind.X and insn.src != insn.dst:
            s = regs[insn.src]
            regs[insn.src] = s.with_(scalar=b)

    def _pointer_jump(self, st, idx, insn, dv, sv, target, is32):
        cond = insn.jmp
        zero = sv.is_scalar and sv.scalar.is_const and sv.scalar.const_value == 0
        if not is32 and zero and cond in (JmpOp.JEQ, JmpOp.JNE):
            if dv.rtype == RegType.PTR_TO_MAP_VALUE_OR_NULL:
                other = st.clone()
                null_st, ok_st = (other, st) if cond == JmpOp.JEQ else (st, other)
                self._mark_null(null_st, dv.id, True)
                self._mark_null(ok_st, dv.id, False)
                st.pc, other.pc = idx + 1, target
                self._note(idx, True, False)
                return [st, other]
            if dv.is_pointer:
                go = cond == JmpOp.JNE
                self._note(idx, go)
                st.pc = target if go else idx + 1
                return [st]
        other = st.clone()
        st.pc, other.pc = idx + 1, target
        self._note(idx, True, False)
        if not is32:
            self._packet_range(st, other, cond, dv, sv)
        return [st, other]

    def _mark_null(self, st: VerifierState, pid: int, is_null: bool) -> None:
        for frame in st.frames:
            for r, reg in enumerate(frame.regs):
                if reg.rtype == RegType.PTR_TO_MAP_VALUE_OR_NULL and reg.id == pid:
                    frame.regs[r] = RegState.const(0) if is_null else \
                        reg.with_(rtype=RegType.PTR_TO_MAP_VALUE)
            for spi, reg in list(frame.stack.spills.items()):
                if reg.rtype == RegType.PTR_TO_MAP_VALUE_OR_NULL and reg.id == pid:
                    frame.stack.spills[spi] = RegState.const(0) if is_null else \
                        reg.with_(rtype=RegType.PTR_TO_MAP_VALUE)

    def _packet_range(self, fall: VerifierState, taken: VerifierState, cond, dv, sv) -> None:
        """Comparisons of a packet pointer against ``data_end`` prove bytes."""
        P, E = RegType.PTR_TO_PACKET, RegType.PTR_TO_PACKET_END
        if dv.rtype == P and sv.rtype == E:
            pkt, side = dv, {JmpOp.JGT: fall, JmpOp.JGE: fall,
                             JmpOp.JLT: taken, JmpOp.JLE: taken}.get(cond)
            strict = cond in (JmpOp.JGE, JmpOp.JLT)
        elif dv.rtype == E and sv.rtype == P:
            pkt, side = sv, {JmpOp.JGT: taken, JmpOp.JGE: taken,
                             JmpOp.JLT: fall, JmpOp.JLE: fall}.get(cond)
            strict = cond in (JmpOp.JGT, JmpOp.JLE)
        else:
            return
        if side is None or not pkt.var_off.is_const:
            return
        proven = pkt.fixed_off + to_signed(pkt.var_off.const_value) + (1 if strict else 0)
        side.path.pkt_range = max(side.path.pkt_range, proven)


def verify(p: Program, helpers: dict[int, HelperSpec] | None = None,
           maps: tuple[MapRef, ...] | None = None, cfg: CfgReport | None = None,
           config: VerifierConfig | None = None) -> VerifiedProgram:
    """Verify ``p``; raises :class:`Rejection` if any path is unsafe."""
    return Verifier(p, helpers, maps, cfg, config).run()


__all__ = ["Verifier", "VerifiedProgram", "VerifierStats", "verify", "abs_unknown"]
