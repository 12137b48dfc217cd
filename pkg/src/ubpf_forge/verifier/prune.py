"""State equivalence for pruning and backward precision tracking."""

from __future__ import annotations

from ..isa import AluOp, InsnClass, Program, SrcKind
from .state import INVALID, MISC, SPILL, ZERO, Checkpoint, RegState, RegType, VerifierState

CALLEE_SAVED = frozenset({6, 7, 8, 9})


class IdMap:
    """Consistent renaming of pointer/reference ids between two states."""

    def __init__(self):
        self.fwd: dict[int, int] = {}
        self.rev: dict[int, int] = {}

    def check(self, old: int, cur: int) -> bool:
        if old == 0 or cur == 0:
            return old == cur
        if old in self.fwd:
            return self.fwd[old] == cur
        if cur in self.rev:
            return False
        self.fwd[old] = cur
        self.rev[cur] = old
        return True


def regsafe(old: RegState, cur: RegState, ids: IdMap) -> bool:
    """Is every concrete value admitted by ``cur`` already covered by ``old``?"""
    if old.rtype == RegType.NOT_INIT:
        return True
    if cur.rtype != old.rtype:
        return False
    if old.rtype == RegType.SCALAR_VALUE:
        return not old.precise or cur.scalar.within(old.scalar)
    return (old.fixed_off == cur.fixed_off
            and cur.var_off.within(old.var_off)
            and old.mem_len == cur.mem_len
            and old.map_index == cur.map_index
            and old.frameno == cur.frameno
            and ids.check(old.id, cur.id)
            and (old.stale or not cur.stale)
            and ids.check(old.ref_id, cur.ref_id))


def _stacksafe(old, cur, ids: IdMap) -> bool:
    ot, ct = old.tags, cur.tags
    for b in range(len(ot)):
        o = ot[b]
        if o == INVALID:
            continue
        c = ct[b]
        if o == MISC:
            if c == INVALID:
                return False
        elif o == ZERO:
            if c != ZERO:
                return False
        elif o == SPILL:
            if c != SPILL:
                return False
            if b % 8 == 0 and not regsafe(old.spills[b // 8], cur.spills[b // 8], ids):
                return False
    return True


def live_regs(state: VerifierState, frameno: int, liveness, idx: int) -> frozenset[int]:
    """Registers that matter for frame ``frameno`` when resuming at ``idx``."""
    if frameno == state.depth:
        return liveness[idx]
    resume = state.frames[frameno + 1].callsite + 1
    return liveness[resume] & CALLEE_SAVED if resume < len(liveness) else CALLEE_SAVED


def states_equal(old: VerifierState, cur: VerifierState, liveness, idx: int) -> bool:
    if len(old.frames) != len(cur.frames):
        return False
    ids = IdMap()
    op, cp = old.path, cur.path
    if (op.lock is None) != (cp.lock is None):
        return False
    if op.lock is not None and (op.lock[0] != cp.lock[0] or not ids.check(op.lock[1], cp.lock[1])):
        return False
    if sorted(op.acquired_refs.values()) != sorted(cp.acquired_refs.values()):
        return False
    if {k: v[0] for k, v in op.iter_states.items()} != {k: v[0] for k, v in cp.iter_states.items()}:
        return False
    if cp.pkt_range < op.pkt_range:
        return False
    for f, (fo, fc) in enumerate(zip(old.frames, cur.frames)):
        if fo.callsite != fc.callsite:
            return False
        for r in live_regs(old, f, liveness, idx):
            if not regsafe(fo.regs[r], fc.regs[r], ids):
                return False
        if not _stacksafe(fo.stack, fc.stack, ids):
            return False
    return True


# ---------------------------------------------------------------- precision

def backtrack_insn(prog: Program, idx: int, regs: set[int], slots: set, slot) -> None:
    """Update the precision demand set when stepping backwards over ``idx``."""
    insn = prog.insns[idx]
    c = insn.cls
    if c.is_alu:
        d = insn.dst
        if d not in regs:
            return
        if insn.op == AluOp.MOV:
            regs.discard(d)
            if insn.src_kind == SrcKind.X:
                regs.add(insn.src)
        elif insn.src_kind == SrcKind.X and insn.op not in (AluOp.NEG, AluOp.END):
            regs.add(insn.src)
    elif c == InsnClass.LD:
        regs.discard(insn.dst)
    elif c == InsnClass.LDX:
        if insn.dst in regs:
            regs.discard(insn.dst)
            if slot is not None:
                slots.add(slot)
    elif c in (InsnClass.STX, InsnClass.ST):
        if slot is not None and slot in slots:
            slots.discard(slot)
            if c == InsnClass.STX:
                regs.add(insn.src)
    elif insn.is_call():
        for r in range(6):
            regs.discard(r)
    regs.discard(10)


def propagate_precision(prog: Program, trace, regs) -> list[tuple[int, frozenset[int]]]:
    """Walk a straight-line ``trace`` of ``(idx, depth, slot)`` entries backwards.

    Returns ``(idx, demand)`` pairs: the registers required precise just
    before each step, starting from ``regs`` demanded after the last one.
    """
    demand, slots = set(regs), set()
    out = []
    for idx, _depth, slot in reversed(list(trace)):
        backtrack_insn(prog, idx, demand, slots, slot)
        out.append((idx, frozenset(demand)))
        if not demand and not slots:
            break
    return out


def _mark_in(state: VerifierState, depth: int, regs, slots) -> None:
    frame = state.frames[depth]
    for r in regs:
        reg = frame.regs[r]
        if reg.is_scalar and not reg.precise:
            frame.regs[r] = reg.with_(precise=True)
    for fno, spi in slots:
        stack = state.frames[fno].stack
        reg = stack.spills.get(spi)
        if reg is not None and reg.is_scalar and not reg.precise:
            stack.spills[spi] = reg.with_(precise=True)


def _mark_all(state: VerifierState) -> None:
    for frame in state.frames:
        for r, reg in enumerate(frame.regs):
            if reg.is_scalar and not reg.precise:
                frame.regs[r] = reg.with_(precise=True)
        for spi, reg in list(frame.stack.spills.items()):
            if reg.is_scalar and not reg.precise:
                frame.stack.spills[spi] = reg.with_(precise=True)


def mark_all_precise(state: VerifierState) -> None:
    """Conservative fallback: every scalar on this path and its ancestors."""
    _mark_all(state)
    cp = state.parent
    while cp is not None:
        _mark_all(cp.state)
        cp = cp.parent


def mark_chain_precision(prog: Program, state: VerifierState, regs: set[int],
                         slots: set | None = None) -> None:
    """Mark ``regs`` precise in ``state`` and push the demand back through
    the recorded history into ancestor checkpoints."""
    regs = set(regs) - {10}
    slots = set(slots or ())
    depth = state.depth
    _mark_in(state, depth, regs, slots)
    trace = state.trace
    cp: Checkpoint | None = state.parent
    while regs or slots:
        for idx, d, slot in reversed(trace):
            if d != depth:
                mark_all_precise(state)
                return
            backtrack_insn(prog, idx, regs, slots, slot)
            if not regs and not slots:
                return
        if cp is None:
            return
        if cp.state.depth != depth:
            mark_all_precise(state)
            return
        _mark_in(cp.state, depth, regs, slots)
        trace = cp.trace
        cp = cp.parent


def precise_demand(state: VerifierState) -> tuple[set[int], set, bool]:
    """Precise scalars of a cached state: top-frame regs, slots, and whether
    any lower frame holds one."""
    top = state.depth
    regs = {r for r, reg in enumerate(state.frames[top].regs) if reg.is_scalar and reg.precise}
    slots = set()
    lower = False
    for f, frame in enumerate(state.frames):
        for spi, reg in frame.stack.spills.items():
            if reg.is_scalar and reg.precise:
                if f == top:
                    slots.add((f, spi))
                else:
                    lower = True
        if f != top and any(r.is_scalar and r.precise for r in frame.regs):
            lower = True
    return regs, slots, lower


__all__ = ["IdMap", "regsafe", "states_equal", "live_regs", "backtrack_insn",
           "propagate_precision", "mark_chain_precision", "mark_all_precise", "precise_demand"]
