"""Post-verification rewrites: dead-code elimination and map helper rewriting.

Both passes rebuild the program through :func:`relayout`, which re-targets
every jump and subprog call using an old->new index map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .helpers import HELPERS, MAP_DELETE, MAP_LOOKUP, MAP_UPDATE, HelperSpec
from .isa import (AluOp, Instruction, InsnClass, JmpOp, MapRef, Program, Pseudo, Size, Subprog,
                  alu, direct_call_id, ja, jmp, ldx, mov)

__all__ = ["InternalOffsetFixupError", "XformResult", "relayout", "eliminate_dead_code",
           "rewrite_map_helpers", "array_lookup_template", "run_pipeline"]


class InternalOffsetFixupError(RuntimeError):
    """A jump lost its target during relayout; verified input never does this."""


# one replacement entry: an instruction plus the old index its jump/call
# must land on (None keeps the instruction's own offset, used inside templates)
Piece = tuple[Instruction, "int | None"]


def _is_branch(insn: Instruction) -> bool:
    return insn.is_ja() or insn.is_cond_jump() or insn.is_subprog_call()


def relayout(p: Program, pieces: Sequence[Sequence[Piece]]) -> tuple[Program, list[int]]:
    """Rebuild ``p`` where old instruction ``i`` becomes ``pieces[i]``.

    Returns the new program and, per old index, the new index of the first
    instruction at or after it (``len`` of the new program past the end).
    """
    n = len(p.insns)
    first: list[int] = [0] * (n + 1)
    out: list[tuple[Instruction, int | None]] = []
    for i in range(n):
        first[i] = len(out)
        out.extend(pieces[i])
    first[n] = len(out)

    slots, pos = [], 0
    for insn, _ in out:
        slots.append(pos)
        pos += insn.nslots
    slots.append(pos)

    insns = []
    for k, (insn, old_target) in enumerate(out):
        if old_target is not None:
            t = first[old_target]
            if t >= len(out):
                raise InternalOffsetFixupError(f"jump at new index {k} points past the end")
            disp = slots[t] - slots[k] - 1
            field = "imm" if insn.is_subprog_call() else "offset"
            insn = insn.with_(**{field: disp})
        insns.append(insn)

    names = {first[sp.start]: sp.name for sp in p.subprogs}
    q = Program(tuple(insns), (), p.prog_type, p.map_refs)
    subs = tuple(Subprog(sp.start, sp.length, names.get(sp.start, sp.name)) for sp in q.subprogs)
    return Program(q.insns, subs, p.prog_type, p.map_refs), first


def _identity(p: Program, i: int) -> list[Piece]:
    insn = p.insns[i]
    return [(insn, p.jump_target(i) if _is_branch(insn) else None)]


def _dce(p: Program, seen: Sequence[bool] | None,
         outcomes: Mapping[int, frozenset[bool]] | None) -> tuple[Program, list[int]]:
    n = len(p.insns)
    seen = [True] * n if seen is None else list(seen)
    outcomes = outcomes or {}
    pieces: list[list[Piece]] = []
    for i, insn in enumerate(p.insns):
        if not seen[i]:
            pieces.append([])
            continue
        o = outcomes.get(i)
        if insn.is_cond_jump() and o is not None and len(o) == 1:
            pieces.append([(ja(0), p.jump_target(i))] if True in o else [])
            continue
        pieces.append(_identity(p, i))
    q, first = relayout(p, pieces)
    # drop jumps to the next instruction until none remain
    while True:
        dead = [k for k, insn in enumerate(q.insns) if insn.is_ja() and insn.offset == 0]
        if not dead:
            return q, first
        keep = [[] if k in dead else _identity(q, k) for k in range(len(q.insns))]
        q, step = relayout(q, keep)
        first = [step[f] for f in first]


def eliminate_dead_code(p: Program, seen: Sequence[bool] | None = None,
                        branch_outcomes: Mapping[int, frozenset[bool]] | None = None) -> Program:
    """Remove never-simulated instructions and collapse decided branches.

    ``branch_outcomes`` maps a conditional jump to the outcomes the verifier
    observed; a single outcome turns it into ``ja`` (always taken) or removes
    it (never taken).
    """
    return _dce(p, seen, branch_outcomes)[0]


def array_lookup_template(map_index: int, m: MapRef) -> list[Instruction]:
    """Inline array lookup: bounds-check the u32 key and compute the address.

    Expects the key pointer in r2 and leaves the value pointer (or 0) in r0;
    r1 is clobbered, as a helper call would.
    """
    base = Instruction(InsnClass.LD, Size.DW, dst=1, imm=map_index, wide_imm=0,
                       pseudo=Pseudo.MAP_VALUE)
    return [
        base,
        ldx(Size.W, 0, 2, 0),
        jmp(JmpOp.JGE, 0, 3, imm=m.max_entries),
        alu(AluOp.MUL, 0, imm=m.value_size),
        alu(AluOp.ADD, 0, 1),
        ja(1),
        mov(0, imm=0),
    ]


_MAP_HELPERS = (MAP_LOOKUP, MAP_UPDATE, MAP_DELETE)


def _rewrite(p: Program, call_maps: Mapping[int, frozenset[int]],
             maps: Sequence[MapRef], specs: Mapping[int, HelperSpec]):
    pieces: list[list[Piece]] = []
    direct: set[int] = set()
    for i, insn in enumerate(p.insns):
        ms = call_maps.get(i, frozenset())
        if not (insn.is_call() and insn.pseudo == Pseudo.NONE and insn.imm in _MAP_HELPERS
                and len(ms) == 1):
            pieces.append(_identity(p, i))
            continue
        mi = next(iter(ms))
        m = maps[mi]
        spec = specs[insn.imm]
        if spec.inline_template and m.map_type == "array":
            pieces.append([(t, None) for t in array_lookup_template(mi, m)])
        else:
            pieces.append([(Instruction(InsnClass.JMP, JmpOp.CALL, imm=direct_call_id(
                mi, insn.imm), pseudo=Pseudo.DIRECT_CALL), None)])
            direct.add(i)
    q, first = relayout(p, pieces)
    return q, first, direct


def rewrite_map_helpers(p: Program, call_maps: Mapping[int, frozenset[int]],
                        maps: Sequence[MapRef] | None = None,
                        specs: Mapping[int, HelperSpec] | None = None) -> Program:
    """Inline array lookups and turn other map calls into direct calls.

    ``call_maps`` gives, per call site, the maps the verifier saw in r1; only
    sites bound to exactly one map are rewritten.
    """
    return _rewrite(p, call_maps, p.map_refs if maps is None else maps,
                    HELPERS if specs is None else specs)[0]


@dataclass(frozen=True)
class XformResult:
    program: Program
    untrusted_loads: frozenset[int]   # loads through pointers from hash-map lookups
    removed: int                      # instructions dropped by dead-code elimination


def run_pipeline(p: Program, verified, *, dce: bool = True, rewrite: bool = True) -> XformResult:
    """DCE followed by map-helper rewriting, carrying verifier notes along."""
    n0 = len(p.insns)
    call_maps = dict(verified.helper_maps)
    mv_loads = {k: set(v) for k, v in verified.map_value_loads.items()}
    q = p
    if dce:
        q, first = _dce(p, verified.seen, verified.branch_outcomes)
        call_maps = {first[k]: v for k, v in call_maps.items() if verified.seen[k]}
        mv_loads = {first[k]: {first[o] for o in v} for k, v in mv_loads.items()
                    if verified.seen[k]}
    removed = n0 - len(q.insns)
    # hash values live in separately allocated entries that a delete can free
    lookups = {s for s, ms in call_maps.items() if q.insns[s].imm == MAP_LOOKUP
               and any(q.map_refs[m].map_type == "hash" for m in ms)}
    untrusted = {k for k, origins in mv_loads.items() if origins & lookups}
    if rewrite:
        q, first, _ = _rewrite(q, call_maps, q.map_refs, HELPERS)
        untrusted = {first[k] for k in untrusted}
    return XformResult(q, frozenset(untrusted), removed)
