"""Control-flow graph validation: the first verifier pass.

Runs an explicit-stack depth-first search from every subprog entry, classifies
edges, rejects structurally invalid programs and picks pruning points.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .helpers import ITER_NEXT
from .isa import AluOp, InsnClass, Program, Pseudo, SrcKind
from .rejection import Rejection

__all__ = ["EdgeKind", "CfgReport", "check_cfg", "mark_pruning_points",
           "successors", "compute_liveness", "to_dot"]

WHITE, GREY, BLACK = 0, 1, 2


class EdgeKind(str, Enum):
    TREE = "tree"
    BACK = "back"
    FORWARD_OR_CROSS = "forward/cross"


@dataclass(frozen=True)
class CfgReport:
    visited: tuple[bool, ...]
    edges: tuple[tuple[int, int, EdgeKind], ...]
    back_edges: tuple[tuple[int, int, EdgeKind], ...]
    pruning_points: frozenset[int]
    subprog_call_graph: tuple[tuple[int, int], ...]


def successors(p: Program, i: int) -> list[int]:
    """Intra-subprog successors; a subprog call falls through to i+1."""
    insn = p.insns[i]
    if insn.is_exit():
        return []
    if insn.is_ja():
        t = p.jump_target(i)
        return [] if t is None else [t]
    out = [i + 1]
    if insn.is_cond_jump():
        t = p.jump_target(i)
        if t is not None:
            out.append(t)
    return out


def _check_structure(p: Program) -> list[list[int]]:
    n = len(p.insns)
    succ: list[list[int]] = []
    for k, sp in enumerate(p.subprogs):
        end = sp.start + sp.length
        for i in range(sp.start, end):
            insn = p.insns[i]
            if insn.is_ja() or insn.is_cond_jump() or insn.is_subprog_call():
                t = p.jump_target(i)
                if t is None:
                    raise Rejection("JumpOutOfRange", i, "jump target outside the program")
                if insn.is_subprog_call():
                    if t not in {s.start for s in p.subprogs}:
                        raise Rejection("JumpOutOfRange", i, "call target is not a subprog entry")
                elif not sp.start <= t < end:
                    raise Rejection("JumpOutOfRange", i, f"jump to {t} leaves subprog {k}")
            if i == end - 1 and not (insn.is_exit() or insn.is_ja()):
                raise Rejection("FallthroughOffSubprog", i,
                                "last instruction of a subprog must be exit or ja")
    for i in range(n):
        succ.append(successors(p, i))
    return succ


def _call_graph(p: Program) -> list[tuple[int, int]]:
    edges = []
    for i, insn in enumerate(p.insns):
        if insn.is_subprog_call():
            caller = p.subprog_of(i)
            callee = p.subprog_of(p.jump_target(i))
            if (caller, callee) not in edges:
                edges.append((caller, callee))
    return edges


def _check_call_graph(p: Program, cg: list[tuple[int, int]]) -> None:
    adj: dict[int, list[int]] = {}
    for a, b in cg:
        adj.setdefault(a, []).append(b)
    color = [WHITE] * len(p.subprogs)
    stack = [(0, iter(adj.get(0, ())))]
    color[0] = GREY
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            color[node] = BLACK
            stack.pop()
        elif color[nxt] == GREY:
            site = next(i for i, insn in enumerate(p.insns) if insn.is_subprog_call()
                        and p.subprog_of(i) == node and p.subprog_of(p.jump_target(i)) == nxt)
            raise Rejection("RecursiveCall", site, f"recursive call into subprog {nxt}")
        elif color[nxt] == WHITE:
            color[nxt] = GREY
            stack.append((nxt, iter(adj.get(nxt, ()))))
    for k, c in enumerate(color):
        if c == WHITE:
            raise Rejection("UnreachableInstruction", p.subprogs[k].start,
                            f"subprog {k} is never called")


def check_cfg(p: Program) -> CfgReport:
    n = len(p.insns)
    if n == 0:
        raise Rejection("EmptyProgram", -1, "no instructions")
    succ = _check_structure(p)
    cg = _call_graph(p)
    _check_call_graph(p, cg)

    state = [WHITE] * n
    scanned = [0] * n
    edges: list[tuple[int, int, EdgeKind]] = []
    for sp in p.subprogs:
        stack = [sp.start]
        state[sp.start] = GREY
        while stack:
            t = stack[-1]
            if scanned[t] < len(succ[t]):
                w = succ[t][scanned[t]]
                scanned[t] += 1
                if state[w] == WHITE:
                    edges.append((t, w, EdgeKind.TREE))
                    state[w] = GREY
                    stack.append(w)
                elif state[w] == GREY:
                    edges.append((t, w, EdgeKind.BACK))
                else:
                    edges.append((t, w, EdgeKind.FORWARD_OR_CROSS))
            else:
                state[t] = BLACK
                stack.pop()
    for i in range(n):
        if state[i] != BLACK:
            raise Rejection("UnreachableInstruction", i, f"instruction {i} is unreachable")
    back = tuple(e for e in edges if e[2] == EdgeKind.BACK)
    report = CfgReport(tuple(s == BLACK for s in state), tuple(edges), back,
                       frozenset(), tuple(cg))
    return CfgReport(report.visited, report.edges, report.back_edges,
                     frozenset(mark_pruning_points(p, report)), report.subprog_call_graph)


def mark_pruning_points(p: Program, r: CfgReport) -> set[int]:
    """Join points, back-edge targets, the instruction after each call,
    and iterator-advance call sites."""
    incoming: dict[int, int] = {}
    for _, w, _kind in r.edges:
        incoming[w] = incoming.get(w, 0) + 1
    points = {w for w, c in incoming.items() if c > 1}
    points |= {w for _, w, _kind in r.back_edges}
    for i, insn in enumerate(p.insns):
        if insn.is_call():
            if i + 1 < len(p.insns) and p.subprog_of(i + 1) == p.subprog_of(i):
                points.add(i + 1)
            if insn.pseudo == Pseudo.NONE and insn.imm == ITER_NEXT:
                points.add(i)
    return {i for i in points if r.visited[i]}


def _uses_defs(p: Program, i: int) -> tuple[set[int], set[int]]:
    insn = p.insns[i]
    c = insn.cls
    if c.is_alu:
        uses = set() if insn.op == AluOp.MOV else {insn.dst}
        if insn.src_kind == SrcKind.X and insn.op not in (AluOp.NEG, AluOp.END):
            uses.add(insn.src)
        return uses, {insn.dst}
    if c == InsnClass.LD:
        return set(), {insn.dst}
    if c == InsnClass.LDX:
        return {insn.src}, {insn.dst}
    if c == InsnClass.STX:
        return {insn.dst, insn.src}, set()
    if c == InsnClass.ST:
        return {insn.dst}, set()
    if insn.is_exit():
        return {0}, set()
    if insn.is_call():
        return {1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}
    if insn.is_cond_jump():
        uses = {insn.dst}
        if insn.src_kind == SrcKind.X:
            uses.add(insn.src)
        return uses, set()
    return set(), set()


def compute_liveness(p: Program) -> tuple[frozenset[int], ...]:
    """Registers r0-r9 live on entry to each instruction (backward dataflow)."""
    n = len(p.insns)
    ud = [_uses_defs(p, i) for i in range(n)]
    succ = [successors(p, i) for i in range(n)]
    live = [frozenset()] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            out = set()
            for s in succ[i]:
                if s < n:
                    out |= live[i] if s == i else live[s]
            uses, defs = ud[i]
            new = frozenset(((out - defs) | uses) - {10})
            if new != live[i]:
                live[i] = new
                changed = True
    return tuple(live)


def to_dot(p: Program, r: CfgReport) -> str:
    from .isa import format_insn
    lines = ["digraph cfg {", "  node [shape=box, fontname=monospace];"]
    for i, insn in enumerate(p.insns):
        label = f"{i}: {format_insn(insn, maps=p.map_refs)}".replace('"', '\\"')
        lines.append(f'  n{i} [label="{label}"];')
    for a, b, kind in r.edges:
        style = ", style=dashed" if kind == EdgeKind.BACK else ""
        lines.append(f'  n{a} -> n{b} [label="{kind.value}"{style}];')
    for a, b in r.subprog_call_graph:
        lines.append(f'  n{p.subprogs[a].start} -> n{p.subprogs[b].start} '
                     f'[label="call", style=dotted];')
    lines.append("}")
    return "\n".join(lines) + "\n"
