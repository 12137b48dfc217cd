from collections import deque

import pytest
from hypothesis import given, strategies as st

from ubpf_forge.cfg import EdgeKind, check_cfg, compute_liveness, mark_pruning_points, to_dot
from ubpf_forge.corpus import ACCEPTS, DROP_UDP, diamond_chain
from ubpf_forge.isa import parse_asm
from ubpf_forge.rejection import Property, Rejection

COUNTDOWN = "mov64 r1, 3\nL: sub64 r1, 1\njne r1, 0, L\nmov64 r0, 0\nexit"


def kind_of(src):
    with pytest.raises(Rejection) as e:
        check_cfg(parse_asm(src))
    return e.value.kind, e.value.index


def test_single_exit():
    r = check_cfg(parse_asm("exit"))
    assert r.visited == (True,) and r.edges == () and r.pruning_points == frozenset()


def test_unreachable():
    assert kind_of("ja +1\nmov64 r0, 0\nexit") == ("UnreachableInstruction", 1)
    with pytest.raises(Rejection) as e:
        check_cfg(parse_asm("ja +1\nmov64 r0, 0\nexit"))
    assert e.value.property == Property.CONTROL_FLOW


def test_countdown_back_edge():
    r = check_cfg(parse_asm(COUNTDOWN))
    assert [(a, b) for a, b, _ in r.back_edges] == [(2, 1)]
    assert r.pruning_points == {1}


def test_straight_line_no_points():
    r = check_cfg(parse_asm("mov64 r0, 1\nadd64 r0, 2\nexit"))
    assert r.pruning_points == frozenset()
    assert all(k == EdgeKind.TREE for _, _, k in r.edges)


def test_diamond_join_point():
    src = "mov64 r0, 0\njeq r1, 0, A\nmov64 r0, 1\nA: exit"
    r = check_cfg(parse_asm(src))
    assert r.pruning_points == {3}
    kinds = {(a, b): k for a, b, k in r.edges}
    assert kinds[(1, 3)] == EdgeKind.FORWARD_OR_CROSS


def test_point_after_call():
    r = check_cfg(parse_asm(ACCEPTS["subprog_call"]))
    call = next(i for i, x in enumerate(parse_asm(ACCEPTS["subprog_call"]).insns)
                if x.is_subprog_call())
    assert call + 1 in r.pruning_points
    assert r.subprog_call_graph == ((0, 1),)


def test_fallthrough_off_subprog():
    assert kind_of("mov64 r0, 0\ncall f\nexit\n.subprog f\nmov64 r0, 1")[0] == \
        "FallthroughOffSubprog"


def test_jump_out_of_range():
    assert kind_of("ja +5\nexit")[0] == "JumpOutOfRange"
    assert kind_of("call f\nmov64 r0, 0\nexit\n.subprog f\njeq r1, 0, -3\nexit")[0] == \
        "JumpOutOfRange"


def test_recursion_rejected():
    assert kind_of("call f\nmov64 r0, 0\nexit\n.subprog f\ncall f\nexit")[0] == "RecursiveCall"


def test_uncalled_subprog_unreachable():
    assert kind_of("mov64 r0, 0\nexit\n.subprog f\nexit")[0] == "UnreachableInstruction"


def test_empty_program():
    with pytest.raises(Rejection):
        check_cfg(parse_asm(""))


def test_dot_output():
    p = parse_asm(COUNTDOWN)
    dot = to_dot(p, check_cfg(p))
    assert dot.startswith("digraph") and 'label="back"' in dot


def test_liveness_drop_udp():
    p = parse_asm(DROP_UDP)
    live = compute_liveness(p)
    assert live[0] == {1}              # only the ctx pointer matters on entry
    assert live[13] == {0}             # exit reads only r0
    assert live[3] == {2, 3, 4}        # r1 is dead once data/data_end are loaded


@pytest.mark.parametrize("src", [DROP_UDP, diamond_chain(4)] + list(ACCEPTS.values()))
def test_report_invariants(src):
    p = parse_asm(src)
    r = check_cfg(p)
    assert r == check_cfg(p)                       # deterministic
    assert r.pruning_points <= {i for i, v in enumerate(r.visited) if v}
    entries = {s.start for s in p.subprogs}
    incoming = {b for _, b, _ in r.edges}
    for i, insn in enumerate(p.insns):
        if i not in entries:
            assert i in incoming
        if not (insn.is_exit() or insn.is_ja()):
            assert (i, i + 1) in {(a, b) for a, b, _ in r.edges}
    assert mark_pruning_points(p, r) == set(r.pruning_points)


# ---- rejected-iff against an independent reachability oracle

STMT = st.one_of(st.just("mov64 r0, 0"), st.just("exit"),
                 st.integers(-4, 4).map(lambda k: f"ja {k:+d}"),
                 st.integers(-4, 4).map(lambda k: f"jeq r0, 1, {k:+d}"))


def oracle(lines):
    n = len(lines)
    succ = []
    for i, s in enumerate(lines):
        if s == "exit":
            succ.append([])
            continue
        if s.startswith("ja"):
            t = [i + 1 + int(s.split()[1])]
        elif s.startswith("jeq"):
            t = [i + 1, i + 1 + int(s.split(",")[2])]
        else:
            t = [i + 1]
        if i == n - 1 and s != "exit" and not s.startswith("ja"):
            return False
        if any(not 0 <= x < n for x in t):
            return False
        succ.append(t)
    seen, q = {0}, deque([0])
    while q:
        for w in succ[q.popleft()]:
            if w not in seen:
                seen.add(w)
                q.append(w)
    return len(seen) == n


@given(st.lists(STMT, min_size=1, max_size=10))
def test_rejected_iff(lines):
    p = parse_asm("\n".join(lines))
    try:
        check_cfg(p)
        ok = True
    except Rejection:
        ok = False
    assert ok == oracle(lines)
