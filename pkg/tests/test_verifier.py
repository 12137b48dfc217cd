import random

import pytest
from hypothesis import given, settings, strategies as st

from ubpf_forge.corpus import (ACCEPTS, DROP_UDP, REJECTS, diamond_chain, unconverging_iter_loop)
from ubpf_forge.fuzz import random_program
from ubpf_forge.isa import parse_asm
from ubpf_forge.rejection import KIND_PROPERTY, Property, Rejection
from ubpf_forge.verifier import VerifierConfig, verify

LOOKUP = """\
.map m {t} 4 8 4
    stw [r10-4], 0
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:m
    call map_lookup_elem
"""


def lookup(t="array"):
    return LOOKUP.format(t=t)


def reject(src, **cfg):
    with pytest.raises(Rejection) as e:
        verify(parse_asm(src), config=VerifierConfig(**cfg) if cfg else None)
    return e.value


def accept(src, **cfg):
    return verify(parse_asm(src), config=VerifierConfig(**cfg) if cfg else None)


def test_minimal_accept():
    vp = accept("mov64 r0, 0\nexit")
    assert vp.insn_processed == 2


def test_bare_exit():
    r = reject("exit")
    assert r.kind == "UninitializedReturn" and r.property == Property.CONTEXT


def test_drop_udp_accepted():
    vp = accept(DROP_UDP)
    assert all(vp.seen)


@pytest.mark.parametrize("prop", list(REJECTS), ids=lambda p: p.name)
def test_reject_corpus(prop):
    src, kind = REJECTS[prop]
    r = reject(src)
    assert r.kind == kind and r.property == prop
    assert r.log[-1].startswith(f"{r.index}: REJECT")


@pytest.mark.parametrize("name", sorted(ACCEPTS))
def test_accept_corpus(name):
    accept(ACCEPTS[name])


def test_log_format():
    vp = accept("mov64 r0, 1\nexit")
    assert vp.log[0].startswith("0: mov64 r0, 1 ; r0=")
    r = reject("ldxdw r0, [r10-8]\nexit")
    assert r.reject_line().startswith("REJECT Information Leak Safety at 0:")


# ---- registers and arithmetic

CASES = {
    "mov64 r10, 0\nmov64 r0, 0\nexit": "WriteToR10",
    "mov64 r0, r5\nexit": "UninitializedRead",
    "mov64 r2, 0\nldxdw r0, [r2+0]\nexit": "InvalidPointer",
    "ldxw r0, [r1+2]\nexit": "MisalignedAccess",
    "stdw [r10-8], 0\nldxw r0, [r10-6]\nexit": "MisalignedAccess",
    "mov64 r0, r10\nexit": "PointerLeak",
    "mov64 r0, r10\nsub64 r0, r1\nexit": "BadPointerArithmetic",
    "call 99\nmov64 r0, 0\nexit": "UnknownHelper",
    "stdw [r10-520], 0\nmov64 r0, 0\nexit": "OutOfBounds",
    "stxdw [r10-8], r1\nldxw r0, [r10-8]\nexit": "InvalidSpillFill",
    "stdw [r1+0], 0\nmov64 r0, 0\nexit": "KernelStateWrite",
    "ldxdw r2, [r1+0]\nldxb r0, [r2+0]\nexit": "OutOfBounds",
    "mov64 r1, r10\ncall release_test_ref\nmov64 r0, 0\nexit": "ArgTypeMismatch",
}


@pytest.mark.parametrize("src,kind", CASES.items())
def test_rejection_kinds(src, kind):
    r = reject(src)
    assert r.kind == kind
    assert r.property == KIND_PROPERTY[kind]


def test_ctx_read_ok_and_spill_fill():
    accept("ldxdw r2, [r1+0]\nstxdw [r10-8], r2\nldxdw r3, [r10-8]\nmov64 r0, 0\nexit")


PKT = """\
    ldxdw r2, [r1+0]
    ldxdw r3, [r1+8]
    mov64 r4, r2
    add64 r4, {guard}
    jgt r4, r3, out
    ldxh r0, [r2+12]
    exit
out:
    mov64 r0, 2
    exit
"""


def test_packet_guard():
    accept(PKT.format(guard=14))
    r = reject(PKT.format(guard=13))
    assert r.kind == "OutOfBounds"


def test_packet_variable_offset():
    src = """\
    ldxdw r2, [r1+0]
    ldxdw r3, [r1+8]
    mov64 r4, r2
    add64 r4, 16
    jgt r4, r3, out
    ldxb r5, [r2+0]
    and64 r5, 7
    add64 r2, r5
    ldxdw r0, [r2+0]
    exit
out:
    mov64 r0, 2
    exit
"""
    # offset in [0, 7] plus 8 bytes fits the 16-byte guard only with alignment relaxed;
    # byte loads are always fine
    accept(src.replace("ldxdw r0, [r2+0]", "ldxb r0, [r2+8]"))
    r = reject(src.replace("ldxdw r0, [r2+0]", "ldxb r0, [r2+9]"))
    assert r.kind == "OutOfBounds"


def test_variable_stack_offset_rejected():
    src = PKT.format(guard=1).replace("    ldxh r0, [r2+12]\n", """\
    ldxb r5, [r2+0]
    mov64 r6, r10
    add64 r6, r5
    stb [r6-300], 0
    mov64 r0, 0
""")
    assert reject(src).kind == "InvalidPointer"


# ---- maps, null checks, pointer escape

def test_lookup_requires_null_check():
    assert reject(lookup() + "ldxdw r0, [r0+0]\nexit").kind == "NullDeref"


def test_map_value_bounds():
    ok = lookup() + "jeq r0, 0, out\nldxdw r0, [r0+0]\nexit\nout:\nmov64 r0, 0\nexit"
    accept(ok)
    r = reject(ok.replace("[r0+0]", "[r0+8]"))
    assert r.kind == "OutOfBounds"


def test_pointer_into_map_value():
    r = reject(lookup() + "jeq r0, 0, out\nstxdw [r0+0], r10\nout:\nmov64 r0, 0\nexit")
    assert r.kind == "PointerLeak"


def test_null_fork_logged():
    vp = accept(lookup("hash") + "jeq r0, 0, out\nldxdw r0, [r0+0]\nexit\nout:\nmov64 r0, 0\nexit")
    text = "\n".join(vp.log)
    assert "map_value_or_null" in text and "fork" in text


# ---- resources and locks

def test_resource_leak():
    r = reject("call acquire_test_ref\nmov64 r0, 0\nexit")
    assert r.kind == "ResourceLeak" and r.property == Property.RESOURCE


def test_double_release():
    src = """\
    call acquire_test_ref
    jeq r0, 0, out
    mov64 r6, r0
    mov64 r1, r0
    call release_test_ref
    mov64 r1, r6
    call release_test_ref
out:
    mov64 r0, 0
    exit
"""
    assert reject(src).kind == "DoubleRelease"


def test_use_after_release():
    src = """\
    call acquire_test_ref
    jeq r0, 0, out
    mov64 r6, r0
    mov64 r1, r0
    call release_test_ref
    ldxdw r0, [r6+0]
    exit
out:
    mov64 r0, 0
    exit
"""
    assert reject(src).kind == "UseAfterRelease"


LOCKED = lookup() + """\
    jeq r0, 0, out
    mov64 r6, r0
    mov64 r1, r0
    call spin_lock
{body}
out:
    mov64 r0, 0
    exit
"""


def test_lock_unlock_ok():
    accept(LOCKED.format(body="    mov64 r1, r6\n    call spin_unlock"))


def test_exit_while_locked():
    assert reject(LOCKED.format(body="")).kind == "ExitWhileLocked"


def test_call_while_locked():
    body = "    mov64 r1, r10\n    add64 r1, -4\n    mov64 r2, 4\n    call trace_emit\n" \
           "    mov64 r1, r6\n    call spin_unlock"
    assert reject(LOCKED.format(body=body)).kind == "CallWhileLocked"


def test_unlock_without_lock():
    src = lookup() + "jeq r0, 0, out\nmov64 r1, r0\ncall spin_unlock\nout:\nmov64 r0, 0\nexit"
    assert reject(src).kind == "UnlockWithoutLock"


def test_lock_region_mismatch():
    two = """\
.map a array 4 8 4
.map b array 4 8 4
    stw [r10-4], 0
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:a
    call map_lookup_elem
    jeq r0, 0, out
    mov64 r6, r0
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:b
    call map_lookup_elem
    jeq r0, 0, out
    mov64 r7, r0
    mov64 r1, r6
    call spin_lock
    mov64 r1, r7
    call spin_unlock
out:
    mov64 r0, 0
    exit
"""
    r = reject(two)
    assert r.kind == "LockRegionMismatch" and r.property == Property.DEADLOCK
    deadlock, kind = REJECTS[Property.DEADLOCK]
    assert kind == "SecondLockHeld"


# ---- calls

def test_callee_sees_own_frame():
    src = """\
    mov64 r1, 5
    call f
    exit
.subprog f
    stdw [r10-8], 1
    ldxdw r0, [r10-8]
    add64 r0, r1
    exit
"""
    accept(src)


def test_callee_returning_stack_pointer():
    src = "call f\nmov64 r0, 0\nexit\n.subprog f\nmov64 r0, r10\nexit"
    assert reject(src).kind == "InvalidPointer"


def test_callee_cannot_read_caller_r6():
    src = "mov64 r6, 1\ncall f\nexit\n.subprog f\nmov64 r0, r6\nexit"
    assert reject(src).kind == "UninitializedRead"


def test_r1_to_r5_clobbered_after_helper():
    src = "mov64 r2, 1\ncall acquire_test_ref\nmov64 r0, r2\nexit"
    assert reject(src).kind == "UninitializedRead"


def test_call_depth_limit():
    lines = ["call f0", "mov64 r0, 0", "exit"]
    for k in range(10):
        lines += [f".subprog f{k}", f"call f{k + 1}", "mov64 r0, 0", "exit"]
    lines += [".subprog f10", "mov64 r0, 0", "exit"]
    assert reject("\n".join(lines)).kind == "CallStackOverflow"
    accept("\n".join(lines), max_call_depth=16)


# ---- loops and termination

def test_countdown_unrolls():
    vp = accept("mov64 r1, 3\nL: sub64 r1, 1\njne r1, 0, L\nmov64 r0, 0\nexit")
    assert vp.insn_processed == 1 + 3 * 2 + 2


def test_jmp_self_hits_limit_exactly():
    r = reject("self: ja self", complexity_limit=1000)
    assert r.kind == "ComplexityLimitExceeded" and r.insn_processed == 1000


def test_unconverging_iterator_hits_limit():
    r = reject(unconverging_iter_loop(), complexity_limit=1000)
    assert r.kind == "ComplexityLimitExceeded" and r.insn_processed == 1000


def test_iterator_loop_converges():
    vp = accept(ACCEPTS["iter_sum"])
    assert vp.stats.pruned >= 1 and vp.insn_processed < 200


def test_iterator_slot_clobber():
    src = ACCEPTS["iter_sum"]
    # overwrite the iterator's first word before destroying it
    assert "call iter_num_destroy" in src
    bad = src.replace("    call iter_num_destroy",
                      "    stdw [r10-16], 0\n    call iter_num_destroy", 1)
    assert reject(bad).kind in ("IteratorClobber", "ArgTypeMismatch")


def test_budget_monotone_on_accept():
    for src in list(ACCEPTS.values()) + [DROP_UDP]:
        vp = accept(src, complexity_limit=5000)
        assert vp.insn_processed <= 5000


# ---- pruning

def test_pruning_cuts_diamonds():
    on = accept(diamond_chain(12))
    off = accept(diamond_chain(12), pruning_enabled=False)
    assert off.states_explored == 2**12 + 1
    assert on.states_explored * 10 <= off.states_explored


def verdict(src, **cfg):
    try:
        accept(src, **cfg)
        return "accept"
    except Rejection as r:
        return r.kind


@pytest.mark.parametrize("src", list(ACCEPTS.values()) + [s for s, _ in REJECTS.values()
                                                          if "ja self" not in s])
def test_pruning_does_not_change_verdict(src):
    # iterator loops only converge through pruning; an exhausted budget without
    # pruning says nothing about the verdict
    off = verdict(src, pruning_enabled=False)
    if off != "ComplexityLimitExceeded":
        assert verdict(src) == off


@settings(max_examples=40)
@given(st.integers(0, 2**32))
def test_pruning_verdict_random(seed):
    src = random_program(random.Random(seed))
    off = verdict(src, pruning_enabled=False)
    if off != "ComplexityLimitExceeded":
        assert verdict(src) == off


# ---- stale map value pointers

STALE = """\
.map h {t} 4 8 4
.map g hash 4 8 4
    stw [r10-4], 1
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:h
    call map_lookup_elem
    jeq r0, 0, miss
    mov64 r6, r0
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:{deleted}
    call map_delete_elem
{use}
    mov64 r0, 0
    exit
miss:
    mov64 r0, 0
    exit
"""


def stale(use, t="hash", deleted="h"):
    return STALE.format(t=t, deleted=deleted, use=use)


def test_store_after_delete_rejected():
    r = reject(stale("    stdw [r6+0], 1"))
    assert r.kind == "StaleMapValueWrite" and r.property == Property.MEMORY


def test_load_after_delete_accepted():
    accept(stale("    ldxdw r7, [r6+0]"))


def test_stale_pointer_as_helper_argument_rejected():
    r = reject(stale("    mov64 r1, r6\n    mov64 r2, 8\n    call trace_emit"))
    assert r.kind == "StaleMapValueWrite"


def test_stale_pointer_survives_spill():
    use = "    stxdw [r10-16], r6\n    ldxdw r7, [r10-16]\n    stdw [r7+0], 1"
    assert reject(stale(use)).kind == "StaleMapValueWrite"


def test_delete_on_other_map_keeps_pointer_fresh():
    accept(stale("    stdw [r6+0], 1", deleted="g"))


def test_array_entries_never_go_stale():
    accept(stale("    stdw [r6+0], 1", t="array", deleted="h"))
