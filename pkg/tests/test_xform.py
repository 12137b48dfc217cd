import random

import pytest
from hypothesis import given, settings, strategies as st

from ubpf_forge.cfg import check_cfg
from ubpf_forge.corpus import ACCEPTS, DROP_UDP
from ubpf_forge.fuzz import differential, random_input, random_verified_program
from ubpf_forge.isa import JmpOp, Pseudo, format_asm, parse_asm
from ubpf_forge.verifier import verify
from ubpf_forge.xform import _identity, eliminate_dead_code, relayout, rewrite_map_helpers, run_pipeline

ARRAY_LOOKUP = """\
.map m {t} 4 8 4
    stw [r10-4], 1
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:m
    call map_lookup_elem
    jeq r0, 0, out
    ldxdw r0, [r0+0]
    exit
out:
    mov64 r0, 0
    exit
"""


def pipeline(src, **kw):
    p = parse_asm(src)
    return p, run_pipeline(p, verify(p), **kw)


def test_dce_identity_when_everything_seen():
    p = parse_asm(DROP_UDP)
    assert eliminate_dead_code(p).insns == p.insns


def test_relayout_identity():
    p = parse_asm(ACCEPTS["iter_sum"])
    q, first = relayout(p, [_identity(p, i) for i in range(len(p.insns))])
    assert q.insns == p.insns and first[:len(p.insns)] == list(range(len(p.insns)))


def test_decided_branch_removed():
    src = "mov64 r0, 1\njeq r0, 1, a\nmov64 r0, 9\na:\nexit"
    p, xr = pipeline(src)
    body = [ln.strip() for ln in format_asm(xr.program).splitlines()
            if ln.strip() and not ln.startswith(";")]
    assert body == ["mov64 r0, 1", "exit"]
    assert xr.removed == 2


def test_decided_branch_always_not_taken():
    src = "mov64 r0, 1\njeq r0, 2, a\nmov64 r0, 9\na:\nexit"
    _, xr = pipeline(src)
    assert [i.is_cond_jump() for i in xr.program.insns] == [False] * 3


def test_undecided_branch_kept():
    p, xr = pipeline(DROP_UDP)
    assert xr.program.insns == p.insns and xr.removed == 0


def test_array_lookup_inlined():
    _, xr = pipeline(ARRAY_LOOKUP.format(t="array"))
    q = xr.program
    assert not any(i.is_call() for i in q.insns)
    assert any(i.pseudo == Pseudo.MAP_VALUE for i in q.insns)
    assert xr.untrusted_loads == frozenset()


def test_hash_lookup_direct_call():
    _, xr = pipeline(ARRAY_LOOKUP.format(t="hash"))
    calls = [i for i in xr.program.insns if i.is_call()]
    assert len(calls) == 1 and calls[0].pseudo == Pseudo.DIRECT_CALL
    load = next(k for k, i in enumerate(xr.program.insns) if i.cls.name == "LDX"
                and i.src == 0 and k > 0)
    assert load in xr.untrusted_loads


def test_rewrite_skipped_without_exact_map():
    p = parse_asm(ARRAY_LOOKUP.format(t="hash"))
    assert rewrite_map_helpers(p, {}).insns == p.insns


def test_no_maps_unchanged():
    src = "ldxdw r2, [r1+0]\nmov64 r0, 3\nexit"
    p, xr = pipeline(src)
    assert xr.program.insns == p.insns


def test_disabled_stages():
    p, xr = pipeline(ARRAY_LOOKUP.format(t="array"), dce=False, rewrite=False)
    assert xr.program.insns == p.insns


@pytest.mark.parametrize("name", sorted(ACCEPTS))
def test_corpus_stays_well_formed(name):
    _, xr = pipeline(ACCEPTS[name])
    check_cfg(xr.program)


def test_jump_targets_survive_inlining():
    src = ARRAY_LOOKUP.format(t="array").replace("exit\nout:", "ja out\nout:")
    _, xr = pipeline(src)
    q = xr.program
    for k, insn in enumerate(q.insns):
        if insn.is_cond_jump() or insn.is_ja():
            assert 0 <= q.jump_target(k) < len(q.insns)


@settings(max_examples=25)
@given(st.integers(0, 2**32))
def test_dce_properties(seed):
    rng = random.Random(seed)
    src, p, vp = random_verified_program(rng)
    q = eliminate_dead_code(p, vp.seen, vp.branch_outcomes)
    assert len(q.insns) <= len(p.insns)
    # the result still verifies, and a second pass with its own facts changes nothing
    vq = verify(q)
    assert all(vq.seen)
    r = eliminate_dead_code(q, vq.seen, vq.branch_outcomes)
    assert r.insns == q.insns or len(r.insns) < len(q.insns)
    assert eliminate_dead_code(q).insns == q.insns


@settings(max_examples=15)
@given(st.integers(0, 2**32))
def test_pipeline_preserves_behaviour(seed):
    rng = random.Random(seed)
    _, p, vp = random_verified_program(rng)
    assert differential(p, vp, [random_input(rng) for _ in range(3)], seeds=(seed,)) == []
