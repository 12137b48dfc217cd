import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from absdom_oracle import all_tnums, concrete, from_tnum, gamma, member_mask, pairs, tightest_tnum
from ubpf_forge.absdom import (ScalarAbs, Tnum, UnsupportedOp, abs_alu, abs_const, abs_contains,
                               abs_from_range, abs_join, abs_refine_branch, abs_unknown,
                               branch_outcome, concrete_alu, concrete_cond, sync, to_signed)
from ubpf_forge.isa import AluOp, JmpOp

M64 = 2**64 - 1
BINARY = [AluOp.ADD, AluOp.SUB, AluOp.MUL, AluOp.DIV, AluOp.MOD, AluOp.OR, AluOp.AND,
          AluOp.XOR, AluOp.LSH, AluOp.RSH, AluOp.ARSH, AluOp.MOV]
CONDS = [op for op in JmpOp if op.is_conditional]


def tn(v, m, bits=64):
    return from_tnum(v, m, bits)


def test_const():
    z = abs_const(0)
    assert z.tnum == Tnum(0, 0) and (z.umin, z.umax, z.smin, z.smax) == (0, 0, 0, 0)
    assert abs_const(5).tnum == Tnum(5, 0)
    big = abs_const(2**63)
    assert big.smin == big.smax == -2**63 and big.umin == big.umax == 2**63


def test_unknown():
    u = abs_unknown()
    assert u.tnum.mask == M64 and u.tnum.card_log2() == 64
    rng = random.Random(0)
    assert all(u.contains(rng.getrandbits(64)) for _ in range(100))
    assert abs_join(abs_const(17), u) == u


def test_add_examples():
    assert abs_alu(AluOp.ADD, abs_const(5), abs_const(3)) == abs_const(8)
    r = abs_alu(AluOp.ADD, tn(0, 1), tn(0, 1))
    assert r.tnum == Tnum(0, 3)
    assert all(r.contains(x) for x in (0, 1, 2))


def test_and_example():
    r = abs_alu(AluOp.AND, abs_unknown(), abs_const(0xF0))
    assert r.tnum == Tnum(0, 0xF0) and r.umax == 0xF0


def test_div_by_range_with_zero_is_unknown():
    r = abs_alu(AluOp.DIV, abs_const(100), abs_from_range(0, 4))
    assert r.is_unknown


def test_alu_rejects_jump_codes():
    with pytest.raises(UnsupportedOp):
        abs_alu(JmpOp.JEQ, abs_const(1), abs_const(1))
    with pytest.raises(UnsupportedOp):
        abs_refine_branch(JmpOp.EXIT, abs_const(1), abs_const(1))


def test_alu32_zero_extends():
    r = abs_alu(AluOp.ADD, abs_const(0xFFFFFFFF), abs_const(1), 32)
    assert r == abs_const(0)
    r = abs_alu(AluOp.MOV, abs_unknown(), abs_unknown(), 32)
    assert r.umax == 0xFFFFFFFF


def test_refine_jeq():
    taken, _ = abs_refine_branch(JmpOp.JEQ, abs_unknown(), abs_const(7))
    assert taken[0] == abs_const(7)


def test_refine_jgt():
    taken, not_taken = abs_refine_branch(JmpOp.JGT, abs_unknown(), abs_const(10))
    assert taken[0].umin == 11
    assert not_taken[0].umax == 10


def test_refine_jset():
    taken, not_taken = abs_refine_branch(JmpOp.JSET, tn(0, 1), abs_const(1))
    assert taken[0] == abs_const(1)
    assert not_taken[0] == abs_const(0)


def test_branch_outcome_decided():
    assert branch_outcome(JmpOp.JGT, abs_from_range(20, 30), abs_const(10)) is True
    assert branch_outcome(JmpOp.JEQ, abs_const(3), abs_const(4)) is False
    assert branch_outcome(JmpOp.JEQ, abs_unknown(), abs_const(4)) is None


def test_contains():
    assert abs_contains(abs_const(5), 5)
    assert not abs_contains(abs_const(5), 6)
    assert abs_contains(tn(2, 1), 3)


def test_join():
    assert abs_join(abs_const(4), abs_const(4)) == abs_const(4)
    assert abs_join(abs_const(4), abs_const(5)).tnum == Tnum(4, 1)
    assert abs_join(abs_const(4), abs_unknown()) == abs_unknown()


def test_signed_straddle_widens():
    # unsigned range crossing 2**63 says nothing about the signed range
    r = abs_from_range(2**63 - 2, 2**63 + 2)
    assert (r.smin, r.smax) == (-2**63, 2**63 - 1)


def test_concrete_div_mod_by_zero():
    assert concrete_alu(AluOp.DIV, 9, 0) == 0
    assert concrete_alu(AluOp.MOD, 9, 0) == 9


# ---- exhaustive 8-bit checks on a structured slice (the full run lives in the acceptance suite)

SLICE = [t for t in all_tnums(8) if bin(t[1]).count("1") <= 1][:200] + [(0, 255), (0x10, 0x0F)]


@pytest.mark.parametrize("op", BINARY, ids=lambda o: o.name)
def test_alu_sound_8bit_slice(op):
    rng = random.Random(op)
    for a, b in rng.sample([(x, y) for x in SLICE for y in SLICE], 300):
        A, B = from_tnum(*a), from_tnum(*b)
        r = abs_alu(op, A, B, 8)
        xs, ys = pairs(gamma(*a), gamma(*b))
        assert member_mask(r, concrete(op, xs, ys)).all(), (op, a, b, r)


def test_add_optimal_4bit_exhaustive():
    ts = all_tnums(4)
    for a in ts:
        for b in ts:
            xs, ys = pairs(gamma(*a, 4), gamma(*b, 4))
            got = Tnum(*a).add(Tnum(*b), 4)
            assert got == tightest_tnum((xs + ys) & 15), (a, b)


@pytest.mark.parametrize("op", CONDS, ids=lambda o: o.name)
def test_refine_sound_8bit_slice(op):
    from absdom_oracle import cond
    rng = random.Random(int(op))
    for a, b in rng.sample([(x, y) for x in SLICE for y in SLICE], 200):
        A, B = from_tnum(*a), from_tnum(*b)
        taken, not_taken = abs_refine_branch(op, A, B, 8)
        xs, ys = pairs(gamma(*a), gamma(*b))
        c = cond(op, xs, ys)
        for side, sel in ((taken, c), (not_taken, ~c)):
            if not sel.any():
                continue
            assert side is not None
            assert member_mask(side[0], xs[sel]).all() and member_mask(side[1], ys[sel]).all()


# ---- 64-bit property tests

@st.composite
def abstract(draw):
    kind = draw(st.sampled_from(["const", "range", "tnum", "unknown"]))
    if kind == "const":
        return abs_const(draw(st.integers(0, M64)))
    if kind == "range":
        lo = draw(st.integers(0, M64))
        hi = draw(st.integers(lo, min(M64, lo + draw(st.sampled_from([1, 255, 2**20, 2**40])))))
        return abs_from_range(lo, hi)
    if kind == "tnum":
        m = draw(st.integers(0, M64))
        v = draw(st.integers(0, M64)) & ~m
        return tn(v, m)
    return abs_unknown()


def member(draw, a: ScalarAbs):
    # a member of gamma(a): clamp into range then snap to tnum, retrying a few times
    for _ in range(20):
        x = a.tnum.value | (draw(st.integers(0, M64)) & a.tnum.mask)
        if a.contains(x):
            return x
    for x in (a.umin, a.umax, a.smin % 2**64, a.smax % 2**64):
        if a.contains(x):
            return x
    return None


@given(st.data(), st.sampled_from(BINARY + [AluOp.NEG]), st.sampled_from([32, 64]))
def test_alu_sound_64(data, op, width):
    a, b = data.draw(abstract()), data.draw(abstract())
    x, y = member(data.draw, a), member(data.draw, b)
    if x is None or y is None:
        return
    r = abs_alu(op, a, b, width)
    if width == 32:
        expect = concrete_alu(op, x & 0xFFFFFFFF, y & 0xFFFFFFFF, 32)
    else:
        expect = concrete_alu(op, x, y, 64)
    assert r.contains(expect)


@given(st.data(), st.sampled_from(CONDS), st.sampled_from([32, 64]))
def test_refine_sound_64(data, op, width):
    a, b = data.draw(abstract()), data.draw(abstract())
    x, y = member(data.draw, a), member(data.draw, b)
    if x is None or y is None:
        return
    taken, not_taken = abs_refine_branch(op, a, b, width)
    bits = width
    mask = (1 << bits) - 1
    side = taken if concrete_cond(op, x & mask, y & mask, bits) else not_taken
    assert side is not None
    assert side[0].contains(x) and side[1].contains(y)


@given(abstract())
def test_sync_is_fixed_point(a):
    once = sync(a)
    assert once is not None
    assert sync(once) == once


@given(abstract(), abstract())
def test_join_covers_both(a, b):
    j = abs_join(a, b)
    assert a.within(j) or all(j.contains(v) for v in (a.umin, a.umax) if a.contains(v))
    for v in (a.umin, a.umax, b.umin, b.umax):
        if a.contains(v) or b.contains(v):
            assert j.contains(v)


@given(st.integers(0, M64))
def test_signed_helper(x):
    assert to_signed(x) % 2**64 == x
