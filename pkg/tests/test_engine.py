import random

import pytest
from hypothesis import given, settings, strategies as st

from ubpf_forge.engine import (BLIND_REG, Env, FuelExhausted, Op, ReadOnlyImage, exec_image,
                               interpret, lower, make_xdp_context, original_immediates)
from ubpf_forge.fuzz import differential, leaked_immediates, random_input, random_verified_program
from ubpf_forge.isa import parse_asm
from ubpf_forge.verifier import verify
from ubpf_forge.xform import run_pipeline

U64 = (1 << 64) - 1


def run_both(src, packet=b"", fuel=100_000):
    p = parse_asm(src)
    out = []
    for runner in (lambda c: interpret(p, c, fuel), lambda c: exec_image(lower(p), c, fuel),
                   lambda c: exec_image(lower(p, blind=True, seed=7), c, fuel)):
        ctx = make_xdp_context(Env(), packet)
        out.append(runner(ctx).r0)
        ctx.release()
    assert len(set(out)) == 1, out
    return out[0]


def test_mov_exit():
    assert run_both("mov64 r0, 7\nexit") == 7


def test_division_by_zero_semantics():
    assert run_both("mov64 r0, 9\nmov64 r1, 0\ndiv64 r0, r1\nexit") == 0
    assert run_both("mov64 r0, 9\nmov64 r1, 0\nmod64 r0, r1\nexit") == 9
    assert run_both("mov64 r0, 9\ndiv64 r0, 0\nexit") == 0


def test_alu32_zero_extends():
    assert run_both("lddw r0, 0xffffffffffffffff\nadd32 r0, 1\nexit") == 0
    assert run_both("mov32 r0, -1\nexit") == 0xFFFFFFFF
    assert run_both("mov64 r0, -1\nexit") == U64


def test_packet_read():
    assert run_both("ldxdw r2, [r1+0]\nldxb r0, [r2+1]\nexit", b"\x05\x06") == 6


def test_plain_body_maps_one_to_one():
    img = lower(parse_asm("mov64 r0, 7\nexit"))
    f = img.funcs[0]
    assert len(f.body) == 2
    assert f.prologue[0].kind == "push_fp" and f.epilogue[-1].kind == "ret"
    assert f.exception_table == {}


def test_blinded_mov_hides_immediate():
    p = parse_asm("mov64 r0, 0x1234\nexit")
    img = lower(p, blind=True, seed=1)
    body = img.funcs[0].body
    assert len(body) == 4
    ld, xor, mov = body[:3]
    assert ld.kind == "ld64" and ld.dst == BLIND_REG and xor.dst == BLIND_REG
    assert mov.src == BLIND_REG
    assert ld.imm ^ xor.imm == 0x1234
    assert leaked_immediates(p, img) == []


def test_blind_threshold():
    p = parse_asm("mov64 r0, 3\nadd64 r0, 100000\nexit")
    img = lower(p, blind=True, seed=1, threshold=255)
    kinds = [op.kind for op in img.funcs[0].body]
    assert kinds == ["alu", "ld64", "alu", "alu", "exit"]


def test_blinding_deterministic_per_seed():
    p = parse_asm("mov64 r0, 0x1234\nlddw r1, 0xdeadbeefcafe\nexit")
    a = lower(p, blind=True, seed=5).funcs[0].body
    assert a == lower(p, blind=True, seed=5).funcs[0].body
    assert a != lower(p, blind=True, seed=6).funcs[0].body


def test_original_immediates_forms():
    p = parse_asm("lddw r1, 0x1122334455667788\nmov64 r0, -2\nexit")
    imms = original_immediates(p)
    assert {0x1122334455667788, 0x55667788, 0x11223344, 0xFFFFFFFE, U64 - 1} <= imms


def test_image_is_read_only():
    img = lower(parse_asm("mov64 r0, 1\nexit"))
    with pytest.raises(ReadOnlyImage):
        img.patch(0, 0, Op("exit"))
    with pytest.raises(ReadOnlyImage):
        img.funcs[0].body = ()
    with pytest.raises(ReadOnlyImage):
        img.funcs[0].exception_table[0] = 0
    with pytest.raises(ReadOnlyImage):
        img.blinded = True


def test_callee_saved_registers_restored():
    src = """\
    mov64 r6, 11
    call f
    add64 r0, r6
    exit
.subprog f
    mov64 r6, 100
    mov64 r0, r6
    exit
"""
    assert run_both(src) == 111


def test_subprog_stack_is_separate():
    src = """\
    stdw [r10-8], 5
    call f
    ldxdw r0, [r10-8]
    exit
.subprog f
    stdw [r10-8], 9
    mov64 r0, 0
    exit
"""
    assert run_both(src) == 5


def test_fuel():
    p = parse_asm("self: ja self")
    ctx = make_xdp_context(Env(), b"")
    with pytest.raises(FuelExhausted):
        interpret(p, ctx, fuel=50)
    with pytest.raises(FuelExhausted):
        exec_image(lower(p), ctx, fuel=50)


def test_untrusted_load_gets_exception_entry():
    src = """\
.map h hash 4 8 4
    stw [r10-4], 1
    mov64 r2, r10
    add64 r2, -4
    lddw r1, map:h
    call map_lookup_elem
    jeq r0, 0, out
    ldxdw r0, [r0+0]
    exit
out:
    mov64 r0, 0
    exit
"""
    p = parse_asm(src)
    xr = run_pipeline(p, verify(p))
    img = lower(xr.program, untrusted_loads=xr.untrusted_loads)
    (site,) = xr.untrusted_loads
    f = img.funcs[0]
    assert f.exception_table == {f.insn_to_op[site]: 0}


# independent 64/32-bit reference semantics
def ref_alu(op, x, y, bits):
    M = (1 << bits) - 1
    x, y = x & M, y & M
    sh = y & (bits - 1)
    sx = x - (1 << bits) if x >> (bits - 1) else x
    r = {"add": x + y, "sub": x - y, "mul": x * y, "div": y and x // y,
         "mod": x % y if y else x, "or": x | y, "and": x & y, "xor": x ^ y,
         "lsh": x << sh, "rsh": x >> sh, "arsh": sx >> sh, "mov": y}[op]
    return r & M


@settings(max_examples=300)
@given(st.sampled_from(["add", "sub", "mul", "div", "mod", "or", "and", "xor", "lsh", "rsh",
                        "arsh", "mov"]),
       st.integers(0, U64), st.integers(0, U64), st.sampled_from([32, 64]))
def test_alu_matches_reference(op, x, y, bits):
    src = f"lddw r0, {x:#x}\nlddw r1, {y:#x}\n{op}{bits} r0, r1\nexit"
    assert run_both(src) == ref_alu(op, x, y, bits)


@settings(max_examples=100)
@given(st.sampled_from(["jeq", "jne", "jgt", "jge", "jlt", "jle", "jsgt", "jsge", "jslt",
                        "jsle", "jset"]),
       st.integers(0, U64), st.integers(-(1 << 31), (1 << 31) - 1))
def test_jump_immediate_sign_extension(op, x, imm):
    y = imm & U64
    sx = x - (1 << 64) if x >> 63 else x
    sy = imm
    expect = {"jeq": x == y, "jne": x != y, "jgt": x > y, "jge": x >= y, "jlt": x < y,
              "jle": x <= y, "jsgt": sx > sy, "jsge": sx >= sy, "jslt": sx < sy,
              "jsle": sx <= sy, "jset": bool(x & y)}[op]
    src = f"lddw r1, {x:#x}\nmov64 r0, 1\n{op} r1, {imm}, t\nmov64 r0, 0\nt:\nexit"
    assert run_both(src) == int(expect)


@settings(max_examples=30)
@given(st.integers(0, 2**32))
def test_all_engines_agree(seed):
    rng = random.Random(seed)
    _, p, vp = random_verified_program(rng)
    assert differential(p, vp, [random_input(rng) for _ in range(3)], seeds=(seed, seed + 1)) == []
