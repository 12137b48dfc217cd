import random

import pytest
from hypothesis import given, strategies as st

from ubpf_forge import isa
from ubpf_forge.corpus import ACCEPTS, DROP_UDP
from ubpf_forge.engine import Env, ExecContext, interpret
from ubpf_forge.fuzz import random_program
from ubpf_forge.isa import (AluOp, InsnClass, JmpOp, Pseudo, Size, decode, encode, format_asm,
                            parse_asm)


def test_zero_slot_is_unknown_opcode():
    with pytest.raises(isa.UnknownOpcode):
        decode(bytes(8))


def test_exit_is_one_slot():
    p = parse_asm("exit")
    assert len(p.insns) == 1
    assert encode(p) == bytes([0x95]) + bytes(7)


def test_empty_program_encodes_empty():
    assert encode(isa.Program(())) == b""


def test_mov_exit_roundtrip():
    p = parse_asm("mov64 r0, 7 ; exit\nexit")
    q = decode(encode(p))
    assert q.insns == p.insns and len(q.insns) == 2
    assert p.insns[0].imm == 7


def test_wide_load_constant():
    p = parse_asm("lddw r1, 0x100000001\nmov64 r0, r1\nexit")
    raw = encode(p)
    assert len(raw) == 32            # wide load takes two slots
    q = decode(raw)
    assert q.insns[0].is_wide and q.insns[0].wide_imm == 1
    assert q.insns[0].value64 == 0x1_0000_0001
    env = Env()
    ctx = ExecContext(env, ctx_addr=0)
    assert interpret(q, ctx).r0 == 0x1_0000_0001


def test_truncated_wide():
    raw = encode(parse_asm("lddw r1, 5\nexit"))
    with pytest.raises(isa.TruncatedWideInstruction):
        decode(raw[:8])


def test_orphan_second_slot():
    # a slot with opcode 0 after a normal instruction is an orphan wide tail
    with pytest.raises(isa.IsaError):
        decode(encode(parse_asm("exit")) + bytes(8))


def test_bad_register():
    raw = bytearray(encode(parse_asm("mov64 r0, 1")))
    raw[1] = 0x0C    # dst = 12
    with pytest.raises(isa.BadRegisterIndex):
        decode(bytes(raw))


def test_not_multiple_of_eight():
    with pytest.raises(isa.IsaError):
        decode(bytes(5))


def test_drop_udp_shape():
    p = parse_asm(DROP_UDP)
    assert 15 <= len(p.insns) <= 25
    assert decode(encode(p)).insns == p.insns
    assert parse_asm(format_asm(p)) == p


def test_format_empty_is_header_only():
    text = format_asm(isa.Program(()))
    assert all(line.startswith(";") for line in text.splitlines())
    assert parse_asm(text).insns == ()


@pytest.mark.parametrize("name", sorted(ACCEPTS))
def test_corpus_roundtrips(name):
    p = parse_asm(ACCEPTS[name])
    assert parse_asm(format_asm(p)) == p
    assert decode(encode(p), maps=p.map_refs).insns == p.insns


def test_syntax_error_has_line():
    with pytest.raises(isa.AsmSyntaxError) as e:
        parse_asm("mov64 r0, 1\nbogus r1\nexit")
    assert e.value.line == 2


def test_undefined_and_duplicate_labels():
    with pytest.raises(isa.UndefinedLabel):
        parse_asm("ja nowhere\nexit")
    with pytest.raises(isa.DuplicateLabel):
        parse_asm("a:\nmov64 r0, 0\na:\nexit")


def test_map_directive_and_reference():
    p = parse_asm(".map m array 4 8 16\nlddw r1, map:m\nmov64 r0, 0\nexit")
    assert p.map_refs[0] == isa.MapRef("m", "array", 4, 8, 16)
    assert p.insns[0].pseudo == Pseudo.MAP and p.insns[0].imm == 0
    with pytest.raises(isa.UndefinedLabel):
        parse_asm("lddw r1, map:nope\nexit")


def test_decode_without_maps_synthesizes_placeholders():
    p = parse_asm(".map m hash 4 8 2\nlddw r1, map:m\nmov64 r0, 0\nexit")
    q = decode(encode(p))
    assert [m.name for m in q.map_refs] == ["map0"]


def test_subprog_directive():
    p = parse_asm(ACCEPTS["subprog_call"])
    assert len(p.subprogs) == 2 and p.subprogs[0].start == 0
    assert sum(s.length for s in p.subprogs) == len(p.insns)


def test_every_listed_operation_encodes():
    # every ALU op, every jump op, every load/store size has an accepted encoding
    lines = []
    for op in AluOp:
        if op in (AluOp.END, AluOp.NEG):
            continue
        lines += [f"{op.name.lower()}64 r1, 3", f"{op.name.lower()}32 r1, r2"]
    lines += ["neg64 r1", "neg32 r1", "le16 r1", "be32 r1", "be64 r1"]
    for op in JmpOp:
        if op.is_conditional:
            lines += [f"{op.name.lower()} r1, 1, +0", f"{op.name.lower()}32 r1, r2, +0"]
    for sfx in ("b", "h", "w", "dw"):
        lines += [f"ldx{sfx} r1, [r10-8]", f"stx{sfx} [r10-8], r1", f"st{sfx} [r10-8], 1"]
    lines += ["ja +0", "call map_lookup_elem", "mov64 r0, 0", "exit"]
    p = parse_asm("\n".join(lines))
    q = decode(encode(p))
    assert q.insns == p.insns
    classes = {i.cls for i in q.insns}
    assert classes >= {InsnClass.ALU, InsnClass.ALU64, InsnClass.JMP, InsnClass.JMP32,
                       InsnClass.LDX, InsnClass.ST, InsnClass.STX}
    assert {i.size for i in q.insns if i.cls == InsnClass.LDX} == set(Size)


def test_only_lddw_is_wide():
    p = parse_asm(ACCEPTS["array_counter"])
    for insn in p.insns:
        assert insn.is_wide == (insn.cls == InsnClass.LD)


@given(st.integers(0, 2**32 - 1))
def test_random_programs_roundtrip(seed):
    p = parse_asm(random_program(random.Random(seed)))
    assert parse_asm(format_asm(p)) == p
    q = decode(encode(p), maps=p.map_refs)
    assert q.insns == p.insns
    assert [(s.start, s.length) for s in q.subprogs] == [(s.start, s.length) for s in p.subprogs]


@given(st.integers(-2**63, 2**64 - 1), st.integers(0, 9))
def test_wide_value_roundtrip(v, r):
    p = parse_asm(f"lddw r{r}, {v}\nexit")
    assert p.insns[0].value64 == v % 2**64
    assert decode(encode(p)).insns == p.insns
