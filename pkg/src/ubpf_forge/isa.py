"""Instruction model, binary slot codec and the textual assembly front end.

Instructions are kept in a list of *logical* instructions; the 128-bit wide
load occupies two 8-byte slots.  Jump and call displacements are stored in
slots, as in the binary format, and :class:`Program` converts between slot
positions and logical indices.

Binary slot layout (little-endian)::

    opcode:8 | dst:4 | src:4 | offset:16 | imm:32

The numeric opcode values follow the usual eBPF convention.  They are a
convention only; nothing else in the package depends on the exact numbers.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Iterable, Sequence

__all__ = [
    "InsnClass", "AluOp", "JmpOp", "Size", "SrcKind", "Pseudo",
    "Instruction", "Subprog", "MapRef", "Program",
    "IsaError", "UnknownOpcode", "TruncatedWideInstruction", "BadRegisterIndex",
    "AsmSyntaxError", "UndefinedLabel", "DuplicateLabel",
    "encode", "decode", "parse_asm", "format_asm", "format_insn",
    "HELPER_NAMES", "DIRECT_CALL_BASE", "direct_call_id", "split_direct_call",
]

NUM_REGS = 11
SLOT = 8
_SLOT_STRUCT = struct.Struct("<BBhi")


class InsnClass(IntEnum):
    LD = 0x00
    LDX = 0x01
    ST = 0x02
    STX = 0x03
    ALU = 0x04
    JMP = 0x05
    JMP32 = 0x06
    ALU64 = 0x07

    @property
    def is_alu(self) -> bool:
        return self in (InsnClass.ALU, InsnClass.ALU64)

    @property
    def is_jmp(self) -> bool:
        return self in (InsnClass.JMP, InsnClass.JMP32)

    @property
    def is_mem(self) -> bool:
        return self in (InsnClass.LDX, InsnClass.ST, InsnClass.STX)


class AluOp(IntEnum):
    ADD = 0x00
    SUB = 0x10
    MUL = 0x20
    DIV = 0x30
    OR = 0x40
    AND = 0x50
    LSH = 0x60
    RSH = 0x70
    NEG = 0x80
    MOD = 0x90
    XOR = 0xA0
    MOV = 0xB0
    ARSH = 0xC0
    END = 0xD0


class JmpOp(IntEnum):
    JA = 0x00
    JEQ = 0x10
    JGT = 0x20
    JGE = 0x30
    JSET = 0x40
    JNE = 0x50
    JSGT = 0x60
    JSGE = 0x70
    CALL = 0x80
    EXIT = 0x90
    JLT = 0xA0
    JLE = 0xB0
    JSLT = 0xC0
    JSLE = 0xD0

    @property
    def is_conditional(self) -> bool:
        return self not in (JmpOp.JA, JmpOp.CALL, JmpOp.EXIT)


class Size(IntEnum):
    W = 0x00
    H = 0x08
    B = 0x10
    DW = 0x18

    @property
    def nbytes(self) -> int:
        return {Size.B: 1, Size.H: 2, Size.W: 4, Size.DW: 8}[self]


class SrcKind(IntEnum):
    K = 0x00   # immediate operand
    X = 0x08   # register operand


class Pseudo(Enum):
    NONE = 0
    MAP = 1          # lddw: imm indexes Program.map_refs
    MAP_VALUE = 2    # lddw: address of map value storage + wide offset (internal)
    CALL = 3         # call: imm is a slot displacement to a subprog
    DIRECT_CALL = 4  # call: map-bound helper, produced by the rewrite pass


_MODE_MEM = 0x60
_MODE_IMM = 0x00
_LDDW_OPCODE = InsnClass.LD | Size.DW | _MODE_IMM

# pseudo -> value stored in the src register nibble
_LD_PSEUDO_SRC = {Pseudo.NONE: 0, Pseudo.MAP: 1, Pseudo.MAP_VALUE: 2}
_CALL_PSEUDO_SRC = {Pseudo.NONE: 0, Pseudo.CALL: 1, Pseudo.DIRECT_CALL: 2}

HELPER_NAMES = {
    1: "map_lookup_elem",
    2: "map_update_elem",
    3: "map_delete_elem",
    4: "trace_emit",
    5: "spin_lock",
    6: "spin_unlock",
    7: "acquire_test_ref",
    8: "release_test_ref",
    9: "iter_num_new",
    10: "iter_num_next",
    11: "iter_num_destroy",
}
_HELPER_IDS = {v: k for k, v in HELPER_NAMES.items()}

DIRECT_CALL_BASE = 0x10000


def direct_call_id(map_index: int, helper_id: int) -> int:
    return DIRECT_CALL_BASE | (map_index << 8) | helper_id


def split_direct_call(imm: int) -> tuple[int, int]:
    """Return ``(map_index, helper_id)`` for a direct-call immediate."""
    return (imm >> 8) & 0xFF, imm & 0xFF


class IsaError(ValueError):
    pass


class UnknownOpcode(IsaError):
    pass


class TruncatedWideInstruction(IsaError):
    pass


class BadRegisterIndex(IsaError):
    pass


class AsmSyntaxError(IsaError):
    def __init__(self, msg: str, line: int, col: int = 1):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


class UndefinedLabel(AsmSyntaxError):
    pass


class DuplicateLabel(AsmSyntaxError):
    pass


def _s32(v: int) -> int:
    v &= 0xFFFFFFFF
    return v - (1 << 32) if v & 0x80000000 else v


@dataclass(frozen=True)
class Instruction:
    cls: InsnClass
    op: int
    dst: int = 0
    src: int = 0
    offset: int = 0
    imm: int = 0
    wide_imm: int | None = None
    src_kind: SrcKind = SrcKind.K
    pseudo: Pseudo = Pseudo.NONE

    def __post_init__(self):
        for r in (self.dst, self.src):
            if not 0 <= r < NUM_REGS:
                raise BadRegisterIndex(f"register r{r} out of range")
        if not -0x8000 <= self.offset <= 0x7FFF:
            raise IsaError(f"offset {self.offset} does not fit 16 bits")
        if not -0x80000000 <= self.imm <= 0x7FFFFFFF:
            raise IsaError(f"immediate {self.imm} does not fit 32 bits")
        if (self.wide_imm is not None) != self.is_wide:
            raise IsaError("wide_imm must be present exactly for lddw")

    @property
    def is_wide(self) -> bool:
        return self.cls == InsnClass.LD

    @property
    def nslots(self) -> int:
        return 2 if self.is_wide else 1

    @property
    def value64(self) -> int:
        """Full constant of a wide load."""
        return (self.imm & 0xFFFFFFFF) | ((self.wide_imm or 0) << 32)

    @property
    def size(self) -> Size:
        return Size(self.op)

    @property
    def jmp(self) -> JmpOp:
        return JmpOp(self.op)

    @property
    def alu(self) -> AluOp:
        return AluOp(self.op)

    def is_exit(self) -> bool:
        return self.cls == InsnClass.JMP and self.op == JmpOp.EXIT

    def is_call(self) -> bool:
        return self.cls == InsnClass.JMP and self.op == JmpOp.CALL

    def is_subprog_call(self) -> bool:
        return self.is_call() and self.pseudo == Pseudo.CALL

    def is_ja(self) -> bool:
        return self.cls == InsnClass.JMP and self.op == JmpOp.JA

    def is_cond_jump(self) -> bool:
        return self.cls.is_jmp and JmpOp(self.op).is_conditional

    def with_(self, **kw) -> "Instruction":
        from dataclasses import replace
        return replace(self, **kw)


# ---------------------------------------------------------------- constructors

def alu(op: AluOp, dst: int, src: int | None = None, imm: int = 0,
        is64: bool = True) -> Instruction:
    cls = InsnClass.ALU64 if is64 else InsnClass.ALU
    if src is None:
        return Instruction(cls, op, dst=dst, imm=imm)
    return Instruction(cls, op, dst=dst, src=src, src_kind=SrcKind.X)


def mov(dst: int, src: int | None = None, imm: int = 0) -> Instruction:
    return alu(AluOp.MOV, dst, src, imm)


def jmp(op: JmpOp, dst: int, off: int, src: int | None = None, imm: int = 0,
        is32: bool = False) -> Instruction:
    cls = InsnClass.JMP32 if is32 else InsnClass.JMP
    if src is None:
        return Instruction(cls, op, dst=dst, offset=off, imm=imm)
    return Instruction(cls, op, dst=dst, src=src, offset=off, src_kind=SrcKind.X)


def ja(off: int) -> Instruction:
    return Instruction(InsnClass.JMP, JmpOp.JA, offset=off)


def call(helper: int) -> Instruction:
    return Instruction(InsnClass.JMP, JmpOp.CALL, imm=helper)


def exit_() -> Instruction:
    return Instruction(InsnClass.JMP, JmpOp.EXIT)


def ldx(size: Size, dst: int, src: int, off: int) -> Instruction:
    return Instruction(InsnClass.LDX, size, dst=dst, src=src, offset=off)


def stx(size: Size, dst: int, off: int, src: int) -> Instruction:
    return Instruction(InsnClass.STX, size, dst=dst, src=src, offset=off)


def st(size: Size, dst: int, off: int, imm: int) -> Instruction:
    return Instruction(InsnClass.ST, size, dst=dst, offset=off, imm=imm)


def lddw(dst: int, value: int, pseudo: Pseudo = Pseudo.NONE) -> Instruction:
    value &= 0xFFFFFFFFFFFFFFFF
    return Instruction(InsnClass.LD, Size.DW, dst=dst, imm=_s32(value),
                       wide_imm=value >> 32, pseudo=pseudo)


# ---------------------------------------------------------------- program

@dataclass(frozen=True)
class Subprog:
    start: int
    length: int
    name: str = field(default="", compare=False)


@dataclass(frozen=True)
class MapRef:
    name: str
    map_type: str
    key_size: int
    value_size: int
    max_entries: int


@dataclass(frozen=True)
class Program:
    insns: tuple[Instruction, ...]
    subprogs: tuple[Subprog, ...] = ()
    prog_type: str = "xdp"
    map_refs: tuple[MapRef, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "insns", tuple(self.insns))
        object.__setattr__(self, "map_refs", tuple(self.map_refs))
        subs = tuple(self.subprogs) or (
            _derive_subprogs(self.insns) if self.insns else ())
        object.__setattr__(self, "subprogs", subs)

    def __len__(self) -> int:
        return len(self.insns)

    @cached_property
    def slot_of(self) -> tuple[int, ...]:
        out, pos = [], 0
        for insn in self.insns:
            out.append(pos)
            pos += insn.nslots
        out.append(pos)
        return tuple(out)

    @cached_property
    def _index_of_slot(self) -> dict[int, int]:
        return {s: i for i, s in enumerate(self.slot_of)}

    def index_of_slot(self, slot: int) -> int | None:
        return self._index_of_slot.get(slot)

    def jump_target(self, i: int) -> int | None:
        """Logical index a jump (or subprog call) at ``i`` transfers to."""
        insn = self.insns[i]
        disp = insn.imm if insn.is_subprog_call() else insn.offset
        t = self.index_of_slot(self.slot_of[i] + 1 + disp)
        if t is None or t >= len(self.insns):
            return None
        return t

    def subprog_of(self, i: int) -> int:
        for k, sp in enumerate(self.subprogs):
            if sp.start <= i < sp.start + sp.length:
                return k
        raise IndexError(i)

    def map_index(self, name: str) -> int:
        for k, m in enumerate(self.map_refs):
            if m.name == name:
                return k
        raise KeyError(name)


def _derive_subprogs(insns: Sequence[Instruction]) -> tuple[Subprog, ...]:
    """Subprog boundaries are the entry point plus every pseudo-call target."""
    slots, pos = [], 0
    for insn in insns:
        slots.append(pos)
        pos += insn.nslots
    by_slot = {s: i for i, s in enumerate(slots)}
    starts = {0}
    for i, insn in enumerate(insns):
        if insn.is_subprog_call():
            t = by_slot.get(slots[i] + 1 + insn.imm)
            if t is not None:
                starts.add(t)
    ordered = sorted(starts)
    bounds = ordered + [len(insns)]
    return tuple(
        Subprog(s, bounds[k + 1] - s, "main" if s == 0 else f"sub_{s}")
        for k, s in enumerate(ordered))


# ---------------------------------------------------------------- binary codec

def _opcode(insn: Instruction) -> int:
    if insn.cls.is_alu or insn.cls.is_jmp:
        return insn.cls | insn.op | insn.src_kind
    if insn.cls == InsnClass.LD:
        return _LDDW_OPCODE
    return insn.cls | insn.op | _MODE_MEM


def encode(p: Program) -> bytes:
    out = bytearray()
    for insn in p.insns:
        src = insn.src
        if insn.cls == InsnClass.LD:
            src = _LD_PSEUDO_SRC[insn.pseudo]
        elif insn.is_call():
            src = _CALL_PSEUDO_SRC[insn.pseudo]
        out += _SLOT_STRUCT.pack(_opcode(insn), (src << 4) | insn.dst,
                                 insn.offset, insn.imm)
        if insn.is_wide:
            out += _SLOT_STRUCT.pack(0, 0, 0, _s32(insn.wide_imm))
    return bytes(out)


def _decode_slot(opcode: int, regs: int, off: int, imm: int, pos: int) -> Instruction:
    dst, src = regs & 0x0F, regs >> 4
    if dst >= NUM_REGS:
        raise BadRegisterIndex(f"slot {pos}: dst register {dst}")
    cls = InsnClass(opcode & 0x07)
    if cls.is_alu:
        code, kind = opcode & 0xF0, SrcKind(opcode & 0x08)
        if code not in AluOp._value2member_map_:
            raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
        op = AluOp(code)
        if (op == AluOp.END and cls == InsnClass.ALU64) or (op == AluOp.NEG and kind == SrcKind.X):
            raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
        if op == AluOp.END and imm not in (16, 32, 64):
            raise UnknownOpcode(f"slot {pos}: byte swap width {imm}")
        if src >= NUM_REGS:
            raise BadRegisterIndex(f"slot {pos}: src register {src}")
        return Instruction(cls, op, dst, src, off, imm, src_kind=kind)
    if cls.is_jmp:
        code, kind = opcode & 0xF0, SrcKind(opcode & 0x08)
        if code not in JmpOp._value2member_map_:
            raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
        op = JmpOp(code)
        if cls == InsnClass.JMP32 and not op.is_conditional:
            raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
        if op in (JmpOp.JA, JmpOp.EXIT, JmpOp.CALL) and kind == SrcKind.X:
            raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
        pseudo = Pseudo.NONE
        if op == JmpOp.CALL:
            inv = {v: k for k, v in _CALL_PSEUDO_SRC.items()}
            if src not in inv:
                raise UnknownOpcode(f"slot {pos}: call kind {src}")
            pseudo, src = inv[src], 0
        elif src >= NUM_REGS:
            raise BadRegisterIndex(f"slot {pos}: src register {src}")
        return Instruction(cls, op, dst, src, off, imm, src_kind=kind, pseudo=pseudo)
    if cls == InsnClass.LD:
        raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
    if opcode & 0xE0 != _MODE_MEM:
        raise UnknownOpcode(f"slot {pos}: opcode {opcode:#04x}")
    if src >= NUM_REGS:
        raise BadRegisterIndex(f"slot {pos}: src register {src}")
    return Instruction(cls, Size(opcode & 0x18), dst, src, off, imm)


def decode(data: bytes, maps: Sequence[MapRef] | None = None,
           prog_type: str = "xdp") -> Program:
    """Decode a raw slot stream.

    The binary carries no map definitions; pass ``maps`` to attach them.
    Without it, placeholder refs named ``map<N>`` are synthesized for every
    map index used by a pseudo load.
    """
    if len(data) % SLOT:
        raise TruncatedWideInstruction(f"length {len(data)} is not a multiple of 8")
    insns = []
    nslots = len(data) // SLOT
    pos = 0
    while pos < nslots:
        opcode, regs, off, imm = _SLOT_STRUCT.unpack_from(data, pos * SLOT)
        if opcode == _LDDW_OPCODE:
            if pos + 1 >= nslots:
                raise TruncatedWideInstruction(f"slot {pos}: missing second half")
            op2, regs2, off2, imm2 = _SLOT_STRUCT.unpack_from(data, (pos + 1) * SLOT)
            if op2 or regs2 or off2:
                raise TruncatedWideInstruction(f"slot {pos + 1}: malformed second half")
            dst, src = regs & 0x0F, regs >> 4
            if dst >= NUM_REGS:
                raise BadRegisterIndex(f"slot {pos}: dst register {dst}")
            inv = {v: k for k, v in _LD_PSEUDO_SRC.items()}
            if src not in inv:
                raise UnknownOpcode(f"slot {pos}: lddw pseudo kind {src}")
            insns.append(Instruction(InsnClass.LD, Size.DW, dst=dst, offset=off, imm=imm,
                                     wide_imm=imm2 & 0xFFFFFFFF, pseudo=inv[src]))
            pos += 2
            continue
        insns.append(_decode_slot(opcode, regs, off, imm, pos))
        pos += 1
    if maps is None:
        used = sorted({i.imm for i in insns if i.cls == InsnClass.LD
                       and i.pseudo in (Pseudo.MAP, Pseudo.MAP_VALUE)})
        n = used[-1] + 1 if used else 0
        maps = [MapRef(f"map{k}", "unknown", 0, 0, 0) for k in range(n)]
    return Program(tuple(insns), prog_type=prog_type, map_refs=tuple(maps))


# ---------------------------------------------------------------- assembly

_SIZE_SUFFIX = {"b": Size.B, "h": Size.H, "w": Size.W, "dw": Size.DW}
_SUFFIX_OF_SIZE = {v: k for k, v in _SIZE_SUFFIX.items()}
_ALU_NAMES = {op.name.lower(): op for op in AluOp if op != AluOp.END}
_JMP_NAMES = {op.name.lower(): op for op in JmpOp if op.is_conditional}
_REG_RE = re.compile(r"r(\d+)$")
_MEM_RE = re.compile(r"\[\s*r(\d+)\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+))?\s*\]$")
_LABEL_RE = re.compile(r"[A-Za-z_.$][\w.$]*$")


def _parse_int(tok: str) -> int:
    return int(tok, 0)


@dataclass
class _Pending:
    """An instruction whose displacement needs a label resolved."""
    insn: Instruction
    label: str | None
    field: str
    line: int
    col: int


def _split_operands(s: str) -> list[str]:
    return [t.strip() for t in s.split(",")] if s.strip() else []


def parse_asm(text: str, prog_type: str = "xdp") -> Program:
    """Assemble program text into a :class:`Program`.

    Grammar, one statement per line; ``;`` starts a comment::

        .map <name> <array|hash> <key_size> <value_size> <max_entries>
        .subprog <name>
        <label>:
        <mnemonic> <operands>
    """
    pending: list[_Pending] = []
    labels: dict[str, int] = {}
    maps: list[MapRef] = []
    sub_starts: list[tuple[int, str]] = [(0, "main")]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        stripped = line.strip()
        if not stripped:
            continue
        col = len(line) - len(line.lstrip()) + 1
        while True:
            m = re.match(r"([A-Za-z_.$][\w.$]*)\s*:", stripped)
            if not m or stripped.startswith("."):
                break
            name = m.group(1)
            if name in labels:
                raise DuplicateLabel(f"duplicate label {name!r}", lineno, col)
            labels[name] = len(pending)
            stripped = stripped[m.end():].strip()
        if not stripped:
            continue
        if stripped.startswith("."):
            parts = stripped.split()
            if parts[0] == ".map":
                if len(parts) != 6:
                    raise AsmSyntaxError(".map needs name, type and three sizes", lineno, col)
                try:
                    sizes = [_parse_int(x) for x in parts[3:]]
                except ValueError:
                    raise AsmSyntaxError("bad .map size", lineno, col) from None
                maps.append(MapRef(parts[1], parts[2], *sizes))
            elif parts[0] == ".subprog":
                if len(parts) != 2:
                    raise AsmSyntaxError(".subprog needs a name", lineno, col)
                if parts[1] in labels:
                    raise DuplicateLabel(f"duplicate label {parts[1]!r}", lineno, col)
                labels[parts[1]] = len(pending)
                if len(pending) == 0:
                    raise AsmSyntaxError("subprog before any main instruction", lineno, col)
                sub_starts.append((len(pending), parts[1]))
            else:
                raise AsmSyntaxError(f"unknown directive {parts[0]}", lineno, col)
            continue
        pending.append(_parse_insn(stripped, lineno, col, maps))

    slots, pos = [], 0
    for p in pending:
        slots.append(pos)
        pos += p.insn.nslots
    slots.append(pos)
    insns = []
    for i, p in enumerate(pending):
        insn = p.insn
        if p.label is not None:
            if p.label not in labels:
                raise UndefinedLabel(f"undefined label {p.label!r}", p.line, p.col)
            disp = slots[labels[p.label]] - slots[i] - 1
            insn = insn.with_(**{p.field: disp})
        insns.append(insn)

    bounds = [s for s, _ in sub_starts] + [len(insns)]
    subs = tuple(Subprog(s, bounds[k + 1] - s, n) for k, (s, n) in enumerate(sub_starts))
    return Program(tuple(insns), subs if insns else (), prog_type, tuple(maps))


def _reg(tok: str, line: int, col: int) -> int:
    m = _REG_RE.match(tok)
    if not m:
        raise AsmSyntaxError(f"expected register, got {tok!r}", line, col)
    r = int(m.group(1))
    if r >= NUM_REGS:
        raise AsmSyntaxError(f"no register {tok}", line, col)
    return r


def _imm32(tok: str, line: int, col: int) -> int:
    try:
        v = _parse_int(tok)
    except ValueError:
        raise AsmSyntaxError(f"bad immediate {tok!r}", line, col) from None
    if -0x80000000 <= v <= 0x7FFFFFFF:
        return v
    if 0 <= v <= 0xFFFFFFFF:
        return _s32(v)
    raise AsmSyntaxError(f"immediate {tok} does not fit 32 bits (use lddw)", line, col)


def _mem(tok: str, line: int, col: int) -> tuple[int, int]:
    m = _MEM_RE.match(tok.replace(" ", ""))
    if not m:
        raise AsmSyntaxError(f"expected [rN+off], got {tok!r}", line, col)
    r = int(m.group(1))
    if r >= NUM_REGS:
        raise AsmSyntaxError(f"no register r{r}", line, col)
    off = _parse_int(m.group(3)) if m.group(3) else 0
    if m.group(2) == "-":
        off = -off
    return r, off


def _target(tok: str, insn: Instruction, fld: str, line: int, col: int) -> _Pending:
    if re.match(r"[+-]\d+$", tok):
        return _Pending(insn.with_(**{fld: int(tok)}), None, fld, line, col)
    if not _LABEL_RE.match(tok):
        raise AsmSyntaxError(f"bad jump target {tok!r}", line, col)
    return _Pending(insn, tok, fld, line, col)


def _parse_insn(s: str, line: int, col: int, maps: list[MapRef]) -> _Pending:
    parts = s.split(None, 1)
    mn = parts[0].lower()
    ops = _split_operands(parts[1]) if len(parts) > 1 else []

    def need(n):
        if len(ops) != n:
            raise AsmSyntaxError(f"{mn} takes {n} operand(s)", line, col)

    try:
        if mn == "exit":
            need(0)
            return _Pending(exit_(), None, "", line, col)
        if mn == "ja":
            need(1)
            return _target(ops[0], ja(0), "offset", line, col)
        if mn == "call":
            need(1)
            tok = ops[0]
            if tok.startswith("direct:"):
                _, hname, mname = tok.split(":")
                idx = next((k for k, m in enumerate(maps) if m.name == mname), None)
                if idx is None or hname not in _HELPER_IDS:
                    raise AsmSyntaxError(f"bad direct call {tok!r}", line, col)
                return _Pending(Instruction(InsnClass.JMP, JmpOp.CALL,
                                            imm=direct_call_id(idx, _HELPER_IDS[hname]),
                                            pseudo=Pseudo.DIRECT_CALL), None, "", line, col)
            if tok in _HELPER_IDS:
                return _Pending(call(_HELPER_IDS[tok]), None, "", line, col)
            if re.match(r"\d+$", tok):
                return _Pending(call(int(tok)), None, "", line, col)
            insn = Instruction(InsnClass.JMP, JmpOp.CALL, pseudo=Pseudo.CALL)
            return _target(tok, insn, "imm", line, col)
        if mn == "lddw":
            need(2)
            dst = _reg(ops[0], line, col)
            tok = ops[1]
            for prefix, pseudo in (("map:", Pseudo.MAP), ("mapval:", Pseudo.MAP_VALUE)):
                if tok.startswith(prefix):
                    name, _, off = tok[len(prefix):].partition("+")
                    idx = next((k for k, m in enumerate(maps) if m.name == name), None)
                    if idx is None:
                        raise UndefinedLabel(f"undefined map {name!r}", line, col)
                    insn = Instruction(InsnClass.LD, Size.DW, dst=dst, imm=idx,
                                       wide_imm=_parse_int(off) if off else 0, pseudo=pseudo)
                    return _Pending(insn, None, "", line, col)
            try:
                v = _parse_int(tok)
            except ValueError:
                raise AsmSyntaxError(f"bad immediate {tok!r}", line, col) from None
            if not -(1 << 63) <= v < (1 << 64):
                raise AsmSyntaxError("lddw value does not fit 64 bits", line, col)
            return _Pending(lddw(dst, v), None, "", line, col)
        m = re.match(r"(le|be)(16|32|64)$", mn)
        if m:
            need(1)
            kind = SrcKind.X if m.group(1) == "be" else SrcKind.K
            insn = Instruction(InsnClass.ALU, AluOp.END, dst=_reg(ops[0], line, col),
                               imm=int(m.group(2)), src_kind=kind)
            return _Pending(insn, None, "", line, col)
        m = re.match(r"(ldx|stx|st)(dw|b|h|w)$", mn)
        if m:
            need(2)
            size = _SIZE_SUFFIX[m.group(2)]
            if m.group(1) == "ldx":
                src, off = _mem(ops[1], line, col)
                return _Pending(ldx(size, _reg(ops[0], line, col), src, off), None, "", line, col)
            dst, off = _mem(ops[0], line, col)
            if m.group(1) == "stx":
                return _Pending(stx(size, dst, off, _reg(ops[1], line, col)), None, "", line, col)
            return _Pending(st(size, dst, off, _imm32(ops[1], line, col)), None, "", line, col)
        m = re.match(r"([a-z]+?)(64|32)$", mn)
        if m and m.group(1) in _ALU_NAMES:
            op = _ALU_NAMES[m.group(1)]
            is64 = m.group(2) == "64"
            if op == AluOp.NEG:
                need(1)
                return _Pending(alu(op, _reg(ops[0], line, col), is64=is64), None, "", line, col)
            need(2)
            dst = _reg(ops[0], line, col)
            if _REG_RE.match(ops[1]):
                return _Pending(alu(op, dst, _reg(ops[1], line, col), is64=is64), None, "", line, col)
            return _Pending(alu(op, dst, imm=_imm32(ops[1], line, col), is64=is64), None, "", line, col)
        m = re.match(r"(j[a-z]+?)(32)?$", mn)
        if m and m.group(1) in _JMP_NAMES:
            need(3)
            op = _JMP_NAMES[m.group(1)]
            is32 = m.group(2) is not None
            dst = _reg(ops[0], line, col)
            if _REG_RE.match(ops[1]):
                insn = jmp(op, dst, 0, src=_reg(ops[1], line, col), is32=is32)
            else:
                insn = jmp(op, dst, 0, imm=_imm32(ops[1], line, col), is32=is32)
            return _target(ops[2], insn, "offset", line, col)
    except IsaError as e:
        if isinstance(e, AsmSyntaxError):
            raise
        raise AsmSyntaxError(str(e), line, col) from None
    raise AsmSyntaxError(f"unknown mnemonic {parts[0]!r}", line, col)


def _fmt_mem(reg: int, off: int) -> str:
    if off == 0:
        return f"[r{reg}]"
    return f"[r{reg}{'+' if off > 0 else '-'}{abs(off)}]"


def format_insn(insn: Instruction, target: str | None = None,
                maps: Sequence[MapRef] = ()) -> str:
    """Render one instruction; ``target`` replaces a numeric displacement."""
    def disp(v):
        return target if target is not None else f"{v:+d}"

    cls = insn.cls
    if cls.is_alu:
        op = insn.alu
        w = "64" if cls == InsnClass.ALU64 else "32"
        if op == AluOp.END:
            return f"{'be' if insn.src_kind == SrcKind.X else 'le'}{insn.imm} r{insn.dst}"
        if op == AluOp.NEG:
            return f"neg{w} r{insn.dst}"
        rhs = f"r{insn.src}" if insn.src_kind == SrcKind.X else str(insn.imm)
        return f"{op.name.lower()}{w} r{insn.dst}, {rhs}"
    if cls.is_jmp:
        op = insn.jmp
        if op == JmpOp.EXIT:
            return "exit"
        if op == JmpOp.JA:
            return f"ja {disp(insn.offset)}"
        if op == JmpOp.CALL:
            if insn.pseudo == Pseudo.CALL:
                return f"call {disp(insn.imm)}"
            if insn.pseudo == Pseudo.DIRECT_CALL:
                mi, hid = split_direct_call(insn.imm)
                mname = maps[mi].name if mi < len(maps) else f"map{mi}"
                return f"call direct:{HELPER_NAMES.get(hid, hid)}:{mname}"
            return f"call {HELPER_NAMES.get(insn.imm, insn.imm)}"
        w = "32" if cls == InsnClass.JMP32 else ""
        rhs = f"r{insn.src}" if insn.src_kind == SrcKind.X else str(insn.imm)
        return f"j{op.name[1:].lower()}{w} r{insn.dst}, {rhs}, {disp(insn.offset)}"
    if cls == InsnClass.LD:
        if insn.pseudo in (Pseudo.MAP, Pseudo.MAP_VALUE):
            name = maps[insn.imm].name if insn.imm < len(maps) else f"map{insn.imm}"
            if insn.pseudo == Pseudo.MAP:
                return f"lddw r{insn.dst}, map:{name}"
            return f"lddw r{insn.dst}, mapval:{name}+{insn.wide_imm}"
        return f"lddw r{insn.dst}, {insn.value64:#x}"
    sfx = _SUFFIX_OF_SIZE[insn.size]
    if cls == InsnClass.LDX:
        return f"ldx{sfx} r{insn.dst}, {_fmt_mem(insn.src, insn.offset)}"
    if cls == InsnClass.STX:
        return f"stx{sfx} {_fmt_mem(insn.dst, insn.offset)}, r{insn.src}"
    return f"st{sfx} {_fmt_mem(insn.dst, insn.offset)}, {insn.imm}"


def format_asm(p: Program) -> str:
    out = ["; ubpf-forge assembly"]
    for m in p.map_refs:
        out.append(f".map {m.name} {m.map_type} {m.key_size} {m.value_size} {m.max_entries}")
    sub_names = {sp.start: (sp.name or f"sub_{sp.start}") for sp in p.subprogs[1:]}
    targets: dict[int, str] = {}
    for i, insn in enumerate(p.insns):
        if insn.is_ja() or insn.is_cond_jump() or insn.is_subprog_call():
            t = p.jump_target(i)
            if t is not None and t not in targets:
                targets[t] = sub_names.get(t, f"L{t}")
    for i, insn in enumerate(p.insns):
        if i in sub_names:
            out.append(f".subprog {sub_names[i]}")
        elif i in targets:
            out.append(f"{targets[i]}:")
        t = None
        if insn.is_ja() or insn.is_cond_jump() or insn.is_subprog_call():
            j = p.jump_target(i)
            t = targets.get(j) if j is not None else None
        out.append("    " + format_insn(insn, t, p.map_refs))
    return "\n".join(out) + "\n"


def iter_slots(p: Program) -> Iterable[tuple[int, Instruction]]:
    for i, insn in enumerate(p.insns):
        yield p.slot_of[i], insn
