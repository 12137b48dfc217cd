"""JIT-lite: lower a program into per-function op lists and execute them.

Each function image has a prologue (save frame pointer and r6-r9, allocate
the stack frame), a body that maps instructions mostly one-to-one onto ops,
an epilogue, and an exception table for loads through untrusted pointers.
Constant blinding rewrites immediate operands through the scratch register
``BLIND_REG`` so that no original immediate appears in the image.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from ..absdom import concrete_alu, concrete_cond
from ..isa import AluOp, InsnClass, Instruction, JmpOp, Program, Pseudo, SrcKind, split_direct_call
from .context import (ExecContext, ExecResult, FuelExhausted, MissingExceptionEntry,
                      ReadOnlyImage)
from .interp import DEFAULT_FUEL, M32
from .memory import U64, MemoryFault

BLIND_REG = 11
CALLEE_SAVED = (6, 7, 8, 9)


@dataclass(frozen=True)
class Op:
    kind: str
    dst: int = 0
    src: Optional[int] = None
    imm: Optional[int] = None
    off: int = 0
    op: int = 0
    width: int = 64
    size: int = 0
    target: int = -1
    site: int = -1


@dataclass
class FuncImage:
    name: str
    prologue: tuple[Op, ...]
    body: tuple[Op, ...]
    epilogue: tuple[Op, ...]
    exception_table: dict[int, int]          # body index -> destination register
    insn_to_op: tuple[int, ...] = ()

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise ReadOnlyImage(f"function image is finalized; cannot set {name}")
        super().__setattr__(name, value)

    def code(self) -> tuple[Op, ...]:
        return self.prologue + self.body + self.epilogue


@dataclass
class JitImage:
    funcs: list[FuncImage]
    blinded: bool = False
    seed: int | None = None
    threshold: int = 0
    stack_size: int = 512
    read_only: bool = field(default=False)

    def __setattr__(self, name, value):
        if getattr(self, "read_only", False):
            raise ReadOnlyImage(f"image is finalized; cannot set {name}")
        super().__setattr__(name, value)

    def finalize(self) -> "JitImage":
        self.funcs = tuple(self.funcs)
        for f in self.funcs:
            f.exception_table = _FrozenDict(f.exception_table)
            object.__setattr__(f, "_frozen", True)
        self.read_only = True
        return self

    def patch(self, func: int, body_index: int, op: Op) -> None:
        """Replace one body op; only allowed before finalize."""
        if self.read_only:
            raise ReadOnlyImage("image is finalized")
        f = self.funcs[func]
        f.body = f.body[:body_index] + (op,) + f.body[body_index + 1:]

    def body_ops(self):
        for f in self.funcs:
            yield from f.body

    def size(self) -> int:
        return sum(len(f.prologue) + len(f.body) + len(f.epilogue) for f in self.funcs)


class _FrozenDict(dict):
    def _ro(self, *a, **k):
        raise ReadOnlyImage("exception table is read-only")

    __setitem__ = __delitem__ = clear = pop = popitem = setdefault = update = _ro


# ---------------------------------------------------------------- lowering

class _Blinder:
    def __init__(self, p: Program, seed, threshold: int):
        self.rng = random.Random(seed)
        self.threshold = threshold
        self.forbidden = original_immediates(p)

    def wants(self, v: int) -> bool:
        if self.threshold <= 0:
            return True
        s = v - (1 << 64) if v >> 63 else v
        return abs(s) > self.threshold

    def _clean(self, x: int) -> bool:
        return not ({x, x & M32, x >> 32} & self.forbidden)

    def split(self, v: int) -> tuple[int, int]:
        while True:
            k = self.rng.getrandbits(64)
            if self._clean(k) and self._clean(v ^ k):
                return v ^ k, k


def original_immediates(p: Program) -> set[int]:
    """Every form in which an immediate of ``p`` could appear in an image."""
    out = set()
    for insn in p.insns:
        if insn.is_call() or (insn.cls.is_alu and insn.op == AluOp.END):
            continue
        if insn.is_wide:
            if insn.pseudo == Pseudo.NONE:
                v = insn.value64
                out |= {v, v & M32, v >> 32}
            continue
        if insn.cls.is_alu and insn.src_kind == SrcKind.X:
            continue
        if insn.cls.is_jmp and (insn.src_kind == SrcKind.X or not insn.is_cond_jump()):
            continue
        if insn.cls in (InsnClass.LDX, InsnClass.STX):
            continue
        out |= {insn.imm & M32, insn.imm & U64}
    return out


def _operand(insn: Instruction) -> int:
    """Immediate as the operation consumes it: sign-extended for 64-bit ops."""
    if insn.cls in (InsnClass.ALU, InsnClass.JMP32):
        return insn.imm & M32
    return insn.imm & U64


def _lower_insn(p: Program, i: int, insn: Instruction, blinder: _Blinder | None,
                untrusted: frozenset[int], etab: dict[int, int], at: int) -> list[Op]:
    c = insn.cls

    def blinded(v):
        a, k = blinder.split(v)
        return [Op("ld64", dst=BLIND_REG, imm=a),
                Op("alu", dst=BLIND_REG, imm=k, op=AluOp.XOR, width=64)]

    use_blind = blinder is not None
    if c.is_alu:
        width = 64 if c == InsnClass.ALU64 else 32
        if insn.op == AluOp.END:
            return [Op("end", dst=insn.dst, imm=insn.imm, src=int(insn.src_kind == SrcKind.X))]
        if insn.op == AluOp.NEG or insn.src_kind == SrcKind.X:
            return [Op("alu", dst=insn.dst, src=insn.src if insn.op != AluOp.NEG else None,
                       imm=0 if insn.op == AluOp.NEG else None, op=insn.op, width=width)]
        v = _operand(insn)
        if use_blind and blinder.wants(v):
            return blinded(v) + [Op("alu", dst=insn.dst, src=BLIND_REG, op=insn.op, width=width)]
        return [Op("alu", dst=insn.dst, imm=v, op=insn.op, width=width)]
    if c == InsnClass.LD:
        if insn.pseudo == Pseudo.MAP:
            return [Op("ldmap", dst=insn.dst, site=insn.imm)]
        if insn.pseudo == Pseudo.MAP_VALUE:
            return [Op("ldmapval", dst=insn.dst, site=insn.imm, off=insn.wide_imm or 0)]
        v = insn.value64
        if use_blind and blinder.wants(v):
            a, k = blinder.split(v)
            return [Op("ld64", dst=insn.dst, imm=a),
                    Op("alu", dst=insn.dst, imm=k, op=AluOp.XOR, width=64)]
        return [Op("ld64", dst=insn.dst, imm=v)]
    if c == InsnClass.LDX:
        if i in untrusted:
            etab[at] = insn.dst
        return [Op("ldx", dst=insn.dst, src=insn.src, off=insn.offset, size=insn.size.nbytes,
                   site=i)]
    if c == InsnClass.STX:
        return [Op("stx", dst=insn.dst, src=insn.src, off=insn.offset, size=insn.size.nbytes)]
    if c == InsnClass.ST:
        v = insn.imm & U64
        if use_blind and blinder.wants(v):
            return blinded(v) + [Op("stx", dst=insn.dst, src=BLIND_REG, off=insn.offset,
                                    size=insn.size.nbytes)]
        return [Op("st", dst=insn.dst, imm=v, off=insn.offset, size=insn.size.nbytes)]
    # jumps
    if insn.is_exit():
        return [Op("exit")]
    if insn.is_call():
        if insn.pseudo == Pseudo.CALL:
            return [Op("callsub", target=p.subprog_of(p.jump_target(i)))]
        if insn.pseudo == Pseudo.DIRECT_CALL:
            mi, hid = split_direct_call(insn.imm)
            return [Op("calld", site=mi, off=hid)]
        return [Op("call", site=insn.imm)]
    if insn.is_ja():
        return [Op("ja", target=p.jump_target(i))]
    width = 32 if c == InsnClass.JMP32 else 64
    t = p.jump_target(i)
    if insn.src_kind == SrcKind.X:
        return [Op("jmp", dst=insn.dst, src=insn.src, op=insn.op, width=width, target=t)]
    v = _operand(insn)
    if use_blind and blinder.wants(v):
        return blinded(v) + [Op("jmp", dst=insn.dst, src=BLIND_REG, op=insn.op, width=width,
                                target=t)]
    return [Op("jmp", dst=insn.dst, imm=v, op=insn.op, width=width, target=t)]


def lower(p: Program, blind: bool = False, seed: int | None = 0, threshold: int = 0,
          untrusted_loads: frozenset[int] = frozenset(), stack_size: int = 512) -> JitImage:
    """Lower ``p`` into a finalized, read-only image."""
    blinder = _Blinder(p, seed, threshold) if blind else None
    funcs = []
    for sp in p.subprogs:
        body: list[Op] = []
        etab: dict[int, int] = {}
        first: dict[int, int] = {}
        for i in range(sp.start, sp.start + sp.length):
            first[i] = len(body)
            body.extend(_lower_insn(p, i, p.insns[i], blinder, untrusted_loads, etab, len(body)))
        body = [op if op.kind not in ("ja", "jmp") else _retarget(op, first[op.target])
                for op in body]
        prologue = (Op("push_fp"),) + tuple(Op("push", dst=r) for r in CALLEE_SAVED) + \
            (Op("alloc_stack"),)
        epilogue = (Op("free_stack"),) + tuple(Op("pop", dst=r) for r in reversed(CALLEE_SAVED)) + \
            (Op("pop_fp"), Op("ret"))
        funcs.append(FuncImage(sp.name or f"sub_{sp.start}", prologue, tuple(body), epilogue,
                               etab, tuple(first[i] for i in range(sp.start,
                                                                         sp.start + sp.length))))
    img = JitImage(funcs, blinded=blind, seed=seed if blind else None, threshold=threshold,
                   stack_size=stack_size)
    return img.finalize()


def _retarget(op: Op, body_index: int) -> Op:
    from dataclasses import replace
    return replace(op, target=body_index)


# ---------------------------------------------------------------- execution

def exec_image(img: JitImage, ctx: ExecContext, fuel: int = DEFAULT_FUEL) -> ExecResult:
    """Evaluate a finalized image; faults at exception-table sites read as zero."""
    if not img.read_only:
        raise ReadOnlyImage("image must be finalized before execution")
    mem = ctx.mem
    env = ctx.env
    codes = [f.code() for f in img.funcs]
    pro = [len(f.prologue) for f in img.funcs]
    epi = [len(f.prologue) + len(f.body) for f in img.funcs]
    regs = [0] * 12
    regs[1] = ctx.ctx_addr
    mstack: list[int] = []       # machine stack for saved registers
    frames: list[int] = []       # stack frame bases
    calls: list[tuple[int, int]] = []
    fn, pc = 0, 0
    code = codes[0]
    count = 0
    zero_filled = 0
    trace_start = len(env.trace)
    try:
        while True:
            if count >= fuel:
                raise FuelExhausted(f"fuel {fuel} exhausted")
            count += 1
            op = code[pc]
            k = op.kind
            if k == "alu":
                y = regs[op.src] if op.src is not None else op.imm
                if op.width == 32:
                    y &= M32
                regs[op.dst] = concrete_alu(AluOp(op.op), regs[op.dst], y, op.width)
                pc += 1
            elif k == "jmp":
                y = regs[op.src] if op.src is not None else op.imm
                if concrete_cond(JmpOp(op.op), regs[op.dst], y, op.width):
                    pc = pro[fn] + op.target
                else:
                    pc += 1
            elif k == "ldx":
                try:
                    regs[op.dst] = mem.load((regs[op.src] + op.off) & U64, op.size)
                except MemoryFault as e:
                    body_idx = pc - pro[fn]
                    dst = img.funcs[fn].exception_table.get(body_idx)
                    if dst is None:
                        raise MissingExceptionEntry(
                            f"fault at body op {body_idx} (insn {op.site}): {e}") from None
                    regs[dst] = 0
                    zero_filled += 1
                pc += 1
            elif k == "stx" or k == "st":
                v = regs[op.src] if k == "stx" else op.imm
                try:
                    mem.store((regs[op.dst] + op.off) & U64, op.size, v)
                except MemoryFault as e:
                    raise MissingExceptionEntry(f"store fault: {e}") from None
                pc += 1
            elif k == "ld64":
                regs[op.dst] = op.imm & U64
                pc += 1
            elif k == "ja":
                pc = pro[fn] + op.target
            elif k == "call":
                regs[0] = env.call_helper(op.site, regs[1:6], ctx) & U64
                pc += 1
            elif k == "calld":
                regs[0] = env.call_direct(op.site, op.off, regs[1:6], ctx) & U64
                pc += 1
            elif k == "callsub":
                calls.append((fn, pc + 1))
                fn, pc = op.target, 0
                code = codes[fn]
            elif k == "exit":
                pc = epi[fn]
            elif k == "push_fp":
                mstack.append(regs[10])
                pc += 1
            elif k == "push":
                mstack.append(regs[op.dst])
                pc += 1
            elif k == "alloc_stack":
                base = mem.alloc(img.stack_size, "stack")
                frames.append(base)
                regs[10] = base + img.stack_size
                pc += 1
            elif k == "free_stack":
                mem.free(frames.pop())
                pc += 1
            elif k == "pop":
                regs[op.dst] = mstack.pop()
                pc += 1
            elif k == "pop_fp":
                regs[10] = mstack.pop()
                pc += 1
            elif k == "ret":
                if not calls:
                    return ExecResult(regs[0], env.trace[trace_start:], count, zero_filled)
                fn, pc = calls.pop()
                code = codes[fn]
            elif k == "ldmap":
                regs[op.dst] = env.map_handle(op.site)
                pc += 1
            elif k == "ldmapval":
                regs[op.dst] = (env.map_value_base(op.site) + op.off) & U64
                pc += 1
            elif k == "end":
                regs[op.dst] = concrete_alu(AluOp.END, regs[op.dst], op.imm, 64, bool(op.src))
                pc += 1
            else:  # pragma: no cover
                raise ValueError(f"unknown op {k}")
    finally:
        ctx.insn_count = count
        for base in frames:
            mem.free(base)


__all__ = ["Op", "FuncImage", "JitImage", "lower", "exec_image", "BLIND_REG",
           "original_immediates"]
