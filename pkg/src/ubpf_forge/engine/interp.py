"""Reference interpreter: decodes and executes the bytecode directly."""

from __future__ import annotations

from ..absdom import concrete_alu, concrete_cond
from ..isa import AluOp, InsnClass, Program, Pseudo, SrcKind, split_direct_call
from .context import ConcreteBoundsViolation, ExecContext, ExecResult, FuelExhausted
from .memory import U64, MemoryFault

M32 = 0xFFFFFFFF
DEFAULT_FUEL = 1_000_000


def _sext(imm: int) -> int:
    return imm & U64


def interpret(p: Program, ctx: ExecContext, fuel: int = DEFAULT_FUEL,
              untrusted_loads: frozenset[int] = frozenset()) -> ExecResult:
    """Run ``p`` on ``ctx``; r1 holds the ctx address on entry.

    Loads at ``untrusted_loads`` that fault read as zero, mirroring the
    image's exception table. Any other fault is a bounds violation.
    """
    mem = ctx.mem
    env = ctx.env
    insns = p.insns
    targets = [p.jump_target(i) if (x.is_ja() or x.is_cond_jump() or x.is_subprog_call())
               else None for i, x in enumerate(insns)]
    regs = [0] * 11
    regs[1] = ctx.ctx_addr
    stack = mem.alloc(ctx.stack_size, "stack")
    regs[10] = stack + ctx.stack_size
    frames: list[tuple[int, list[int], int]] = []   # (return pc, saved r6-r10, stack base)
    trace_start = len(env.trace)
    zero_filled = 0
    pc = 0
    count = 0
    try:
        while True:
            if count >= fuel:
                raise FuelExhausted(f"fuel {fuel} exhausted at {pc}")
            count += 1
            insn = insns[pc]
            c = insn.cls
            if c == InsnClass.ALU64 or c == InsnClass.ALU:
                op = insn.op
                is64 = c == InsnClass.ALU64
                if op == AluOp.END:
                    regs[insn.dst] = concrete_alu(AluOp.END, regs[insn.dst], insn.imm, 64,
                                                  insn.src_kind == SrcKind.X)
                else:
                    if insn.src_kind == SrcKind.X:
                        y = regs[insn.src]
                    else:
                        y = _sext(insn.imm) if is64 else insn.imm & M32
                    bits = 64 if is64 else 32
                    regs[insn.dst] = concrete_alu(AluOp(op), regs[insn.dst], y, bits)
                pc += 1
            elif c == InsnClass.LD:
                if insn.pseudo == Pseudo.MAP:
                    regs[insn.dst] = env.map_handle(insn.imm)
                elif insn.pseudo == Pseudo.MAP_VALUE:
                    regs[insn.dst] = (env.map_value_base(insn.imm) + (insn.wide_imm or 0)) & U64
                else:
                    regs[insn.dst] = insn.value64
                pc += 1
            elif c == InsnClass.LDX:
                addr = (regs[insn.src] + insn.offset) & U64
                try:
                    regs[insn.dst] = mem.load(addr, insn.size.nbytes)
                except MemoryFault as e:
                    if pc not in untrusted_loads:
                        raise ConcreteBoundsViolation(f"load at {pc}: {e}") from None
                    regs[insn.dst] = 0
                    zero_filled += 1
                pc += 1
            elif c == InsnClass.STX or c == InsnClass.ST:
                addr = (regs[insn.dst] + insn.offset) & U64
                val = regs[insn.src] if c == InsnClass.STX else _sext(insn.imm)
                try:
                    mem.store(addr, insn.size.nbytes, val)
                except MemoryFault as e:
                    raise ConcreteBoundsViolation(f"store at {pc}: {e}") from None
                pc += 1
            elif insn.is_exit():
                if not frames:
                    return ExecResult(regs[0], env.trace[trace_start:], count, zero_filled)
                ret, saved, base = frames.pop()
                mem.free(base)
                regs[6:11] = saved
                pc = ret
            elif insn.is_call():
                if insn.pseudo == Pseudo.CALL:
                    base = mem.alloc(ctx.stack_size, "stack")
                    frames.append((pc + 1, regs[6:11], base))
                    regs[10] = base + ctx.stack_size
                    pc = targets[pc]
                    continue
                args = regs[1:6]
                if insn.pseudo == Pseudo.DIRECT_CALL:
                    mi, hid = split_direct_call(insn.imm)
                    regs[0] = env.call_direct(mi, hid, args, ctx) & U64
                else:
                    regs[0] = env.call_helper(insn.imm, args, ctx) & U64
                pc += 1
            elif insn.is_ja():
                pc = targets[pc]
            else:
                bits = 32 if c == InsnClass.JMP32 else 64
                if insn.src_kind == SrcKind.X:
                    y = regs[insn.src]
                else:
                    y = insn.imm & M32 if bits == 32 else _sext(insn.imm)
                pc = targets[pc] if concrete_cond(insn.jmp, regs[insn.dst], y, bits) else pc + 1
    finally:
        ctx.insn_count = count
        mem.free(stack)
        for _, _, base in frames:
            mem.free(base)


__all__ = ["interpret", "DEFAULT_FUEL"]
