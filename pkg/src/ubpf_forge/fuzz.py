"""Random verified programs and a differential harness over all execution paths.

Generated programs use r0 and r6-r9 as value registers and r1-r5 only as
call scratch, so helper and subprogram calls never clobber live values.
Control flow is forward-only apart from optional short counted loops.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .engine import Memory, exec_image, interpret, lower, make_xdp_context
from .engine.jit import M32, original_immediates
from .isa import Program, parse_asm
from .rejection import Rejection
from .runtime.env import RuntimeEnv
from .runtime.maps import MapDef, create_map
from .verifier import VerifiedProgram, verify
from .xform import XformResult, run_pipeline

VALS = (0, 6, 7, 8, 9)
ALU_OPS = ("add", "sub", "mul", "div", "mod", "or", "and", "xor", "lsh", "rsh", "arsh", "mov")
JMP_OPS = ("jeq", "jne", "jgt", "jge", "jlt", "jle", "jsgt", "jsge", "jslt", "jsle", "jset")
STACK_SLOTS = (8, 16, 24, 32)        # pre-initialized spill slots below r10
KEY_SLOT, VAL_SLOT, EMIT_SLOT = 40, 48, 56

MAPS = (("arr", MapDef("array", 4, 8, 4)), ("h", MapDef("hash", 4, 8, 4)))
MAP_HEADER = "".join(f".map {n} {d.map_type} {d.key_size} {d.value_size} {d.max_entries}\n"
                     for n, d in MAPS)


@dataclass
class GenConfig:
    min_ops: int = 6
    max_ops: int = 30
    p_jump: float = 0.15
    p_map: float = 0.12
    p_stack: float = 0.1
    p_emit: float = 0.04
    p_call: float = 0.06
    p_wide: float = 0.06
    p_loop: float = 0.03
    p_alu32: float = 0.3
    max_subprogs: int = 2
    big_imm: float = 0.4      # share of immediates drawn from the full 32-bit range


def _imm(rng: random.Random, cfg: GenConfig) -> int:
    if rng.random() < cfg.big_imm:
        return rng.randint(-(1 << 31), (1 << 31) - 1)
    return rng.randint(-300, 300)


class _Builder:
    def __init__(self, rng: random.Random, cfg: GenConfig, subprogs: list[str]):
        self.rng = rng
        self.cfg = cfg
        self.subprogs = subprogs
        self.lines: list[str] = []
        self.labels = 0
        self.pending: list[tuple[int, str]] = []    # (emit before op number, label)
        self.called: set[str] = set()

    def label(self) -> str:
        self.labels += 1
        return f"L{self.labels}"

    def emit(self, *lines: str) -> None:
        self.lines.extend("    " + s for s in lines)

    def alu(self, regs=VALS) -> None:
        rng, cfg = self.rng, self.cfg
        op = rng.choice(ALU_OPS + ("neg", "end"))
        dst = rng.choice(regs)
        w = "32" if rng.random() < cfg.p_alu32 else "64"
        if op == "neg":
            self.emit(f"neg{w} r{dst}")
        elif op == "end":
            self.emit(f"{rng.choice(('le', 'be'))}{rng.choice((16, 32, 64))} r{dst}")
        elif op in ("lsh", "rsh", "arsh") and rng.random() < 0.7:
            self.emit(f"{op}{w} r{dst}, {rng.randrange(int(w))}")
        elif rng.random() < 0.5:
            self.emit(f"{op}{w} r{dst}, r{rng.choice(regs)}")
        else:
            v = _imm(rng, cfg)
            if op in ("div", "mod") and v == 0:
                v = 7
            self.emit(f"{op}{w} r{dst}, {v}")

    def wide(self) -> None:
        self.emit(f"lddw r{self.rng.choice(VALS)}, {self.rng.getrandbits(64):#x}")

    def stack(self) -> None:
        rng = self.rng
        slot = rng.choice(STACK_SLOTS)
        size = rng.choice(("dw", "dw", "w", "h", "b"))
        off = rng.randrange(0, 8 // {"dw": 8, "w": 4, "h": 2, "b": 1}[size]) * \
            {"dw": 8, "w": 4, "h": 2, "b": 1}[size]
        where = f"[r10-{slot - off}]"
        if rng.random() < 0.5:
            self.emit(f"stx{size} {where}, r{rng.choice(VALS)}")
        elif rng.random() < 0.3:
            self.emit(f"st{size} {where}, {_imm(rng, self.cfg)}")
        else:
            self.emit(f"ldx{size} r{rng.choice(VALS)}, {where}")

    def map_op(self) -> None:
        rng = self.rng
        mname = rng.choice([n for n, _ in MAPS])
        k = rng.choice(VALS)
        self.emit(f"mov64 r1, r{k}", "and64 r1, 7", f"stxw [r10-{KEY_SLOT}], r1",
                  "mov64 r2, r10", f"add64 r2, -{KEY_SLOT}")
        kind = rng.choice(("lookup", "lookup", "update", "delete"))
        save = rng.choice([r for r in VALS if r != 0])
        if kind == "lookup":
            skip = self.label()
            self.emit(f"mov64 r{save}, r0" if rng.random() < 0.3 else "mov64 r0, r0",
                      f"lddw r1, map:{mname}", "call map_lookup_elem",
                      f"jeq r0, 0, {skip}", "ldxdw r1, [r0+0]")
            v = rng.choice([r for r in VALS if r != 0])
            self.emit(f"{rng.choice(('add64', 'xor64', 'mov64'))} r1, r{v}",
                      "stxdw [r0+0], r1")
            if rng.random() < 0.5:
                self.emit(f"ldxw r{v}, [r0+{rng.choice((0, 4))}]")
            self.lines.append(f"{skip}:")
            self.emit(f"mov64 r0, r{rng.choice([r for r in VALS if r != 0])}")
        elif kind == "update":
            v = rng.choice(VALS)
            self.emit(f"stxdw [r10-{VAL_SLOT}], r{v}", "mov64 r3, r10",
                      f"add64 r3, -{VAL_SLOT}", "mov64 r4, 0", f"lddw r1, map:{mname}",
                      "call map_update_elem")
        else:
            self.emit(f"lddw r1, map:{mname}", "call map_delete_elem")

    def trace(self) -> None:
        self.emit(f"stxdw [r10-{EMIT_SLOT}], r{self.rng.choice(VALS)}", "mov64 r1, r10",
                  f"add64 r1, -{EMIT_SLOT}", "mov64 r2, 8", "call trace_emit",
                  f"mov64 r0, r{self.rng.choice(VALS[1:])}")

    def call(self, name: str | None = None) -> None:
        rng = self.rng
        a, b = rng.choice(VALS), rng.choice(VALS)
        name = name or rng.choice(self.subprogs)
        self.called.add(name)
        self.emit(f"mov64 r1, r{a}", f"mov64 r2, r{b}", f"call {name}")
        if rng.random() < 0.5:
            self.emit(f"mov64 r{rng.choice(VALS[1:])}, r0")

    def loop(self) -> None:
        top = self.label()
        self.emit(f"mov64 r5, {self.rng.randint(1, 4)}")
        self.lines.append(f"{top}:")
        for _ in range(self.rng.randint(1, 3)):
            self.alu()
        self.emit("sub64 r5, 1", f"jne r5, 0, {top}")

    def body(self, n: int) -> None:
        rng, cfg = self.rng, self.cfg
        for i in range(n):
            for at, lab in [x for x in self.pending if x[0] == i]:
                self.lines.append(f"{lab}:")
                self.pending.remove((at, lab))
            r = rng.random()
            if r < cfg.p_jump:
                if i == n - 1:
                    self.alu()
                    continue
                lab = self.label()
                self.pending.append((rng.randint(i + 1, n), lab))
                a = rng.choice(VALS)
                rhs = f"r{rng.choice(VALS)}" if rng.random() < 0.4 else str(_imm(rng, cfg))
                self.emit(f"{rng.choice(JMP_OPS)}{'32' if rng.random() < 0.2 else ''} "
                          f"r{a}, {rhs}, {lab}")
                continue
            r -= cfg.p_jump
            for p, fn in ((cfg.p_map, self.map_op), (cfg.p_stack, self.stack),
                          (cfg.p_emit, self.trace),
                          (cfg.p_call if self.subprogs else 0.0, self.call),
                          (cfg.p_wide, self.wide), (cfg.p_loop, self.loop)):
                if r < p:
                    fn()
                    break
                r -= p
            else:
                self.alu()
        for _, lab in sorted(self.pending):
            self.lines.append(f"{lab}:")
        self.pending.clear()


def random_program(rng: random.Random, cfg: GenConfig | None = None) -> str:
    """Assembly text for one random program; it usually, not always, verifies."""
    cfg = cfg or GenConfig()
    names = [f"f{k}" for k in range(rng.randint(0, cfg.max_subprogs))]
    b = _Builder(rng, cfg, names)
    b.lines.append(MAP_HEADER.rstrip("\n"))
    b.emit("ldxdw r2, [r1+0]", "ldxdw r3, [r1+8]", "mov64 r4, r2", "add64 r4, 16",
           "jgt r4, r3, bail", "ldxdw r6, [r2+0]", "ldxdw r7, [r2+8]",
           f"mov64 r8, {_imm(rng, cfg)}", f"mov64 r9, {_imm(rng, cfg)}",
           f"mov64 r0, {_imm(rng, cfg)}")
    for s in STACK_SLOTS:
        b.emit(f"stdw [r10-{s}], {_imm(rng, cfg)}")
    b.body(rng.randint(cfg.min_ops, cfg.max_ops))
    for name in names:
        if name not in b.called:    # every subprogram must be reachable
            b.call(name)
    b.emit("exit")
    b.lines.append("bail:")
    b.emit("mov64 r0, 2", "exit")
    for name in names:
        b.lines.append(f".subprog {name}")
        b.emit("mov64 r0, r1", "stxdw [r10-8], r2")
        sub = _Builder(rng, GenConfig(p_map=0, p_stack=0, p_emit=0, p_call=0,
                                      p_alu32=cfg.p_alu32, big_imm=cfg.big_imm), [])
        sub.labels = b.labels
        sub.body(rng.randint(1, 6))
        b.labels = sub.labels
        # restrict subprogram bodies to r0: only r0 is initialized there
        b.lines.extend(_retarget_regs(sub.lines))
        b.emit("ldxdw r1, [r10-8]", "add64 r0, r1", "exit")
    return "\n".join(b.lines) + "\n"


def _retarget_regs(lines: list[str]) -> list[str]:
    import re
    return [re.sub(r"\br[6-9]\b", "r0", s) for s in lines if "map:" not in s]


def random_verified_program(rng: random.Random, cfg: GenConfig | None = None,
                            max_tries: int = 50) -> tuple[str, Program, VerifiedProgram]:
    for _ in range(max_tries):
        src = random_program(rng, cfg)
        p = parse_asm(src)
        try:
            return src, p, verify(p)
        except Rejection:
            continue
    raise RuntimeError("generator produced no verifiable program")


@dataclass
class Input:
    packet: bytes
    maps: dict[str, dict[bytes, bytes]] = field(default_factory=dict)


def random_input(rng: random.Random) -> Input:
    n = rng.choice((8, 16, 24, 32, 40, 64)) if rng.random() < 0.9 else rng.randint(0, 15)
    maps = {}
    for name, d in MAPS:
        keys = rng.sample(range(8), rng.randint(0, d.max_entries))
        maps[name] = {k.to_bytes(4, "little"): rng.getrandbits(64).to_bytes(8, "little")
                      for k in keys if d.map_type == "hash" or k < d.max_entries}
    return Input(rng.randbytes(n), maps)


@dataclass(frozen=True)
class Outcome:
    r0: int
    maps: tuple
    trace: tuple

    def __str__(self):
        return f"r0={self.r0:#x} trace={len(self.trace)}"


def _execute(p: Program, inp: Input, runner) -> Outcome:
    mem = Memory()
    insts = []
    for ref in p.map_refs:
        d = MapDef(ref.map_type, ref.key_size, ref.value_size, ref.max_entries)
        m = create_map(d, mem, ref.name)
        for k, v in inp.maps.get(ref.name, {}).items():
            m.update(k, v)
        insts.append(m)
    env = RuntimeEnv(mem, insts)
    ctx = make_xdp_context(env, inp.packet)
    try:
        res = runner(ctx)
    finally:
        ctx.release()
    dumps = tuple((m.name, tuple(sorted(m.dump().items()))) for m in insts)
    return Outcome(res.r0, dumps, tuple(res.trace))


def variants(p: Program, vp: VerifiedProgram, seeds=(1, 2, 3), fuel: int = 1_000_000):
    """Named runners for the original program and each transformed form."""
    xr = run_pipeline(p, vp)
    q, ul = xr.program, xr.untrusted_loads
    plain = lower(q, untrusted_loads=ul)
    out = {"interp(original)": lambda c: interpret(p, c, fuel),
           "interp(xform)": lambda c: interpret(q, c, fuel, ul),
           "image": lambda c: exec_image(plain, c, fuel)}
    for s in seeds:
        img = lower(q, blind=True, seed=s, threshold=0, untrusted_loads=ul)
        out[f"image(blinded,seed={s})"] = (lambda im: lambda c: exec_image(im, c, fuel))(img)
    return xr, out


def differential(p: Program, vp: VerifiedProgram, inputs: list[Input],
                 seeds=(1, 2, 3)) -> list[str]:
    """Return one message per disagreement with the original program's behaviour."""
    _, runs = variants(p, vp, seeds)
    bad = []
    for k, inp in enumerate(inputs):
        ref = None
        for name, fn in runs.items():
            o = _execute(p, inp, fn)
            if ref is None:
                ref = o
            elif o != ref:
                bad.append(f"input {k}: {name} gave {o}, original gave {ref}")
    return bad


def leaked_immediates(p: Program, img) -> list[int]:
    """Original immediates above 255 that appear in any op of a blinded image body."""
    orig = {v for v in original_immediates(p) if v > 255}
    found = []
    for op in img.body_ops():
        if op.imm is None:
            continue
        v = op.imm
        for form in (v, v & M32, v >> 32):
            if form in orig:
                found.append(form)
    return found


__all__ = ["GenConfig", "random_program", "random_verified_program", "Input", "random_input",
           "Outcome", "variants", "differential", "leaked_immediates", "MAPS"]
