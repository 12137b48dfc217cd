"""Tristate numbers plus signed/unsigned interval bounds.

A :class:`ScalarAbs` is parameterized by its bit width so the same transfer
functions run at 64 bits in the verifier and at 8 bits in exhaustive tests.
An abstraction denotes ``{x : x in gamma(tnum), umin <= x <= umax,
smin <= signed(x) <= smax}``.  Operations that discover the set is empty
return ``None``; callers treat that as an infeasible path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .isa import AluOp, JmpOp

__all__ = [
    "Tnum", "ScalarAbs", "UnsupportedOp",
    "abs_const", "abs_unknown", "abs_alu", "abs_refine_branch", "abs_contains",
    "abs_join", "abs_meet", "abs_from_range", "branch_outcome", "sync",
    "trunc32", "zext", "concrete_alu", "concrete_cond",
]

MUL_MASK_LIMIT = 32


class UnsupportedOp(ValueError):
    pass


def _m(bits: int) -> int:
    return (1 << bits) - 1


def to_signed(x: int, bits: int = 64) -> int:
    x &= _m(bits)
    return x - (1 << bits) if x >> (bits - 1) else x


@dataclass(frozen=True)
class Tnum:
    value: int
    mask: int

    def __post_init__(self):
        assert self.value & self.mask == 0, (hex(self.value), hex(self.mask))

    @classmethod
    def const(cls, v: int, bits: int = 64) -> "Tnum":
        return cls(v & _m(bits), 0)

    @classmethod
    def unknown(cls, bits: int = 64) -> "Tnum":
        return cls(0, _m(bits))

    @classmethod
    def range(cls, lo: int, hi: int, bits: int = 64) -> "Tnum":
        chi = lo ^ hi
        delta = (1 << chi.bit_length()) - 1
        return cls(lo & ~delta & _m(bits), delta & _m(bits))

    @property
    def is_const(self) -> bool:
        return self.mask == 0

    def contains(self, x: int) -> bool:
        return x & ~self.mask == self.value

    def subset_of(self, other: "Tnum") -> bool:
        """True when every member of self is a member of other."""
        if self.mask & ~other.mask:
            return False
        return self.value & ~other.mask == other.value

    def card_log2(self) -> int:
        return bin(self.mask).count("1")

    # bitwise/arithmetic transfer, all modulo 2**bits
    def add(self, o: "Tnum", bits: int) -> "Tnum":
        sm = self.mask + o.mask
        sv = self.value + o.value
        chi = (sm + sv) ^ sv
        mu = chi | self.mask | o.mask
        return Tnum(sv & ~mu & _m(bits), mu & _m(bits))

    def sub(self, o: "Tnum", bits: int) -> "Tnum":
        dv = self.value - o.value
        alpha = dv + self.mask
        beta = dv - o.mask
        chi = alpha ^ beta
        mu = chi | self.mask | o.mask
        return Tnum(dv & ~mu & _m(bits), mu & _m(bits))

    def and_(self, o: "Tnum") -> "Tnum":
        alpha = self.value | self.mask
        beta = o.value | o.mask
        v = self.value & o.value
        return Tnum(v, alpha & beta & ~v)

    def or_(self, o: "Tnum") -> "Tnum":
        v = self.value | o.value
        return Tnum(v, (self.mask | o.mask) & ~v)

    def xor(self, o: "Tnum") -> "Tnum":
        mu = self.mask | o.mask
        return Tnum((self.value ^ o.value) & ~mu, mu)

    def lshift(self, k: int, bits: int) -> "Tnum":
        return Tnum((self.value << k) & _m(bits), (self.mask << k) & _m(bits))

    def rshift(self, k: int) -> "Tnum":
        return Tnum(self.value >> k, self.mask >> k)

    def arshift(self, k: int, bits: int) -> "Tnum":
        return Tnum((to_signed(self.value, bits) >> k) & _m(bits),
                    (to_signed(self.mask, bits) >> k) & _m(bits))

    def mul(self, o: "Tnum", bits: int) -> "Tnum":
        a, b = self, o
        acc_v = (a.value * b.value) & _m(bits)
        acc_m = Tnum(0, 0)
        while a.value or a.mask:
            if a.value & 1:
                acc_m = acc_m.add(Tnum(0, b.mask), bits)
            elif a.mask & 1:
                acc_m = acc_m.add(Tnum(0, b.value | b.mask), bits)
            a = a.rshift(1)
            b = b.lshift(1, bits)
        return Tnum(acc_v, 0).add(acc_m, bits)

    def intersect(self, o: "Tnum") -> Optional["Tnum"]:
        if (self.value ^ o.value) & ~(self.mask | o.mask):
            return None
        v = self.value | o.value
        mu = self.mask & o.mask
        return Tnum(v & ~mu, mu)

    def union(self, o: "Tnum") -> "Tnum":
        mu = self.mask | o.mask | (self.value ^ o.value)
        return Tnum(self.value & o.value & ~mu, mu)

    def __repr__(self) -> str:
        return f"Tnum({self.value:#x}, {self.mask:#x})"


@dataclass(frozen=True)
class ScalarAbs:
    tnum: Tnum
    umin: int
    umax: int
    smin: int
    smax: int
    bits: int = 64

    @property
    def is_const(self) -> bool:
        return self.tnum.is_const

    @property
    def const_value(self) -> int:
        assert self.tnum.is_const
        return self.tnum.value

    @property
    def is_unknown(self) -> bool:
        return self == abs_unknown(self.bits)

    def contains(self, x: int) -> bool:
        return abs_contains(self, x)

    def within(self, other: "ScalarAbs") -> bool:
        """Range inclusion: gamma(self) is covered by other's components."""
        return (self.tnum.subset_of(other.tnum)
                and other.umin <= self.umin and self.umax <= other.umax
                and other.smin <= self.smin and self.smax <= other.smax)

    def __str__(self) -> str:
        if self.is_const:
            return f"{to_signed(self.tnum.value, self.bits)}"
        parts = []
        if (self.umin, self.umax) != (0, _m(self.bits)):
            parts.append(f"u[{self.umin},{self.umax}]")
        h = 1 << (self.bits - 1)
        if (self.smin, self.smax) != (-h, h - 1):
            parts.append(f"s[{self.smin},{self.smax}]")
        if self.tnum.mask != _m(self.bits):
            parts.append(f"t({self.tnum.value:#x};{self.tnum.mask:#x})")
        return " ".join(parts) or "?"


def abs_const(v: int, bits: int = 64) -> ScalarAbs:
    v &= _m(bits)
    s = to_signed(v, bits)
    return ScalarAbs(Tnum(v, 0), v, v, s, s, bits)


def abs_unknown(bits: int = 64) -> ScalarAbs:
    h = 1 << (bits - 1)
    return ScalarAbs(Tnum.unknown(bits), 0, _m(bits), -h, h - 1, bits)


def abs_from_range(lo: int, hi: int, bits: int = 64) -> ScalarAbs:
    """Unsigned range ``[lo, hi]``."""
    base = abs_unknown(bits)
    r = sync(ScalarAbs(base.tnum, lo, hi, base.smin, base.smax, bits))
    assert r is not None
    return r


def abs_contains(a: ScalarAbs, x: int) -> bool:
    x &= _m(a.bits)
    return (a.tnum.contains(x) and a.umin <= x <= a.umax
            and a.smin <= to_signed(x, a.bits) <= a.smax)


def sync(a: ScalarAbs) -> Optional[ScalarAbs]:
    """Tighten tnum and both interval pairs against each other to a fixed point."""
    bits = a.bits
    M, H = _m(bits), 1 << (bits - 1)
    t, umin, umax, smin, smax = a.tnum, a.umin, a.umax, a.smin, a.smax
    for _ in range(8):
        prev = (t, umin, umax, smin, smax)
        umin = max(umin, t.value)
        umax = min(umax, t.value | t.mask)
        smin = max(smin, to_signed(t.value | (t.mask & H), bits))
        smax = min(smax, to_signed(t.value | (t.mask & ~H & M), bits))
        if smin >= 0 or smax < 0:
            umin = max(umin, smin & M)
            umax = min(umax, smax & M)
        if umin <= umax and (umin & H) == (umax & H):
            smin = max(smin, to_signed(umin, bits))
            smax = min(smax, to_signed(umax, bits))
        if umin > umax or smin > smax:
            return None
        t = t.intersect(Tnum.range(umin, umax, bits))
        if t is None:
            return None
        if (t, umin, umax, smin, smax) == prev:
            break
    return ScalarAbs(t, umin, umax, smin, smax, bits)


def _mk(t: Tnum, bits: int, umin: int | None = None, umax: int | None = None,
        smin: int | None = None, smax: int | None = None) -> ScalarAbs:
    h = 1 << (bits - 1)
    r = sync(ScalarAbs(t, 0 if umin is None else umin, _m(bits) if umax is None else umax,
                       -h if smin is None else smin, h - 1 if smax is None else smax, bits))
    assert r is not None, "transfer produced an empty abstraction"
    return r


def abs_meet(a: ScalarAbs, b: ScalarAbs) -> Optional[ScalarAbs]:
    t = a.tnum.intersect(b.tnum)
    if t is None:
        return None
    return sync(ScalarAbs(t, max(a.umin, b.umin), min(a.umax, b.umax),
                          max(a.smin, b.smin), min(a.smax, b.smax), a.bits))


def abs_join(a: ScalarAbs, b: ScalarAbs) -> ScalarAbs:
    return _mk(a.tnum.union(b.tnum), a.bits, min(a.umin, b.umin), max(a.umax, b.umax),
               min(a.smin, b.smin), max(a.smax, b.smax))


def trunc32(a: ScalarAbs) -> ScalarAbs:
    """View of the low 32 bits of a 64-bit abstraction (the 32-bit sub-bounds)."""
    M32 = _m(32)
    t = Tnum(a.tnum.value & M32, a.tnum.mask & M32)
    umin, umax = 0, M32
    if (a.umin >> 32) == (a.umax >> 32):
        umin, umax = a.umin & M32, a.umax & M32
    if (a.smin >> 32) == (a.smax >> 32):
        lo, hi = a.smin & M32, a.smax & M32
        if lo <= hi:
            umin, umax = max(umin, lo), min(umax, hi)
    smin, smax = -(1 << 31), (1 << 31) - 1
    if -(1 << 31) <= a.smin and a.smax < (1 << 31):
        smin, smax = a.smin, a.smax
    r = sync(ScalarAbs(t, umin, umax, smin, smax, 32))
    return r if r is not None else abs_unknown(32)


def zext(a: ScalarAbs, bits: int = 64) -> ScalarAbs:
    return _mk(a.tnum, bits, a.umin, a.umax)


def _lift_low(a64: ScalarAbs, low: ScalarAbs) -> Optional[ScalarAbs]:
    """Combine a refined 32-bit view back into its 64-bit abstraction."""
    M32 = _m(32)
    if a64.umax <= M32:
        return abs_meet(a64, zext(low))
    hi_unknown = Tnum(0, _m(64) & ~M32)
    lifted = ScalarAbs(Tnum(low.tnum.value, low.tnum.mask | hi_unknown.mask),
                       0, _m(64), -(1 << 63), (1 << 63) - 1, 64)
    return abs_meet(a64, lifted)


# ---------------------------------------------------------------- concrete semantics

def _bswap(x: int, nbytes: int) -> int:
    return int.from_bytes((x & _m(8 * nbytes)).to_bytes(nbytes, "little"), "big")


def concrete_alu(op: AluOp, x: int, y: int, bits: int = 64, to_be: bool = False) -> int:
    """Reference semantics at ``bits`` width; inputs already truncated."""
    M = _m(bits)
    x &= M
    y &= M
    if op == AluOp.ADD:
        return (x + y) & M
    if op == AluOp.SUB:
        return (x - y) & M
    if op == AluOp.MUL:
        return (x * y) & M
    if op == AluOp.DIV:
        return x // y if y else 0
    if op == AluOp.MOD:
        return x % y if y else x
    if op == AluOp.OR:
        return x | y
    if op == AluOp.AND:
        return x & y
    if op == AluOp.XOR:
        return x ^ y
    if op == AluOp.LSH:
        return (x << (y & (bits - 1))) & M
    if op == AluOp.RSH:
        return x >> (y & (bits - 1))
    if op == AluOp.ARSH:
        return (to_signed(x, bits) >> (y & (bits - 1))) & M
    if op == AluOp.NEG:
        return (-x) & M
    if op == AluOp.MOV:
        return y
    if op == AluOp.END:
        if to_be:
            return _bswap(x, y // 8)
        return x & _m(y)
    raise UnsupportedOp(op)


def concrete_cond(op: JmpOp, x: int, y: int, bits: int = 64) -> bool:
    M = _m(bits)
    x &= M
    y &= M
    sx, sy = to_signed(x, bits), to_signed(y, bits)
    return {
        JmpOp.JEQ: x == y, JmpOp.JNE: x != y,
        JmpOp.JGT: x > y, JmpOp.JGE: x >= y, JmpOp.JLT: x < y, JmpOp.JLE: x <= y,
        JmpOp.JSGT: sx > sy, JmpOp.JSGE: sx >= sy, JmpOp.JSLT: sx < sy, JmpOp.JSLE: sx <= sy,
        JmpOp.JSET: (x & y) != 0,
    }[op]


# ---------------------------------------------------------------- ALU transfer

def _wrap_range(lo: int, hi: int, bits: int) -> tuple[int, int] | None:
    """Unsigned hull of the wrapped interval, or None when it spans a wrap."""
    if (lo >> bits) != (hi >> bits):
        return None
    return lo & _m(bits), hi & _m(bits)


def _wrap_srange(lo: int, hi: int, bits: int) -> tuple[int, int] | None:
    h = 1 << (bits - 1)
    r = _wrap_range(lo + h, hi + h, bits)
    if r is None:
        return None
    return r[0] - h, r[1] - h


def _from_ranges(t: Tnum, bits: int, u, s) -> ScalarAbs:
    return _mk(t, bits, *(u or (None, None)), *(s or (None, None)))


def _alu_same_width(op: AluOp, a: ScalarAbs, b: ScalarAbs, to_be: bool) -> ScalarAbs:
    bits = a.bits
    M = _m(bits)
    if a.is_const and b.is_const:
        return abs_const(concrete_alu(op, a.const_value, b.const_value, bits, to_be), bits)
    if op == AluOp.MOV:
        return b
    if op == AluOp.ADD:
        return _from_ranges(a.tnum.add(b.tnum, bits), bits,
                            _wrap_range(a.umin + b.umin, a.umax + b.umax, bits),
                            _wrap_srange(a.smin + b.smin, a.smax + b.smax, bits))
    if op == AluOp.SUB:
        return _from_ranges(a.tnum.sub(b.tnum, bits), bits,
                            _wrap_range(a.umin - b.umax, a.umax - b.umin, bits),
                            _wrap_srange(a.smin - b.smax, a.smax - b.smin, bits))
    if op == AluOp.NEG:
        return _alu_same_width(AluOp.SUB, abs_const(0, bits), a, to_be)
    if op == AluOp.MUL:
        if a.tnum.card_log2() > MUL_MASK_LIMIT or b.tnum.card_log2() > MUL_MASK_LIMIT:
            t = Tnum.unknown(bits)
        else:
            t = a.tnum.mul(b.tnum, bits)
        u = (a.umin * b.umin, a.umax * b.umax) if a.umax * b.umax <= M else None
        corners = [x * y for x in (a.smin, a.smax) for y in (b.smin, b.smax)]
        h = 1 << (bits - 1)
        s = (min(corners), max(corners)) if -h <= min(corners) and max(corners) < h else None
        return _from_ranges(t, bits, u, s)
    if op in (AluOp.DIV, AluOp.MOD):
        if not b.is_const or b.const_value == 0:
            return abs_unknown(bits)
        c = b.const_value
        if op == AluOp.DIV:
            return abs_from_range(a.umin // c, a.umax // c, bits)
        if a.umax < c:
            return a
        return abs_from_range(0, min(a.umax, c - 1), bits)
    if op == AluOp.AND:
        return _mk(a.tnum.and_(b.tnum), bits, None, min(a.umax, b.umax))
    if op == AluOp.OR:
        return _mk(a.tnum.or_(b.tnum), bits, max(a.umin, b.umin))
    if op == AluOp.XOR:
        return _mk(a.tnum.xor(b.tnum), bits)
    if op in (AluOp.LSH, AluOp.RSH, AluOp.ARSH):
        if b.is_const:
            shifts = [b.const_value & (bits - 1)]
        elif b.umax < bits:
            shifts = [k for k in range(b.umin, b.umax + 1) if b.contains(k)]
        else:
            return abs_unknown(bits)
        out = None
        for k in shifts:
            r = _shift_const(op, a, k)
            out = r if out is None else abs_join(out, r)
        return out
    if op == AluOp.END:
        n = b.const_value
        if not to_be:
            t = Tnum(a.tnum.value & _m(n), a.tnum.mask & _m(n))
            return _mk(t, bits, None, a.umax if a.umax <= _m(n) else None)
        return _mk(Tnum(_bswap(a.tnum.value, n // 8), _bswap(a.tnum.mask, n // 8)), bits)
    raise UnsupportedOp(op)


def _shift_const(op: AluOp, a: ScalarAbs, k: int) -> ScalarAbs:
    bits = a.bits
    if op == AluOp.LSH:
        u = (a.umin << k, a.umax << k) if (a.umax << k) <= _m(bits) else None
        return _from_ranges(a.tnum.lshift(k, bits), bits, u, None)
    if op == AluOp.RSH:
        return _from_ranges(a.tnum.rshift(k), bits, (a.umin >> k, a.umax >> k), None)
    return _from_ranges(a.tnum.arshift(k, bits), bits, None, (a.smin >> k, a.smax >> k))


def abs_alu(op: AluOp, a: ScalarAbs, b: ScalarAbs, width: int = 64,
            *, to_be: bool = False) -> ScalarAbs:
    """Sound transfer for ``a := a op b`` at ``width`` bits.

    For ``width`` below the abstraction's own width the operands are
    truncated and the result zero-extended, like 32-bit ALU instructions.
    ``END`` takes the swap width as the constant ``b``.
    """
    if not isinstance(op, AluOp):
        raise UnsupportedOp(op)
    if op == AluOp.END:
        if not b.is_const or b.const_value not in (16, 32, 64):
            raise UnsupportedOp("END needs a constant width of 16, 32 or 64")
        return _alu_same_width(op, a, b, to_be)
    if width == a.bits:
        return _alu_same_width(op, a, b, to_be)
    if width == 32 and a.bits == 64:
        return zext(_alu_same_width(op, trunc32(a), trunc32(b), to_be))
    raise UnsupportedOp(f"width {width} for {a.bits}-bit operands")


# ---------------------------------------------------------------- branch refinement

Pair = Optional[tuple[ScalarAbs, ScalarAbs]]


def _with(a: ScalarAbs, **kw) -> Optional[ScalarAbs]:
    d = dict(tnum=a.tnum, umin=a.umin, umax=a.umax, smin=a.smin, smax=a.smax, bits=a.bits)
    d.update(kw)
    if d["umin"] > d["umax"] or d["smin"] > d["smax"]:
        return None
    return sync(ScalarAbs(**d))


def _pair(a, b) -> Pair:
    return None if a is None or b is None else (a, b)


def _exclude(a: ScalarAbs, c: int) -> Optional[ScalarAbs]:
    """Remove the single value c from a's bounds where it sits on an edge."""
    sc = to_signed(c, a.bits)
    umin, umax, smin, smax = a.umin, a.umax, a.smin, a.smax
    if umin == c:
        umin += 1
    if umax == c:
        umax -= 1
    if smin == sc:
        smin += 1
    if smax == sc:
        smax -= 1
    return _with(a, umin=umin, umax=umax, smin=smin, smax=smax)


def _eq(a, b) -> Pair:
    m = abs_meet(a, b)
    return None if m is None else (m, m)


def _ne(a, b) -> Pair:
    if a.is_const and b.is_const and a.const_value == b.const_value:
        return None
    if b.is_const:
        a = _exclude(a, b.const_value)
    if a is not None and a.is_const:
        b = _exclude(b, a.const_value)
    return _pair(a, b)


def _ugt(a, b, strict: bool) -> Pair:
    d = 1 if strict else 0
    return _pair(_with(a, umin=max(a.umin, b.umin + d)), _with(b, umax=min(b.umax, a.umax - d)))


def _sgt(a, b, strict: bool) -> Pair:
    d = 1 if strict else 0
    return _pair(_with(a, smin=max(a.smin, b.smin + d)), _with(b, smax=min(b.smax, a.smax - d)))


def _jset(a, b, taken: bool) -> Pair:
    bits = a.bits
    M = _m(bits)
    if taken:
        if not ((a.tnum.value | a.tnum.mask) & (b.tnum.value | b.tnum.mask)):
            return None
        na, nb = a, b
        for x, y, slot in ((a, b, 0), (b, a, 1)):
            if y.is_const:
                c = y.const_value
                r = _with(x, umin=max(x.umin, 1))
                if r is not None and c & (c - 1) == 0:
                    t = r.tnum.intersect(Tnum(c, M & ~c))
                    r = None if t is None else _with(r, tnum=t)
                if slot == 0:
                    na = r
                else:
                    nb = r
        return _pair(na, nb)
    if a.tnum.value & b.tnum.value:
        return None
    na, nb = a, b
    if b.is_const:
        t = a.tnum.intersect(Tnum(0, M & ~b.const_value))
        na = None if t is None else _with(a, tnum=t)
    if a.is_const:
        t = b.tnum.intersect(Tnum(0, M & ~a.const_value))
        nb = None if t is None else _with(b, tnum=t)
    return _pair(na, nb)


def _swap(p: Pair) -> Pair:
    return None if p is None else (p[1], p[0])


def _refine_same_width(cond: JmpOp, a: ScalarAbs, b: ScalarAbs) -> tuple[Pair, Pair]:
    if cond == JmpOp.JEQ:
        return _eq(a, b), _ne(a, b)
    if cond == JmpOp.JNE:
        return _ne(a, b), _eq(a, b)
    if cond == JmpOp.JGT:
        return _ugt(a, b, True), _swap(_ugt(b, a, False))
    if cond == JmpOp.JGE:
        return _ugt(a, b, False), _swap(_ugt(b, a, True))
    if cond == JmpOp.JLT:
        return _swap(_ugt(b, a, True)), _ugt(a, b, False)
    if cond == JmpOp.JLE:
        return _swap(_ugt(b, a, False)), _ugt(a, b, True)
    if cond == JmpOp.JSGT:
        return _sgt(a, b, True), _swap(_sgt(b, a, False))
    if cond == JmpOp.JSGE:
        return _sgt(a, b, False), _swap(_sgt(b, a, True))
    if cond == JmpOp.JSLT:
        return _swap(_sgt(b, a, True)), _sgt(a, b, False)
    if cond == JmpOp.JSLE:
        return _swap(_sgt(b, a, False)), _sgt(a, b, True)
    if cond == JmpOp.JSET:
        return _jset(a, b, True), _jset(a, b, False)
    raise UnsupportedOp(cond)


def abs_refine_branch(cond: JmpOp, a: ScalarAbs, b: ScalarAbs,
                      width: int = 64) -> tuple[Pair, Pair]:
    """Refine ``(a, b)`` under ``a cond b`` (taken) and its negation.

    Each side is ``None`` when that outcome is impossible.
    """
    if not isinstance(cond, JmpOp) or not cond.is_conditional:
        raise UnsupportedOp(cond)
    if width == a.bits:
        return _refine_same_width(cond, a, b)
    if width == 32 and a.bits == 64:
        taken, not_taken = _refine_same_width(cond, trunc32(a), trunc32(b))
        out = []
        for side in (taken, not_taken):
            if side is None:
                out.append(None)
                continue
            out.append(_pair(_lift_low(a, side[0]), _lift_low(b, side[1])))
        return out[0], out[1]
    raise UnsupportedOp(f"width {width} for {a.bits}-bit operands")


def branch_outcome(cond: JmpOp, a: ScalarAbs, b: ScalarAbs, width: int = 64) -> bool | None:
    """True/False when the outcome is decided, None when both are feasible."""
    taken, not_taken = abs_refine_branch(cond, a, b, width)
    if taken is None and not_taken is not None:
        return False
    if not_taken is None and taken is not None:
        return True
    return None
