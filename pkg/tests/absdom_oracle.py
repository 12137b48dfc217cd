"""Independent concrete oracle for the abstract domain at small widths (numpy)."""

import numpy as np

from ubpf_forge.absdom import ScalarAbs, Tnum, sync
from ubpf_forge.isa import AluOp, JmpOp


def all_tnums(bits=8):
    out = []
    for m in range(1 << bits):
        for v in range(1 << bits):
            if v & m == 0:
                out.append((v, m))
    return out


def gamma(v, m, bits=8):
    xs = np.arange(1 << bits, dtype=np.int64)
    return xs[(xs & ~m) == v]


def from_tnum(v, m, bits=8) -> ScalarAbs:
    h = 1 << (bits - 1)
    r = sync(ScalarAbs(Tnum(v, m), 0, (1 << bits) - 1, -h, h - 1, bits))
    assert r is not None
    return r


def signed(x, bits=8):
    x = np.asarray(x, dtype=np.int64)
    return np.where(x >= 1 << (bits - 1), x - (1 << bits), x)


def concrete(op, x, y, bits=8):
    """Reference ALU semantics on arrays, written independently of the package."""
    M = (1 << bits) - 1
    sh = y & (bits - 1)
    if op == AluOp.ADD:
        r = x + y
    elif op == AluOp.SUB:
        r = x - y
    elif op == AluOp.MUL:
        r = x * y
    elif op == AluOp.DIV:
        r = np.where(y == 0, 0, x // np.where(y == 0, 1, y))
    elif op == AluOp.MOD:
        r = np.where(y == 0, x, x % np.where(y == 0, 1, y))
    elif op == AluOp.OR:
        r = x | y
    elif op == AluOp.AND:
        r = x & y
    elif op == AluOp.XOR:
        r = x ^ y
    elif op == AluOp.LSH:
        r = x << sh
    elif op == AluOp.RSH:
        r = x >> sh
    elif op == AluOp.ARSH:
        r = signed(x, bits) >> sh
    elif op == AluOp.NEG:
        r = -x
    elif op == AluOp.MOV:
        r = y
    else:
        raise ValueError(op)
    return r & M


def member_mask(a: ScalarAbs, xs, bits=8):
    t = a.tnum
    s = signed(xs, bits)
    return (((xs & ~t.mask) == t.value) & (xs >= a.umin) & (xs <= a.umax)
            & (s >= a.smin) & (s <= a.smax))


def cond(op, x, y, bits=8):
    sx, sy = signed(x, bits), signed(y, bits)
    return {JmpOp.JEQ: x == y, JmpOp.JNE: x != y, JmpOp.JGT: x > y, JmpOp.JGE: x >= y,
            JmpOp.JLT: x < y, JmpOp.JLE: x <= y, JmpOp.JSGT: sx > sy, JmpOp.JSGE: sx >= sy,
            JmpOp.JSLT: sx < sy, JmpOp.JSLE: sx <= sy, JmpOp.JSET: (x & y) != 0}[op]


def tightest_tnum(values):
    """Smallest tnum containing every value: bits that agree are known."""
    values = np.asarray(values, dtype=np.int64)
    a = int(np.bitwise_and.reduce(values))
    o = int(np.bitwise_or.reduce(values))
    return Tnum(a, a ^ o)


def pairs(xs, ys):
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return X.ravel(), Y.ravel()
