"""Command-line front end: ``ubpf-forge <subcommand>``.

Exit codes: 0 success, 1 usage or parse error, 2 load-time rejection.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field

from .absdom import (Tnum, abs_alu, abs_const, abs_from_range, abs_unknown, sync)
from .cfg import check_cfg, to_dot
from .engine import EngineError
from .isa import AluOp, IsaError, Program, decode, encode, format_asm, parse_asm
from .rejection import Rejection
from .runtime import STATE_ENV, LoadOptions, Runtime
from .runtime.registry import LifecycleError
from .verifier import VerifierConfig, verify

EXIT_OK, EXIT_USAGE, EXIT_REJECT = 0, 1, 2


@dataclass
class CliConfig:
    subcommand: str
    input: str | None = None
    state_dir: str | None = None
    log_level: int = 1
    json: bool = False
    flags: dict = field(default_factory=dict)


class UsageError(Exception):
    pass


def _read_input(path: str | None) -> bytes:
    if path in (None, "-"):
        return sys.stdin.buffer.read()
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise UsageError(str(e)) from None


def load_program(path: str | None, prog_type: str = "xdp") -> Program:
    """Assembly text, or raw bytecode when the input is not UTF-8 or ends in .bin."""
    raw = _read_input(path)
    if path and path.endswith(".bin"):
        return decode(raw, prog_type=prog_type)
    try:
        text = raw.decode()
    except UnicodeDecodeError:
        return decode(raw, prog_type=prog_type)
    return parse_asm(text, prog_type)


def _verifier_config(a) -> VerifierConfig:
    kw = {"pruning_enabled": not getattr(a, "no_pruning", False),
          "log_level": a.log_level}
    if getattr(a, "limit", None) is not None:
        kw["complexity_limit"] = a.limit
    return VerifierConfig(**kw)


def _print_rejection(r: Rejection, as_json: bool, out) -> int:
    if as_json:
        print(json.dumps({"verdict": "reject", "kind": r.kind, "property": str(r.property),
                          "index": r.index, "detail": r.detail,
                          "insn_processed": r.insn_processed, "log": r.log}), file=out)
    else:
        for line in r.log:
            print(line, file=out)
        print(r.reject_line(), file=out)
    return EXIT_REJECT


# ---------------------------------------------------------------- subcommands

def cmd_asm(a) -> int:
    p = parse_asm(_read_input(a.input).decode())
    data = encode(p)
    if a.output:
        with open(a.output, "wb") as f:
            f.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    return EXIT_OK


def cmd_disasm(a) -> int:
    sys.stdout.write(format_asm(decode(_read_input(a.input))))
    return EXIT_OK


def cmd_verify(a) -> int:
    p = load_program(a.input)
    try:
        vp = verify(p, config=_verifier_config(a))
    except Rejection as r:
        return _print_rejection(r, a.json, sys.stdout)
    if a.json:
        print(json.dumps({"verdict": "accept", "stats": asdict(vp.stats), "log": vp.log}))
        return EXIT_OK
    for line in vp.log:
        print(line)
    print("ACCEPT")
    if a.stats:
        for k, v in asdict(vp.stats).items():
            print(f"{k}: {v}")
    return EXIT_OK


def cmd_run(a) -> int:
    try:
        packet = bytes.fromhex(a.packet.replace(" ", "").replace(":", ""))
    except ValueError:
        raise UsageError(f"--packet is not hex: {a.packet!r}") from None
    p = load_program(a.input)
    opts = LoadOptions(verifier=_verifier_config(a), blind=a.blind, seed=a.seed)
    rt = Runtime()
    try:
        h = rt.prog_load(p, options=opts)
    except Rejection as r:
        return _print_rejection(r, a.json, sys.stdout)
    if a.emit == "post-xform":
        sys.stdout.write(format_asm(rt.program(h).xformed.program))
    hook = "xdp@cli0"
    link = rt.link_create(h, hook)
    rt.obj_put(h)   # the link now holds the only program reference
    try:
        act, res = rt.dispatch(hook, packet, a.engine, a.fuel)
    except EngineError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        rt.obj_put(link)
        return EXIT_USAGE
    rt.obj_put(link)   # detach and release
    assert not rt.registry.objects()
    if a.json:
        print(json.dumps({"action": act.name, "r0": res.r0, "insn_count": res.insn_count,
                          "zero_filled": res.zero_filled,
                          "trace": [t.hex() for t in res.trace]}))
    else:
        print(f"{act.name} r0={res.r0}")
        for t in res.trace:
            print(f"trace: {t.hex()}")
    return EXIT_OK


def cmd_cfg(a) -> int:
    p = load_program(a.input)
    try:
        r = check_cfg(p)
    except Rejection as rej:
        return _print_rejection(rej, False, sys.stderr)
    sys.stdout.write(to_dot(p, r))
    return EXIT_OK


def cmd_objects(a) -> int:
    rt = Runtime(a.cfg.state_dir)
    rows = rt.objects()
    if a.json:
        print(json.dumps(rows))
        return EXIT_OK
    for r in rows:
        pins = ",".join(r["pins"]) or "-"
        print(f"{r['handle']:>4} {r['kind']:<8} refs={r['refcount']} pins={pins}")
    return EXIT_OK


def cmd_load(a) -> int:
    if not a.cfg.state_dir:
        raise UsageError("load needs --state-dir (or UBPF_FORGE_STATE) to keep the pin")
    p = load_program(a.input)
    rt = Runtime(a.cfg.state_dir)
    try:
        h = rt.prog_load(p, options=LoadOptions(verifier=_verifier_config(a)))
    except Rejection as r:
        return _print_rejection(r, False, sys.stdout)
    rt.pin(h, a.pin)
    rt.obj_put(h)
    rt.close()
    print(f"pinned program at {a.pin}")
    return EXIT_OK


def cmd_unpin(a) -> int:
    rt = Runtime(a.cfg.state_dir)
    rt.unpin(a.path)
    rt.close()
    return EXIT_OK


def parse_abs(s: str, bits: int):
    """``5``, ``-1``, ``lo..hi``, ``value/mask`` (tnum) or ``?``."""
    s = s.strip()
    try:
        if s in ("?", "unknown"):
            return abs_unknown(bits)
        if ".." in s:
            lo, hi = (int(x, 0) for x in s.split(".."))
            return abs_from_range(lo, hi, bits)
        if "/" in s:
            v, m = (int(x, 0) for x in s.split("/"))
            if v & m:
                raise UsageError(f"tnum {s}: value and mask overlap")
            base = abs_unknown(bits)
            r = sync(base.__class__(Tnum(v, m), base.umin, base.umax, base.smin, base.smax,
                                    bits))
            if r is None:
                raise UsageError(f"empty abstract value {s}")
            return r
        return abs_const(int(s, 0), bits)
    except ValueError:
        raise UsageError(f"cannot parse abstract value {s!r}") from None


def cmd_absdom_eval(a) -> int:
    try:
        op = AluOp[a.op.upper()]
    except KeyError:
        raise UsageError(f"unknown ALU op {a.op!r}") from None
    x, y = parse_abs(a.a, a.bits), parse_abs(a.b, a.bits)
    r = abs_alu(op, x, y, a.width or a.bits)
    if a.json:
        print(json.dumps({"tnum": [r.tnum.value, r.tnum.mask], "umin": r.umin, "umax": r.umax,
                          "smin": r.smin, "smax": r.smax, "bits": r.bits}))
    else:
        print(f"{x} {op.name.lower()} {y} = {r}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ubpf-forge", description=__doc__.splitlines()[0])
    ap.add_argument("--state-dir", default=None, help="pin registry directory")
    ap.add_argument("--log-level", type=int, default=1)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    s = sub.add_parser("asm", help="assemble text to bytecode")
    s.add_argument("input", nargs="?")
    s.add_argument("-o", "--output")
    s.set_defaults(fn=cmd_asm)

    s = sub.add_parser("disasm", help="disassemble bytecode")
    s.add_argument("input", nargs="?")
    s.set_defaults(fn=cmd_disasm)

    def vflags(s):
        s.add_argument("--no-pruning", action="store_true")
        s.add_argument("--limit", type=int, default=None, help="complexity limit")

    s = sub.add_parser("verify", help="run the verifier and print its log")
    s.add_argument("input", nargs="?")
    s.add_argument("--stats", action="store_true")
    s.add_argument("--json", action="store_true")
    vflags(s)
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("run", help="load, attach, dispatch one packet, detach")
    s.add_argument("input", nargs="?")
    s.add_argument("--packet", required=True, help="frame as hex")
    s.add_argument("--engine", choices=("interp", "image"), default="image")
    s.add_argument("--blind", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fuel", type=int, default=1_000_000)
    s.add_argument("--emit", choices=("post-xform",), default=None)
    s.add_argument("--json", action="store_true")
    vflags(s)
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("cfg", help="emit the control-flow graph as DOT")
    s.add_argument("input", nargs="?")
    s.set_defaults(fn=cmd_cfg)

    s = sub.add_parser("objects", help="list live objects")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_objects)

    s = sub.add_parser("load", help="load a program and pin it")
    s.add_argument("input", nargs="?")
    s.add_argument("--pin", required=True)
    vflags(s)
    s.set_defaults(fn=cmd_load)

    s = sub.add_parser("unpin", help="drop a pin")
    s.add_argument("path")
    s.set_defaults(fn=cmd_unpin)

    s = sub.add_parser("absdom", help="abstract-domain tools")
    asub = s.add_subparsers(dest="absdom_cmd", required=True)
    e = asub.add_parser("eval", help="apply one ALU transfer function")
    e.add_argument("op")
    e.add_argument("a")
    e.add_argument("b")
    e.add_argument("--bits", type=int, choices=(8, 16, 32, 64), default=64)
    e.add_argument("--width", type=int, choices=(32, 64), default=None)
    e.add_argument("--json", action="store_true")
    e.set_defaults(fn=cmd_absdom_eval)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    a.cfg = CliConfig(a.subcommand, getattr(a, "input", None),
                      os.environ.get(STATE_ENV) or a.state_dir, a.log_level,
                      getattr(a, "json", False))
    try:
        return a.fn(a)
    except IsaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, LifecycleError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Rejection as r:
        return _print_rejection(r, False, sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
