"""The runtime: load, attach, dispatch and pin programs and maps."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping

from ..cfg import check_cfg
from ..engine import (Memory, exec_image, interpret, lower, make_xdp_context)
from ..engine.context import ExecResult
from ..engine.interp import DEFAULT_FUEL
from ..engine.jit import JitImage
from ..isa import Program, format_asm, parse_asm
from ..verifier import VerifiedProgram, VerifierConfig, verify
from ..xform import XformResult, run_pipeline
from .env import RuntimeEnv
from .maps import MapDef, MapInstance, create_map
from .registry import HookBusy, Registry, RuntimeObject, TypeMismatch

STATE_ENV = "UBPF_FORGE_STATE"
PINS_FILE = "pins.jsonl"


class XdpAction(IntEnum):
    ABORTED = 0
    DROP = 1
    PASS = 2
    TX = 3


@dataclass
class LoadOptions:
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    dce: bool = True
    rewrite: bool = True
    blind: bool = False
    seed: int | None = 0
    blind_threshold: int = 0


@dataclass
class LoadedProgram:
    source: Program
    verified: VerifiedProgram
    xformed: XformResult
    image: JitImage
    map_handles: tuple[int, ...]
    env: RuntimeEnv

    @property
    def prog_type(self) -> str:
        return self.source.prog_type


@dataclass
class HookPoint:
    name: str
    prog_type: str = "xdp"
    link: int | None = None


@dataclass
class Link:
    prog: int
    hook: str


class Runtime:
    """All objects share one memory; handles index a refcounted registry."""

    def __init__(self, state_dir: str | os.PathLike | None = None, mem: Memory | None = None,
                 options: LoadOptions | None = None):
        self.mem = mem or Memory()
        self.registry = Registry()
        self.options = options or LoadOptions()
        self.hooks: dict[str, HookPoint] = {}
        self._hook_lock = threading.Lock()
        sd = os.environ.get(STATE_ENV) or state_dir
        self.state_dir = Path(sd) if sd else None
        self._loading_state = False
        if self.state_dir is not None:
            self._reload()

    # --- maps -----------------------------------------------------------

    def map_create(self, d: MapDef, name: str = "", _owned: bool = False) -> int:
        inst = create_map(d, self.mem, name)
        return self.registry.add("map", inst, lambda o: o.payload.destroy(), user=not _owned)

    def map_instance(self, handle: int) -> MapInstance:
        return self.registry.lookup(handle, "map").payload

    def map_lookup(self, handle: int, key: bytes) -> bytes | None:
        return self.map_instance(handle).lookup(key)

    def map_update(self, handle: int, key: bytes, value: bytes, flags: int = 0) -> int:
        return self.map_instance(handle).update(key, value, flags)

    def map_delete(self, handle: int, key: bytes) -> int:
        return self.map_instance(handle).delete(key)

    # --- programs -------------------------------------------------------

    def prog_load(self, src: Program | str, prog_type: str = "xdp",
                  maps: Mapping[str, int] | None = None,
                  options: LoadOptions | None = None) -> int:
        """Check, verify, transform and lower ``src``; return a program handle.

        ``maps`` binds ``.map`` names to existing map handles; unbound names
        get fresh maps owned by the program. Rejections propagate with their log.
        """
        opt = options or self.options
        p = parse_asm(src, prog_type) if isinstance(src, str) else src
        maps = dict(maps or {})
        for name, h in maps.items():
            inst = self.map_instance(h)
            ref = next((m for m in p.map_refs if m.name == name), None)
            if ref is not None and (ref.map_type, ref.key_size, ref.value_size,
                                    ref.max_entries) != (inst.defn.map_type, inst.defn.key_size,
                                                         inst.defn.value_size,
                                                         inst.defn.max_entries):
                raise TypeMismatch(f"map {name!r} does not match the program's definition")
        report = check_cfg(p)
        vp = verify(p, cfg=report, config=opt.verifier)
        xr = run_pipeline(p, vp, dce=opt.dce, rewrite=opt.rewrite)
        img = lower(xr.program, blind=opt.blind, seed=opt.seed, threshold=opt.blind_threshold,
                    untrusted_loads=xr.untrusted_loads, stack_size=opt.verifier.stack_size)

        handles: list[int] = []
        try:
            for ref in p.map_refs:
                if ref.name in maps:
                    self.registry.hold(maps[ref.name])
                    handles.append(maps[ref.name])
                else:
                    d = MapDef(ref.map_type, ref.key_size, ref.value_size, ref.max_entries)
                    handles.append(self.map_create(d, ref.name, _owned=True))
        except Exception:
            for h in handles:
                self.registry.release(h)
            raise
        env = RuntimeEnv(self.mem, [self.map_instance(h) for h in handles])
        lp = LoadedProgram(p, vp, xr, img, tuple(handles), env)
        return self.registry.add("program", lp, self._release_program)

    def _release_program(self, obj: RuntimeObject) -> None:
        for h in obj.payload.map_handles:
            self.registry.release(h)

    def program(self, handle: int) -> LoadedProgram:
        return self.registry.lookup(handle, "program").payload

    def run(self, handle: int, packet: bytes, engine: str = "image",
            fuel: int = DEFAULT_FUEL) -> ExecResult:
        """Execute a loaded program once on ``packet`` without any hook."""
        lp = self.program(handle)
        ctx = make_xdp_context(lp.env, packet, lp.image.stack_size)
        try:
            if engine == "image":
                return exec_image(lp.image, ctx, fuel)
            if engine == "interp":
                return interpret(lp.xformed.program, ctx, fuel, lp.xformed.untrusted_loads)
            if engine == "interp-source":
                return interpret(lp.source, ctx, fuel)
            raise ValueError(f"unknown engine {engine!r}")
        finally:
            ctx.release()

    # --- hooks and links ------------------------------------------------

    def hook(self, name: str, prog_type: str = "xdp") -> HookPoint:
        with self._hook_lock:
            hp = self.hooks.get(name)
            if hp is None:
                hp = self.hooks[name] = HookPoint(name, prog_type)
            return hp

    def link_create(self, prog: int, hook: str) -> int:
        lp = self.program(prog)
        hp = self.hook(hook)
        if lp.prog_type != hp.prog_type:
            raise TypeMismatch(f"{lp.prog_type} program cannot attach to {hp.prog_type} hook")
        with self._hook_lock:
            if hp.link is not None:
                raise HookBusy(f"hook {hook!r} already has link {hp.link}")
            self.registry.hold(prog)
            h = self.registry.add("link", Link(prog, hook), self._release_link)
            hp.link = h
        return h

    def _release_link(self, obj: RuntimeObject) -> None:
        link: Link = obj.payload
        with self._hook_lock:
            hp = self.hooks.get(link.hook)
            if hp is not None and hp.link == obj.handle:
                hp.link = None
        self.registry.release(link.prog)

    def attached(self, hook: str) -> int | None:
        """Program handle attached at ``hook``, if any."""
        hp = self.hooks.get(hook)
        with self._hook_lock:
            if hp is None or hp.link is None:
                return None
            return self.registry.lookup(hp.link, "link").payload.prog

    def hook_dispatch(self, hook: str, packet: bytes, engine: str = "image",
                      fuel: int = DEFAULT_FUEL) -> XdpAction:
        return self.dispatch(hook, packet, engine, fuel)[0]

    def dispatch(self, hook: str, packet: bytes, engine: str = "image",
                 fuel: int = DEFAULT_FUEL) -> tuple[XdpAction, ExecResult | None]:
        prog = self.attached(hook)
        if prog is None:
            return XdpAction.PASS, None
        res = self.run(prog, packet, engine, fuel)
        act = XdpAction(res.r0) if res.r0 in XdpAction._value2member_map_ else XdpAction.ABORTED
        return act, res

    # --- handles and pins -----------------------------------------------

    def obj_get(self, handle: int) -> int:
        return self.registry.get(handle)

    def obj_put(self, handle: int) -> int:
        return self.registry.put(handle)

    def pin(self, handle: int, path: str) -> None:
        self.registry.pin(handle, path)
        self._save()

    def unpin(self, path: str) -> None:
        self.registry.unpin(path)
        self._save()

    def pinned(self, path: str) -> int:
        return self.registry.pinned(path)

    def is_live(self, handle: int) -> bool:
        return self.registry.is_live(handle)

    def objects(self) -> list[dict]:
        pins: dict[int, list[str]] = {}
        for path, h in self.registry.pins().items():
            pins.setdefault(h, []).append(path)
        rows = []
        for o in self.registry.objects():
            row = {"handle": o.handle, "kind": o.kind, "refcount": o.refcount,
                   "user_refs": o.user_refs,
                   "pins": sorted(pins.get(o.handle, []))}
            if o.kind == "map":
                row["name"] = o.payload.name
                row["def"] = o.payload.defn.to_json()
            elif o.kind == "program":
                row["prog_type"] = o.payload.prog_type
                row["insns"] = len(o.payload.source.insns)
                row["maps"] = list(o.payload.map_handles)
            else:
                row["prog"] = o.payload.prog
                row["hook"] = o.payload.hook
            rows.append(row)
        return rows

    # --- persistence ----------------------------------------------------

    def _map_record(self, inst: MapInstance) -> dict:
        return {"name": inst.name, "def": inst.defn.to_json(),
                "entries": [[k.hex(), v.hex()] for k, v in inst.dump().items()
                            if inst.defn.map_type == "hash" or any(v)]}

    def save(self) -> None:
        self._save()

    def _save(self) -> None:
        if self.state_dir is None or self._loading_state:
            return
        pins = self.registry.pins()
        by_handle = {h: p for p, h in sorted(pins.items(), reverse=True)}
        recs = []
        # maps first so programs can refer to them by pin path
        for path, h in sorted(pins.items(), key=lambda kv: self.registry.lookup(kv[1]).kind):
            obj = self.registry.lookup(h)
            if obj.kind == "map":
                recs.append({"path": path, "kind": "map", **self._map_record(obj.payload)})
            elif obj.kind == "program":
                lp: LoadedProgram = obj.payload
                bound = {}
                for ref, mh in zip(lp.source.map_refs, lp.map_handles):
                    if mh in by_handle:
                        bound[ref.name] = {"pin": by_handle[mh]}
                    else:
                        bound[ref.name] = self._map_record(self.map_instance(mh))
                recs.append({"path": path, "kind": "program", "prog_type": lp.prog_type,
                             "asm": format_asm(lp.source), "maps": bound})
            # links are not persisted: a hook attachment does not outlive the process
        self.state_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.state_dir / (PINS_FILE + ".tmp")
        with open(tmp, "w") as f:
            for r in recs:
                f.write(json.dumps(r, sort_keys=True) + "\n")
        os.replace(tmp, self.state_dir / PINS_FILE)

    def _restore_map(self, rec: dict) -> int:
        d = MapDef(**rec["def"])
        h = self.map_create(d, rec.get("name", ""))
        inst = self.map_instance(h)
        for k, v in rec.get("entries", []):
            inst.update(bytes.fromhex(k), bytes.fromhex(v))
        return h

    def _reload(self) -> None:
        f = self.state_dir / PINS_FILE
        if not f.exists():
            return
        self._loading_state = True
        try:
            recs = [json.loads(line) for line in f.read_text().splitlines() if line.strip()]
            for rec in recs:
                if rec["kind"] == "map":
                    h = self._restore_map(rec)
                    self.registry.pin(h, rec["path"])
                    self.registry.put(h)
            for rec in recs:
                if rec["kind"] != "program":
                    continue
                bound, temp = {}, []
                for name, m in rec.get("maps", {}).items():
                    if "pin" in m:
                        bound[name] = self.registry.pinned(m["pin"])
                    else:
                        bound[name] = self._restore_map(m)
                        temp.append(bound[name])
                h = self.prog_load(rec["asm"], rec.get("prog_type", "xdp"), bound)
                for t in temp:
                    self.registry.put(t)
                self.registry.pin(h, rec["path"])
                self.registry.put(h)
        finally:
            self._loading_state = False

    def close(self) -> None:
        """Persist pinned state (including current map contents)."""
        self._save()


__all__ = ["Runtime", "LoadOptions", "LoadedProgram", "HookPoint", "Link", "XdpAction",
           "STATE_ENV"]
