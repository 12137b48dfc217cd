"""Reference-counted object registry with a pin namespace."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable


class LifecycleError(Exception):
    pass


class UnknownHandle(LifecycleError):
    pass


class PathExists(LifecycleError):
    pass


class PathMissing(LifecycleError):
    pass


class TypeMismatch(LifecycleError):
    pass


class HookBusy(LifecycleError):
    pass


class NotOwned(LifecycleError):
    """A put on an object the caller holds no reference to."""


@dataclass
class RuntimeObject:
    handle: int
    kind: str                  # "program" | "map" | "link"
    payload: Any
    refcount: int = 1
    user_refs: int = 1         # references held through handles, a subset of refcount
    on_release: Callable[["RuntimeObject"], None] | None = field(default=None, repr=False)


class Registry:
    """Objects live exactly while their reference count is positive.

    References come from handles (get/put) and from internal holders: pins,
    links holding their program, programs holding their maps. A handle put
    only consumes a handle reference, so callers cannot drop a reference
    that some other object owns. Release callbacks run outside the lock so
    they may drop further references.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._objects: dict[int, RuntimeObject] = {}
        self._pins: dict[str, int] = {}
        self._next = 1

    def add(self, kind: str, payload: Any,
            on_release: Callable[[RuntimeObject], None] | None = None,
            user: bool = True) -> int:
        """New object with one reference: a handle reference, or an internal
        one the caller must later drop with ``release``."""
        with self._lock:
            h = self._next
            self._next += 1
            self._objects[h] = RuntimeObject(h, kind, payload, 1, int(user), on_release)
            return h

    def lookup(self, handle: int, kind: str | None = None) -> RuntimeObject:
        with self._lock:
            obj = self._objects.get(handle)
        if obj is None:
            raise UnknownHandle(f"no live object with handle {handle}")
        if kind is not None and obj.kind != kind:
            raise TypeMismatch(f"handle {handle} is a {obj.kind}, expected {kind}")
        return obj

    def get(self, handle: int) -> int:
        with self._lock:
            obj = self.lookup(handle)
            obj.refcount += 1
            obj.user_refs += 1
            return obj.refcount

    def put(self, handle: int) -> int:
        with self._lock:
            obj = self.lookup(handle)
            if obj.user_refs == 0:
                raise NotOwned(f"no handle reference to {obj.kind} {handle}")
            obj.user_refs -= 1
            return self.release(handle)

    def hold(self, handle: int) -> int:
        """Take an internal reference."""
        with self._lock:
            obj = self.lookup(handle)
            obj.refcount += 1
            return obj.refcount

    def release(self, handle: int) -> int:
        """Drop an internal reference (or, via ``put``, a handle reference)."""
        with self._lock:
            obj = self.lookup(handle)
            obj.refcount -= 1
            left = obj.refcount
            if left == 0:
                del self._objects[handle]
                for path in [p for p, h in self._pins.items() if h == handle]:
                    del self._pins[path]
        if left == 0 and obj.on_release is not None:
            obj.on_release(obj)
        return left

    def pin(self, handle: int, path: str) -> None:
        with self._lock:
            if path in self._pins:
                raise PathExists(path)
            self.lookup(handle)
            self._pins[path] = handle
            self.hold(handle)

    def unpin(self, path: str) -> int:
        with self._lock:
            h = self._pins.pop(path, None)
            if h is None:
                raise PathMissing(path)
        self.release(h)
        return h

    def pinned(self, path: str) -> int:
        with self._lock:
            if path not in self._pins:
                raise PathMissing(path)
            return self._pins[path]

    def is_live(self, handle: int) -> bool:
        with self._lock:
            return handle in self._objects

    def objects(self) -> list[RuntimeObject]:
        with self._lock:
            return sorted(self._objects.values(), key=lambda o: o.handle)

    def pins(self) -> dict[str, int]:
        with self._lock:
            return dict(self._pins)


__all__ = ["Registry", "RuntimeObject", "LifecycleError", "UnknownHandle", "PathExists",
           "PathMissing", "TypeMismatch", "HookBusy", "NotOwned"]
