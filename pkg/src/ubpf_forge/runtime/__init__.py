"""Object lifecycle, maps, helpers and the simulated XDP hook."""

from .core import STATE_ENV, HookPoint, Link, LoadedProgram, LoadOptions, Runtime, XdpAction
from .env import RuntimeEnv
from .maps import ArrayMap, HashMap, InvalidDef, MapDef, MapInstance, create_map
from .registry import (HookBusy, LifecycleError, NotOwned, PathExists, PathMissing, Registry,
                       RuntimeObject, TypeMismatch, UnknownHandle)

__all__ = ["Runtime", "LoadOptions", "LoadedProgram", "HookPoint", "Link", "XdpAction",
           "STATE_ENV", "RuntimeEnv", "MapDef", "MapInstance", "ArrayMap", "HashMap",
           "InvalidDef", "create_map", "Registry", "RuntimeObject", "LifecycleError",
           "UnknownHandle", "PathExists", "PathMissing", "TypeMismatch", "HookBusy", "NotOwned"]
