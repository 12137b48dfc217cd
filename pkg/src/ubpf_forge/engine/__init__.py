"""Execution: reference interpreter and the lowered-image pipeline."""

from .context import (ConcreteBoundsViolation, EngineError, Env, ExecContext, ExecResult,
                      FuelExhausted, MissingExceptionEntry, ReadOnlyImage, make_xdp_context)
from .interp import interpret
from .jit import BLIND_REG, FuncImage, JitImage, Op, exec_image, lower, original_immediates
from .memory import Memory, MemoryFault

__all__ = ["interpret", "lower", "exec_image", "JitImage", "FuncImage", "Op", "BLIND_REG",
           "original_immediates", "Memory", "MemoryFault", "Env", "ExecContext", "ExecResult",
           "make_xdp_context", "EngineError", "FuelExhausted", "ConcreteBoundsViolation",
           "MissingExceptionEntry", "ReadOnlyImage"]
