"""A user-space eBPF-style load-time verifier, rewrite pipeline and execution engine."""

from .isa import Program, decode, encode, format_asm, parse_asm
from .rejection import Property, Rejection

__version__ = "0.1.0"

__all__ = ["Program", "decode", "encode", "format_asm", "parse_asm", "Property", "Rejection"]
