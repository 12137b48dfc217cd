"""Load-time verifier: symbolic execution with pruning and precision tracking."""

from .core import VerifiedProgram, Verifier, VerifierStats, verify
from .prune import propagate_precision, regsafe, states_equal
from .state import RegState, RegType, VerifierConfig, VerifierState

__all__ = ["verify", "Verifier", "VerifiedProgram", "VerifierStats", "VerifierConfig",
           "VerifierState", "RegState", "RegType", "propagate_precision", "regsafe",
           "states_equal"]
