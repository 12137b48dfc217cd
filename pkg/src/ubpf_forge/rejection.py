from __future__ import annotations

from enum import Enum


class Property(str, Enum):
    MEMORY = "Memory Safety"
    TYPE = "Type Safety"
    RESOURCE = "Resource Safety"
    INFO_LEAK = "Information Leak Safety"
    DATA_RACE = "Data Race Freedom"
    TERMINATION = "Termination"
    DEADLOCK = "Deadlock Freedom"
    CONTEXT = "Upholding Execution Context Invariants"
    CONTROL_FLOW = "Control-Flow Validity"

    def __str__(self) -> str:
        return self.value


# reason kind -> violated property
KIND_PROPERTY = {
    "OutOfBounds": Property.MEMORY,
    "MisalignedAccess": Property.MEMORY,
    "NullDeref": Property.MEMORY,
    "InvalidPointer": Property.MEMORY,
    "BadPointerArithmetic": Property.MEMORY,
    "UseAfterRelease": Property.MEMORY,
    "StaleMapValueWrite": Property.MEMORY,
    "CallStackOverflow": Property.MEMORY,
    "ArgTypeMismatch": Property.TYPE,
    "InvalidSpillFill": Property.TYPE,
    "IteratorClobber": Property.TYPE,
    "ResourceLeak": Property.RESOURCE,
    "ReleaseOfUnownedRef": Property.RESOURCE,
    "DoubleRelease": Property.RESOURCE,
    "ExitWhileLocked": Property.RESOURCE,
    "UninitializedStackRead": Property.INFO_LEAK,
    "UninitializedRead": Property.INFO_LEAK,
    "PointerLeak": Property.INFO_LEAK,
    "KernelStateWrite": Property.DATA_RACE,
    "ComplexityLimitExceeded": Property.TERMINATION,
    "SecondLockHeld": Property.DEADLOCK,
    "UnlockWithoutLock": Property.DEADLOCK,
    "LockRegionMismatch": Property.DEADLOCK,
    "CallWhileLocked": Property.DEADLOCK,
    "UninitializedReturn": Property.CONTEXT,
    "WriteToR10": Property.CONTEXT,
    "UnknownHelper": Property.CONTEXT,
    "InvalidInstruction": Property.CONTEXT,
    "UnreachableInstruction": Property.CONTROL_FLOW,
    "FallthroughOffSubprog": Property.CONTROL_FLOW,
    "JumpOutOfRange": Property.CONTROL_FLOW,
    "RecursiveCall": Property.CONTROL_FLOW,
    "EmptyProgram": Property.CONTROL_FLOW,
}


class Rejection(Exception):
    """A program failed a load-time check.

    ``kind`` names the concrete reason, ``property`` the safety property it
    belongs to, ``index`` the logical instruction index (or -1).
    """

    def __init__(self, kind: str, index: int, detail: str = "", log: list[str] | None = None,
                 insn_processed: int = 0):
        self.kind = kind
        self.property = KIND_PROPERTY[kind]
        self.index = index
        self.detail = detail or kind
        self.log = list(log or [])
        self.insn_processed = insn_processed
        super().__init__(self.reject_line())

    def reject_line(self) -> str:
        return f"REJECT {self.property} at {self.index}: {self.kind}: {self.detail}"
