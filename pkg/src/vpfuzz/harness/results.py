import enum
from dataclasses import dataclass

import numpy as np

from vpfuzz.memory import FaultKind


class ExitKind(enum.IntEnum):
    OK = 0
    CRASH = 1
    TIMEOUT = 2
    INPUT_EXHAUSTED = 3


class CrashReason(enum.IntEnum):
    NONE = 0
    RETURN_VALUE_NONZERO = 1
    ERROR_HANDLER_REACHED = 2
    HARDWARE_FAULT = 3


@dataclass
class RunResult:
    """One test-case execution as reported to the fuzzer.

    ``exit_value`` carries the return value for RETURN_VALUE_NONZERO, the
    FaultKind code for HARDWARE_FAULT and the handler address for
    ERROR_HANDLER_REACHED.  ``probe_reads`` is None when the VP ran out of
    process (the RESULT frame does not carry it).
    """

    exit_kind: ExitKind
    crash_reason: CrashReason = CrashReason.NONE
    exit_value: int = 0
    coverage: np.ndarray = None
    instructions: int = 0
    probe_reads: int = None
    exec_us: int = 0

    @property
    def crashed(self):
        return self.exit_kind == ExitKind.CRASH

    @property
    def fault(self):
        if self.crash_reason == CrashReason.HARDWARE_FAULT:
            return FaultKind(self.exit_value)
        return None

    def outcome(self):
        """Deterministic identity of the outcome, without timing or coverage."""
        return (int(self.exit_kind), int(self.crash_reason), int(self.exit_value))

    def describe(self):
        if self.exit_kind == ExitKind.OK:
            return "OK"
        if self.exit_kind == ExitKind.TIMEOUT:
            return "TIMEOUT"
        if self.exit_kind == ExitKind.INPUT_EXHAUSTED:
            return "INPUT_EXHAUSTED"
        if self.crash_reason == CrashReason.RETURN_VALUE_NONZERO:
            return f"CRASH return_value={self.exit_value}"
        if self.crash_reason == CrashReason.ERROR_HANDLER_REACHED:
            return f"CRASH error_handler={self.exit_value:#010x}"
        return f"CRASH hardware_fault={FaultKind(self.exit_value).label}"

    @property
    def reason_tag(self):
        if self.crash_reason == CrashReason.HARDWARE_FAULT:
            return f"hardware_fault:{FaultKind(self.exit_value).label}"
        if self.crash_reason == CrashReason.RETURN_VALUE_NONZERO:
            return f"return_value:{self.exit_value}"
        return self.crash_reason.name.lower()
