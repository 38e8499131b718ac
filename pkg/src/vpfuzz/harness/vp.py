"""In-process VP: image + CPU + bus + coverage, with snapshot-based persistence."""

import time
from dataclasses import dataclass

import numpy as np

from vpfuzz import isa
from vpfuzz._jit import JIT_ENABLED
from vpfuzz.config import ErrorHandler, ReturnRegister, VpConfig
from vpfuzz.coverage import CoverageMap
from vpfuzz.harness.results import CrashReason, ExitKind, RunResult
from vpfuzz.memory import GuestMemory
from vpfuzz.probe import BusRouter

# Instructions per kernel call between wall-clock checks.
SLICE = 2_000_000 if JIT_ENABLED else 20_000


@dataclass
class Snapshot:
    cpu: isa.CpuState
    memory: np.ndarray
    coverage: np.ndarray
    cov_state: np.ndarray
    shadow_keys: np.ndarray
    shadow_vals: np.ndarray
    taken_at_pc: int


class EmbeddedVp:
    """One VP instance living in this process.

    The first run starts from reset.  If the config has a persistent section,
    a snapshot is taken the first time the entry address is reached and every
    later run restores it (registers, RAM, coverage, probe shadow) and resumes
    there.  ``snapshot_at_reset`` snapshots the reset state instead, for
    persistent execution of guests without a configured entry point.
    """

    def __init__(self, config: VpConfig, snapshot_at_reset=False, trace_capacity=0):
        t0 = time.perf_counter()
        self.config = config
        self.memory = GuestMemory(config.ram_base, config.ram_size)
        self.bus = BusRouter(self.memory, config.probe_config(), trace_capacity)
        self.cpu = isa.CpuState()
        self.coverage = CoverageMap()
        self.snapshot = None
        self.snapshot_at_reset = snapshot_at_reset
        self.runs = 0
        self.startup_ms = (time.perf_counter() - t0) * 1e3
        self.config_ms = 0.0
        self._configured = False

    def configure(self):
        t0 = time.perf_counter()
        image = self.config.load_image()
        self.config.validate(len(image))
        self.memory.load_image(image, self.config.load_addr)
        self._bps = self.config.breakpoints()
        self._limits = isa.RunLimits(self.config.max_instructions, self._bps)
        self._reset_cpu()
        if self.snapshot_at_reset and self.config.persistent is None:
            self.snapshot = self._take_snapshot()
        self._configured = True
        self.config_ms = (time.perf_counter() - t0) * 1e3
        return self

    def _reset_cpu(self):
        self.cpu = isa.CpuState(pc=self.config.entry_pc, sp=self.config.stack_top)
        self.coverage.reset()
        self.coverage.record_edge(self.config.entry_pc)

    def _take_snapshot(self):
        return Snapshot(
            self.cpu.copy(), self.memory.data.copy(), self.coverage.bytes.copy(),
            self.coverage.state.copy(), self.bus.shadow_keys.copy(), self.bus.shadow_vals.copy(),
            self.cpu.pc,
        )

    def _restore(self, snap, dirty):
        # Only bytes the guest wrote since the last arm can differ from the
        # snapshot; snapshots are taken after arming, so the span covers them.
        self.cpu.restore_from(snap.cpu)
        if dirty is not None:
            lo, hi = dirty
            self.memory.data[lo:hi] = snap.memory[lo:hi]
        np.copyto(self.coverage.bytes, snap.coverage)
        np.copyto(self.coverage.state, snap.cov_state)

    @property
    def persistent_entry(self):
        p = self.config.persistent
        return None if p is None else p.entry_pc

    def run(self, data) -> RunResult:
        if not self._configured:
            self.configure()
        t0 = time.perf_counter()
        cfg = self.config
        jump_only = cfg.persistent is not None and cfg.persistent.jump_only
        resume = False
        if self.runs and self.snapshot is None and not jump_only:
            # Fresh-instance semantics: a non-persistent VP runs once.
            raise RuntimeError("VP already used; restart mode needs a fresh instance")
        dirty = self.bus.cursor.dirty
        self.bus.arm(data)
        if self.snapshot is not None and not jump_only:
            self._restore(self.snapshot, dirty)
            np.copyto(self.bus.shadow_keys, self.snapshot.shadow_keys)
            np.copyto(self.bus.shadow_vals, self.snapshot.shadow_vals)
            resume = True
        elif self.runs and jump_only:
            self.cpu.scalars[isa.C_STATUS] = isa.ST_RUNNING
            self.cpu.pc = cfg.persistent.entry_pc
            self.cpu.scalars[isa.C_COUNT] = 0
            self.coverage.reset()
            resume = True

        entry = self.persistent_entry
        if self.snapshot is None and entry is not None and not jump_only:
            res = self._run_slices(self._bps | {entry}, resume)
            if res.stop == isa.StopKind.BREAKPOINT and self.cpu.pc == entry:
                self.snapshot = self._take_snapshot()
                res = self._run_slices(self._bps, True)
        else:
            res = self._run_slices(self._bps, resume)
        self.runs += 1
        result = self._classify(res)
        result.coverage = self.coverage.bytes.copy()
        result.instructions = self.cpu.instr_count
        result.probe_reads = self.bus.cursor.reads_served
        result.exec_us = int((time.perf_counter() - t0) * 1e6)
        return result

    def _run_slices(self, bps, resume):
        bps_arr = np.array(sorted(bps), dtype=np.int64)
        deadline = time.perf_counter() + self.config.wall_clock_timeout_ms / 1e3
        budget = self.config.max_instructions
        while True:
            cap = min(budget, self.cpu.instr_count + SLICE)
            code = isa.run_raw(self.cpu, self.bus, self.coverage, bps_arr, cap, resume)
            resume = False
            if code != isa.STOP_TIMEOUT or cap >= budget or time.perf_counter() > deadline:
                break
        return isa.SimResult(_STOPS[code](self.cpu), self.cpu, 0)

    def _classify(self, res):
        cfg = self.config
        stop = res.stop
        if stop == isa.StopKind.BREAKPOINT:
            pc = self.cpu.pc
            if isinstance(cfg.crash_mode, ErrorHandler) and pc == cfg.crash_mode.handler_pc:
                return RunResult(ExitKind.CRASH, CrashReason.ERROR_HANDLER_REACHED, pc)
            if isinstance(cfg.crash_mode, ReturnRegister) and pc == cfg.crash_mode.main_return_pc:
                value = self.cpu.reg(isa.REG_A0)
                if value != 0:
                    return RunResult(ExitKind.CRASH, CrashReason.RETURN_VALUE_NONZERO, value)
                return RunResult(ExitKind.OK)
            return RunResult(ExitKind.OK)
        if stop == isa.StopKind.EXITED:
            code = self.cpu.status.code
            if code:
                return RunResult(ExitKind.CRASH, CrashReason.RETURN_VALUE_NONZERO, code)
            return RunResult(ExitKind.OK)
        if stop == isa.StopKind.FAULTED:
            return RunResult(ExitKind.CRASH, CrashReason.HARDWARE_FAULT, int(self.cpu.status.kind))
        if stop == isa.StopKind.GUEST_BREAK:
            return RunResult(ExitKind.CRASH, CrashReason.ERROR_HANDLER_REACHED, self.cpu.pc)
        if stop == isa.StopKind.TIMEOUT:
            return RunResult(ExitKind.TIMEOUT)
        return RunResult(ExitKind.INPUT_EXHAUSTED)

    def close(self):
        pass


def _stop_from_status(cpu):
    return {isa.ST_EXITED: isa.StopKind.EXITED, isa.ST_FAULTED: isa.StopKind.FAULTED,
            isa.ST_BREAK: isa.StopKind.GUEST_BREAK}[int(cpu.scalars[isa.C_STATUS])]


_STOPS = {
    isa.STOP_STATUS: _stop_from_status,
    isa.STOP_BREAKPOINT: lambda cpu: isa.StopKind.BREAKPOINT,
    isa.STOP_TIMEOUT: lambda cpu: isa.StopKind.TIMEOUT,
    isa.STOP_EXHAUSTED: lambda cpu: isa.StopKind.INPUT_EXHAUSTED,
}
