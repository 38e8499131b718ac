"""The fuzz loop: schedule, mutate, execute, keep what is new, triage crashes."""

import collections
import os
import random
import shutil
import time
from dataclasses import dataclass, field

import numpy as np

from vpfuzz.coverage import MAP_SIZE, NewBits, classify_counts, digest, has_new_bits, nonzero_indices
from vpfuzz.fuzzer.mutate import mutate_havoc
from vpfuzz.fuzzer.queue import QueueEntry, SeedQueue
from vpfuzz.fuzzer.triage import CrashStore
from vpfuzz.harness.executor import Deploy, Harness, Mode
from vpfuzz.harness.results import ExitKind

STATS_INTERVAL_S = 5.0
RATE_WINDOW_S = 10.0
CHILD_ENERGY_DIVISOR = 25
STATS_HEADER = "unix_ms,total_execs,execs_per_sec,queue_len,crashes_unique,mode"


class VirtualClock:
    """Campaign time derived from executed work, so runs replay exactly.

    Each execution costs a fixed overhead plus a per-instruction share.
    """

    BASE_US = 50
    INSTRUCTIONS_PER_US = 20
    virtual = True

    def __init__(self):
        self._us = 0

    def now(self):
        return self._us / 1e6

    def cost_us(self, result):
        return self.BASE_US + result.instructions // self.INSTRUCTIONS_PER_US

    def account(self, result):
        us = self.cost_us(result)
        self._us += us
        return us


class WallClock:
    virtual = False

    def __init__(self):
        self._t0 = time.perf_counter()

    def now(self):
        return time.perf_counter() - self._t0

    def account(self, result):
        return result.exec_us


@dataclass
class FuzzStats:
    mode: str
    total_execs: int = 0
    execs_per_sec: float = 0.0
    queue_len: int = 0
    crashes_unique: int = 0
    crash_events: int = 0
    last_new_path_at: float = 0.0
    _samples: collections.deque = field(default_factory=collections.deque, repr=False)

    def sample(self, now):
        """Update the rolling rate from (time, execs) samples of the last 10 s."""
        s = self._samples
        s.append((now, self.total_execs))
        while len(s) > 2 and now - s[1][0] >= RATE_WINDOW_S:
            s.popleft()
        t0, n0 = s[0]
        self.execs_per_sec = (self.total_execs - n0) / (now - t0) if now > t0 else 0.0

    def csv_row(self, unix_ms):
        return (f"{unix_ms},{self.total_execs},{self.execs_per_sec:.1f},{self.queue_len},"
                f"{self.crashes_unique},{self.mode}")


@dataclass
class CampaignReport:
    stats: FuzzStats
    queue: list
    crashes: list
    stop_reason: str
    elapsed_s: float
    rng_seed: int
    deploy: str
    warnings: list = field(default_factory=list)
    stats_rows: list = field(default_factory=list)

    def render(self):
        st = self.stats
        lines = [
            "vpfuzz campaign report",
            f"mode: {st.mode}",
            f"deploy: {self.deploy}",
            f"rng_seed: {self.rng_seed}",
            f"stop_reason: {self.stop_reason}",
            f"elapsed_s: {self.elapsed_s:.3f}",
            f"total_execs: {st.total_execs}",
            f"execs_per_sec: {st.execs_per_sec:.1f}",
            f"queue_len: {st.queue_len}",
            f"crash_events: {st.crash_events}",
            f"crashes_unique: {st.crashes_unique}",
            f"last_new_path_at: {st.last_new_path_at:.3f}",
            "",
            "queue:",
        ]
        for e in self.queue:
            flag = "*" if e.favored else " "
            lines.append(f"  {flag} {e.index:06d} digest={e.coverage_digest:016x} size={len(e.input)} "
                         f"execs={e.execs} found_at={e.found_at:.3f} input={e.input.hex()}")
        lines += ["", "crashes:"]
        for c in self.crashes:
            lines.append(f"  {c.stem()} exec={c.exec_number} exit_value={c.exit_value} input={c.input.hex()}")
        if self.warnings:
            lines += ["", "warnings:"] + [f"  {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


class CampaignAborted(RuntimeError):
    """The harness failed; ``report`` holds the partial campaign."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def prepare_out_dir(out_dir, force=False):
    """Create ``out_dir``; an existing non-empty one needs ``force``.

    Forcing only removes the campaign artifacts this module writes.
    """
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        if not force:
            raise FileExistsError(f"output directory {out_dir} exists (use --force to overwrite)")
        for name in ("queue", "crashes"):
            shutil.rmtree(os.path.join(out_dir, name), ignore_errors=True)
        for name in ("stats.csv", "report.txt"):
            path = os.path.join(out_dir, name)
            if os.path.exists(path):
                os.remove(path)
    os.makedirs(out_dir, exist_ok=True)


def load_seeds(seed_dir):
    seeds = []
    for name in sorted(os.listdir(seed_dir)):
        path = os.path.join(seed_dir, name)
        if os.path.isfile(path):
            with open(path, "rb") as fh:
                seeds.append(fh.read())
    return seeds


class Campaign:
    """State of one fuzzing campaign.  ``fuzz_campaign`` is the usual entry."""

    def __init__(self, config, mode=Mode.PERSISTENT, deploy=Deploy.EMBEDDED, rng_seed=0,
                 out_dir=None, harness=None, clock=None):
        self.mode = Mode(mode)
        self.deploy = Deploy(deploy)
        self.harness = harness or Harness(config, self.mode, self.deploy)
        self._own_harness = harness is None
        if clock is None:
            clock = VirtualClock() if self.deploy == Deploy.EMBEDDED else WallClock()
        self.clock = clock
        self.rng_seed = rng_seed
        self.rng = random.Random(rng_seed)
        self.queue = SeedQueue()
        self.global_map = np.zeros(MAP_SIZE, dtype=np.uint8)
        self.out_dir = out_dir
        self.crashes = CrashStore(os.path.join(out_dir, "crashes") if out_dir else None)
        self.stats = FuzzStats(mode=self.mode.value.capitalize())
        self.stats_rows = []
        self.warnings = []
        self._next_stats_at = 0.0
        self._t_start = time.perf_counter()
        if out_dir:
            os.makedirs(os.path.join(out_dir, "queue"), exist_ok=True)
            with open(os.path.join(out_dir, "stats.csv"), "w") as fh:
                fh.write(STATS_HEADER + "\n")

    # -- execution -----------------------------------------------------

    def _execute(self, data, parent):
        result = self.harness.run_case(data)
        cost_us = self.clock.account(result)
        self.stats.total_execs += 1
        if parent is not None:
            parent.execs += 1
        return result, cost_us

    def _admit(self, data, classified, cost_us, execs=0):
        entry = QueueEntry(bytes(data), digest(classified), cost_us, self.clock.now(),
                           indices=nonzero_indices(classified), execs=execs)
        self.queue.add(entry)
        self.stats.queue_len = len(self.queue)
        self.stats.last_new_path_at = entry.found_at
        if self.out_dir:
            path = os.path.join(self.out_dir, "queue", f"{entry.index:06d}-{entry.coverage_digest:016x}")
            try:
                with open(path, "wb") as fh:
                    fh.write(entry.input)
            except OSError as exc:
                self.warnings.append(f"could not store queue entry {entry.index}: {exc}")
        return entry

    def _handle(self, data, result, cost_us):
        """Triage crashes, admit inputs that reach new coverage."""
        if result.crashed:
            self.stats.crash_events += 1
            if self.crashes.triage(result, data, self.stats.total_execs):
                self.stats.crashes_unique = len(self.crashes)
            return None
        if result.exit_kind not in (ExitKind.OK, ExitKind.INPUT_EXHAUSTED):
            return None
        classified = classify_counts(result.coverage)
        if has_new_bits(self.global_map, classified) == NewBits.NOTHING:
            return None
        if bytes(data) in self.queue:
            return None
        return self._admit(data, classified, cost_us)

    def _tick(self, force=False):
        now = self.clock.now()
        if not force and now < self._next_stats_at:
            return
        self.stats.sample(now)
        self._next_stats_at = now + STATS_INTERVAL_S
        row = self.stats.csv_row(int(time.time() * 1000))
        self.stats_rows.append(row)
        if self.out_dir:
            with open(os.path.join(self.out_dir, "stats.csv"), "a") as fh:
                fh.write(row + "\n")

    # -- main loop -----------------------------------------------------

    def add_seeds(self, seeds):
        """Run every distinct seed once.  Seeds join the queue whatever their
        coverage (a crashing one is also triaged) so fuzzing always has a
        starting point."""
        for seed in dict.fromkeys(bytes(s) for s in seeds):
            result, cost_us = self._execute(seed, None)
            if result.crashed:
                self.stats.crash_events += 1
                if self.crashes.triage(result, seed, self.stats.total_execs):
                    self.stats.crashes_unique = len(self.crashes)
            classified = classify_counts(result.coverage)
            has_new_bits(self.global_map, classified)
            self._admit(seed, classified, cost_us, execs=1)
        self._tick(force=True)

    def run(self, max_execs=None, max_seconds=None, stop_after_crashes=None):
        """Fuzz until a budget runs out.  Returns the stop reason."""
        deadline = None if max_seconds is None else time.perf_counter() + max_seconds

        def exhausted():
            if max_execs is not None and self.stats.total_execs >= max_execs:
                return "max_execs"
            if deadline is not None and time.perf_counter() >= deadline:
                return "time_budget"
            if stop_after_crashes is not None and self.stats.crashes_unique >= stop_after_crashes:
                return "crash_limit"
            return None

        while True:
            reason = exhausted()
            if reason:
                return reason
            parent = self.queue.schedule_next(self.rng, self.clock.now())
            pool = [e.input for e in self.queue]
            for _ in range(max(1, parent.energy // CHILD_ENERGY_DIVISOR)):
                child = mutate_havoc(parent.input, self.rng, pool)
                result, cost_us = self._execute(child, parent)
                if self._handle(child, result, cost_us) is not None:
                    pool.append(child)
                self._tick()
                reason = exhausted()
                if reason:
                    return reason

    def report(self, stop_reason):
        self._tick(force=True)
        elapsed = self.clock.now()
        if not self.clock.virtual:
            elapsed = time.perf_counter() - self._t_start
        rep = CampaignReport(self.stats, list(self.queue), list(self.crashes), stop_reason,
                             elapsed, self.rng_seed, self.deploy.value,
                             self.warnings + self.crashes.warnings, list(self.stats_rows))
        if self.out_dir:
            with open(os.path.join(self.out_dir, "report.txt"), "w") as fh:
                fh.write(rep.render())
        return rep

    def close(self):
        if self._own_harness:
            self.harness.close()


def fuzz_campaign(config, seeds=None, max_execs=None, max_seconds=None, mode=Mode.PERSISTENT,
                  deploy=Deploy.EMBEDDED, rng_seed=0, out_dir=None, force=False,
                  stop_after_crashes=None, harness=None, clock=None):
    """Run a campaign and return its CampaignReport.

    With no budget at all the campaign stops after 10,000 executions.
    Ctrl-C ends the campaign with stop reason ``interrupted``; a harness
    failure writes the partial report and raises CampaignAborted.
    """
    if max_execs is None and max_seconds is None and stop_after_crashes is None:
        max_execs = 10_000
    if out_dir:
        prepare_out_dir(out_dir, force)
    seeds = [b""] if not seeds else list(seeds)
    camp = Campaign(config, mode, deploy, rng_seed, out_dir, harness, clock)
    try:
        try:
            camp.add_seeds(seeds)
            reason = camp.run(max_execs, max_seconds, stop_after_crashes)
        except KeyboardInterrupt:
            reason = "interrupted"
        except Exception as exc:
            rep = camp.report(f"harness_failure: {type(exc).__name__}: {exc}")
            raise CampaignAborted(str(exc), rep) from exc
        return camp.report(reason)
    finally:
        camp.close()
