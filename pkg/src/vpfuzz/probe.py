"""MMIO probe: serves reads in tracked address ranges from the fuzzer input.

The bus router decides, per transaction, which single consumer handles it:
the probe (tracked range), guest RAM, the guard page above RAM, or nobody
(bus error).  The routing kernels below are shared with the CPU run loop.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from vpfuzz._jit import kernel
from vpfuzz.memory import (
    FAULT_BUS_ERROR,
    FAULT_GUARD,
    GUARD_SIZE,
    BusTransaction,
    ConfigError,
    Direction,
    FaultKind,
    GuestMemory,
)

EXHAUSTED = -1

# probe state slots
P_OFFSET = 0
P_READS = 1
P_SHADOW_HITS = 2
P_EXHAUSTED = 3
P_TRACE_N = 4
P_EXH_POLICY = 5
P_WRITE_POLICY = 6
P_DIRTY_LO = 7  # RAM offsets written since the last arm: [lo, hi)
P_DIRTY_HI = 8
P_STATE_LEN = 9

# per-consumer hit counters
H_PROBE_READ = 0
H_PROBE_WRITE = 1
H_MEM_READ = 2
H_MEM_WRITE = 3
H_FAULT = 4
H_LEN = 5

SHADOW_SLOTS = 1024


class ExhaustionPolicy(enum.IntEnum):
    END_RUN = 0
    ZERO_FILL = 1


class WritePolicy(enum.IntEnum):
    DISCARD = 0
    STORE_TO_SHADOW = 1


class InputExhausted(Exception):
    """The test case has fewer bytes left than a probe read needs."""


@dataclass(frozen=True, order=True)
class AddressRange:
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if not (0 <= self.start <= 0xFFFFFFFF and 0 <= self.end <= 0xFFFFFFFF):
            raise ConfigError(f"range {self} is outside the 32-bit space")
        if self.start > self.end:
            raise ConfigError(f"range start {self.start:#x} is above end {self.end:#x}")

    def __contains__(self, addr):
        return self.start <= addr <= self.end

    def overlaps(self, other):
        return self.start <= other.end and other.start <= self.end

    def __str__(self):
        return f"{self.start:#010x}-{self.end:#010x}"

    @classmethod
    def parse(cls, text):
        lo, sep, hi = text.strip().partition("-")
        if not sep:
            raise ConfigError(f"range {text!r} must look like 0xSTART-0xEND")
        return cls(_parse_hex(lo), _parse_hex(hi))


def _parse_hex(text):
    text = text.strip()
    if not text.lower().startswith("0x"):
        raise ConfigError(f"address {text!r} must be hex with a 0x prefix")
    try:
        return int(text, 16)
    except ValueError:
        raise ConfigError(f"bad hex address {text!r}") from None


@dataclass
class ProbeConfig:
    tracked: list = field(default_factory=list)
    exhaustion_policy: ExhaustionPolicy = ExhaustionPolicy.END_RUN
    write_policy: WritePolicy = WritePolicy.DISCARD

    def __post_init__(self):
        self.tracked = sorted(self.tracked)
        for a, b in zip(self.tracked, self.tracked[1:]):
            if a.overlaps(b):
                raise ConfigError(f"tracked ranges {a} and {b} overlap")

    def range_array(self):
        arr = np.zeros((len(self.tracked), 2), dtype=np.int64)
        for i, r in enumerate(self.tracked):
            arr[i, 0] = r.start
            arr[i, 1] = r.end
        return arr


class InputCursor:
    """Read position into one test case."""

    def __init__(self, data=b""):
        self.input = np.frombuffer(bytes(data), dtype=np.uint8).copy()
        self.state = np.zeros(P_STATE_LEN, dtype=np.int64)

    @property
    def offset(self):
        return int(self.state[P_OFFSET])

    @property
    def reads_served(self):
        return int(self.state[P_READS])

    @property
    def exhausted(self):
        return bool(self.state[P_EXHAUSTED])

    @property
    def dirty(self):
        """RAM offset span written since the last rearm, or None."""
        hi = int(self.state[P_DIRTY_HI])
        return None if hi == 0 else (int(self.state[P_DIRTY_LO]), hi)

    def rearm(self, data):
        self.input = np.frombuffer(bytes(data), dtype=np.uint8).copy()
        policies = self.state[P_EXH_POLICY:P_WRITE_POLICY + 1].copy()
        self.state[:] = 0
        self.state[P_EXH_POLICY:P_WRITE_POLICY + 1] = policies


# -- kernels ---------------------------------------------------------------


@kernel
def consume_input(inp, pstate, size):
    """Take ``size`` bytes little-endian from the input; EXHAUSTED if short."""
    off = pstate[P_OFFSET]
    n = inp.shape[0]
    remaining = n - off
    if remaining < size:
        if pstate[P_EXH_POLICY] == 0:
            pstate[P_EXHAUSTED] = 1
            return EXHAUSTED
        value = 0
        for i in range(remaining):
            value |= np.int64(inp[off + i]) << (8 * i)
        pstate[P_OFFSET] = n
        pstate[P_READS] += 1
        return value
    value = 0
    for i in range(size):
        value |= np.int64(inp[off + i]) << (8 * i)
    pstate[P_OFFSET] = off + size
    pstate[P_READS] += 1
    return value


@kernel
def find_range(ranges, addr):
    for i in range(ranges.shape[0]):
        if ranges[i, 0] <= addr <= ranges[i, 1]:
            return i
    return -1


@kernel
def shadow_slot(skeys, addr, insert):
    mask = skeys.shape[0] - 1
    h = (addr ^ (addr >> 10)) & mask
    for _ in range(skeys.shape[0]):
        k = skeys[h]
        if k == addr:
            return h
        if k == -1:
            if insert:
                skeys[h] = addr
                return h
            return -1
        h = (h + 1) & mask
    return -1


@kernel
def shadow_lookup(skeys, svals, addr, size):
    value = 0
    for i in range(size):
        s = shadow_slot(skeys, addr + i, False)
        if s < 0:
            return -1
        value |= np.int64(svals[s]) << (8 * i)
    return value


@kernel
def bus_read(mem, mem_base, ranges, inp, pstate, skeys, svals, trace, hits, addr, size, pc):
    """Route one read.  Returns (value, fault); fault EXHAUSTED ends the run."""
    if find_range(ranges, addr) >= 0:
        hits[H_PROBE_READ] += 1
        value = -1
        if pstate[P_WRITE_POLICY] == 1:
            value = shadow_lookup(skeys, svals, addr, size)
            if value >= 0:
                pstate[P_SHADOW_HITS] += 1
        if value < 0:
            value = consume_input(inp, pstate, size)
            if value == EXHAUSTED:
                return 0, EXHAUSTED
        t = pstate[P_TRACE_N]
        if t < trace.shape[0]:
            trace[t, 0] = pc
            trace[t, 1] = addr
            trace[t, 2] = size
            trace[t, 3] = value
        pstate[P_TRACE_N] = t + 1
        return value, 0
    off = addr - mem_base
    if off >= 0 and off + size <= mem.shape[0]:
        hits[H_MEM_READ] += 1
        value = np.int64(mem[off])
        if size > 1:
            value |= np.int64(mem[off + 1]) << 8
            if size == 4:
                value |= (np.int64(mem[off + 2]) << 16) | (np.int64(mem[off + 3]) << 24)
        return value, 0
    hits[H_FAULT] += 1
    if off >= mem.shape[0] and off < mem.shape[0] + GUARD_SIZE:
        return 0, FAULT_GUARD
    return 0, FAULT_BUS_ERROR


@kernel
def bus_write(mem, mem_base, ranges, pstate, skeys, svals, hits, addr, size, value):
    """Route one write.  Returns a fault code (0 on success)."""
    if find_range(ranges, addr) >= 0:
        hits[H_PROBE_WRITE] += 1
        if pstate[P_WRITE_POLICY] == 1:
            for i in range(size):
                s = shadow_slot(skeys, addr + i, True)
                if s >= 0:
                    svals[s] = (value >> (8 * i)) & 0xFF
        return 0
    off = addr - mem_base
    if off >= 0 and off + size <= mem.shape[0]:
        hits[H_MEM_WRITE] += 1
        if pstate[P_DIRTY_HI] == 0 or off < pstate[P_DIRTY_LO]:
            pstate[P_DIRTY_LO] = off
        if off + size > pstate[P_DIRTY_HI]:
            pstate[P_DIRTY_HI] = off + size
        mem[off] = value & 0xFF
        if size > 1:
            mem[off + 1] = (value >> 8) & 0xFF
            if size == 4:
                mem[off + 2] = (value >> 16) & 0xFF
                mem[off + 3] = (value >> 24) & 0xFF
        return 0
    hits[H_FAULT] += 1
    if off >= mem.shape[0] and off < mem.shape[0] + GUARD_SIZE:
        return FAULT_GUARD
    return FAULT_BUS_ERROR


# -- python surface --------------------------------------------------------


def probe_read(addr, size, cursor, policy=ExhaustionPolicy.END_RUN):
    """Serve one probe read from ``cursor``; returns ``(value, cursor)``.

    Raises InputExhausted under END_RUN when fewer than ``size`` bytes remain.
    """
    if size not in (1, 2, 4):
        raise ValueError(f"probe read size must be 1, 2 or 4, got {size}")
    cursor.state[P_EXH_POLICY] = int(policy)
    value = consume_input(cursor.input, cursor.state, size)
    if value == EXHAUSTED:
        raise InputExhausted(f"read of {size} bytes at {addr:#x} with {len(cursor.input) - cursor.offset} left")
    return int(value), cursor


@dataclass(frozen=True)
class BusResponse:
    data: int = 0
    fault: FaultKind = None
    exhausted: bool = False
    consumer: str = "memory"

    @property
    def ok(self):
        return self.fault is None and not self.exhausted


@dataclass(frozen=True)
class ProbeEvent:
    pc: int
    addr: int
    size: int
    value: int

    def format(self):
        return f"PROBE pc={self.pc:#010x} addr={self.addr:#010x} size={self.size} value={self.value:#x}"


class BusRouter:
    """Guest RAM plus the probe, with per-run probe state.

    ``trace_capacity`` bounds how many probe events are kept per run; the
    event count keeps running past it.
    """

    def __init__(self, memory=None, probe=None, trace_capacity=0):
        self.memory = memory if memory is not None else GuestMemory()
        self.probe = probe if probe is not None else ProbeConfig()
        self.ranges = self.probe.range_array()
        self.cursor = InputCursor()
        self.cursor.state[P_EXH_POLICY] = int(self.probe.exhaustion_policy)
        self.cursor.state[P_WRITE_POLICY] = int(self.probe.write_policy)
        self.shadow_keys = np.full(SHADOW_SLOTS, -1, dtype=np.int64)
        self.shadow_vals = np.zeros(SHADOW_SLOTS, dtype=np.uint8)
        self.hits = np.zeros(H_LEN, dtype=np.int64)
        self.trace = np.zeros((trace_capacity, 4), dtype=np.int64)

    def arm(self, data):
        """Install a new test case and clear per-run probe state."""
        self.cursor.rearm(data)
        self.shadow_keys[:] = -1
        self.shadow_vals[:] = 0
        self.hits[:] = 0

    def set_trace_capacity(self, n):
        self.trace = np.zeros((n, 4), dtype=np.int64)

    def probe_events(self):
        n = min(int(self.cursor.state[P_TRACE_N]), self.trace.shape[0])
        return [ProbeEvent(*(int(v) for v in self.trace[i])) for i in range(n)]

    @property
    def consumer_hits(self):
        return {
            "probe_read": int(self.hits[H_PROBE_READ]),
            "probe_write": int(self.hits[H_PROBE_WRITE]),
            "mem_read": int(self.hits[H_MEM_READ]),
            "mem_write": int(self.hits[H_MEM_WRITE]),
            "fault": int(self.hits[H_FAULT]),
        }

    def route(self, txn: BusTransaction) -> BusResponse:
        """Deliver ``txn`` to exactly one consumer."""
        before = self.hits.copy()
        if txn.dir == Direction.READ:
            value, fault = bus_read(
                self.memory.data, self.memory.base, self.ranges, self.cursor.input,
                self.cursor.state, self.shadow_keys, self.shadow_vals, self.trace,
                self.hits, txn.addr, txn.size, txn.origin_pc,
            )
        else:
            value = txn.value
            fault = bus_write(
                self.memory.data, self.memory.base, self.ranges, self.cursor.state,
                self.shadow_keys, self.shadow_vals, self.hits, txn.addr, txn.size, value,
            )
        consumer = _CONSUMERS[int(np.flatnonzero(self.hits != before)[0])]
        if fault == EXHAUSTED:
            return BusResponse(exhausted=True, consumer=consumer)
        if fault:
            return BusResponse(fault=FaultKind(int(fault)), consumer=consumer)
        return BusResponse(data=int(value), consumer=consumer)


_CONSUMERS = ("probe", "probe", "memory", "memory", "fault")
