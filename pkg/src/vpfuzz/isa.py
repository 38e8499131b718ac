"""RV32I interpreter: decoder, single-step and run-until kernels.

Registers live in an int64 array holding unsigned 32-bit values; the scalar
CPU state (pc, instruction count, status, status argument) lives in a small
int64 array so both can be handed to the compiled run loop without boxing.
"""

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from vpfuzz._jit import kernel
from vpfuzz.coverage import MAP_SIZE, record_edge_kernel
from vpfuzz.memory import (
    FAULT_BUS_ERROR,
    FAULT_ILLEGAL,
    FAULT_MISALIGNED,
    FaultKind,
)
from vpfuzz.probe import EXHAUSTED, BusRouter, bus_read, bus_write

DEFAULT_MAX_INSTRUCTIONS = 10_000_000
REG_A0 = 10
REG_SP = 2

MNEMONICS = (
    "illegal",
    "lui", "auipc", "jal", "jalr",
    "beq", "bne", "blt", "bge", "bltu", "bgeu",
    "lb", "lh", "lw", "lbu", "lhu",
    "sb", "sh", "sw",
    "addi", "slti", "sltiu", "xori", "ori", "andi", "slli", "srli", "srai",
    "add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and",
    "ecall", "ebreak",
)
OP = {name: i for i, name in enumerate(MNEMONICS)}

OP_ILLEGAL = 0
OP_LUI, OP_AUIPC, OP_JAL, OP_JALR = 1, 2, 3, 4
OP_BEQ, OP_BNE, OP_BLT, OP_BGE, OP_BLTU, OP_BGEU = 5, 6, 7, 8, 9, 10
OP_LB, OP_LH, OP_LW, OP_LBU, OP_LHU = 11, 12, 13, 14, 15
OP_SB, OP_SH, OP_SW = 16, 17, 18
OP_ADDI, OP_SLTI, OP_SLTIU, OP_XORI, OP_ORI, OP_ANDI, OP_SLLI, OP_SRLI, OP_SRAI = range(19, 28)
OP_ADD, OP_SUB, OP_SLL, OP_SLT, OP_SLTU, OP_XOR, OP_SRL, OP_SRA, OP_OR, OP_AND = range(28, 38)
OP_ECALL, OP_EBREAK = 38, 39

# cpu scalar slots
C_PC = 0
C_COUNT = 1
C_STATUS = 2
C_ARG = 3

ST_RUNNING = 0
ST_EXITED = 1
ST_FAULTED = 2
ST_BREAK = 3

# run-loop stop codes
STOP_NONE = 0
STOP_STATUS = 1
STOP_BREAKPOINT = 2
STOP_TIMEOUT = 3
STOP_EXHAUSTED = 4

MASK32 = 0xFFFFFFFF


@kernel
def _sext(value, bits):
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


@kernel
def decode_kernel(w):
    """Decode one instruction word to ``(op, rd, rs1, rs2, imm)``."""
    opcode = w & 0x7F
    rd = (w >> 7) & 0x1F
    f3 = (w >> 12) & 0x7
    rs1 = (w >> 15) & 0x1F
    rs2 = (w >> 20) & 0x1F
    f7 = (w >> 25) & 0x7F
    if opcode == 0x37:
        return OP_LUI, rd, 0, 0, w & 0xFFFFF000
    if opcode == 0x17:
        return OP_AUIPC, rd, 0, 0, w & 0xFFFFF000
    if opcode == 0x6F:
        imm = (((w >> 31) & 1) << 20) | (((w >> 12) & 0xFF) << 12) | (((w >> 20) & 1) << 11) | (((w >> 21) & 0x3FF) << 1)
        return OP_JAL, rd, 0, 0, _sext(imm, 21)
    if opcode == 0x67:
        if f3 != 0:
            return OP_ILLEGAL, 0, 0, 0, 0
        return OP_JALR, rd, rs1, 0, _sext(w >> 20, 12)
    if opcode == 0x63:
        imm = (((w >> 31) & 1) << 12) | (((w >> 7) & 1) << 11) | (((w >> 25) & 0x3F) << 5) | (((w >> 8) & 0xF) << 1)
        imm = _sext(imm, 13)
        if f3 == 0:
            return OP_BEQ, 0, rs1, rs2, imm
        if f3 == 1:
            return OP_BNE, 0, rs1, rs2, imm
        if f3 == 4:
            return OP_BLT, 0, rs1, rs2, imm
        if f3 == 5:
            return OP_BGE, 0, rs1, rs2, imm
        if f3 == 6:
            return OP_BLTU, 0, rs1, rs2, imm
        if f3 == 7:
            return OP_BGEU, 0, rs1, rs2, imm
        return OP_ILLEGAL, 0, 0, 0, 0
    if opcode == 0x03:
        imm = _sext(w >> 20, 12)
        if f3 == 0:
            return OP_LB, rd, rs1, 0, imm
        if f3 == 1:
            return OP_LH, rd, rs1, 0, imm
        if f3 == 2:
            return OP_LW, rd, rs1, 0, imm
        if f3 == 4:
            return OP_LBU, rd, rs1, 0, imm
        if f3 == 5:
            return OP_LHU, rd, rs1, 0, imm
        return OP_ILLEGAL, 0, 0, 0, 0
    if opcode == 0x23:
        imm = _sext(((w >> 25) << 5) | ((w >> 7) & 0x1F), 12)
        if f3 == 0:
            return OP_SB, 0, rs1, rs2, imm
        if f3 == 1:
            return OP_SH, 0, rs1, rs2, imm
        if f3 == 2:
            return OP_SW, 0, rs1, rs2, imm
        return OP_ILLEGAL, 0, 0, 0, 0
    if opcode == 0x13:
        imm = _sext(w >> 20, 12)
        if f3 == 0:
            return OP_ADDI, rd, rs1, 0, imm
        if f3 == 2:
            return OP_SLTI, rd, rs1, 0, imm
        if f3 == 3:
            return OP_SLTIU, rd, rs1, 0, imm
        if f3 == 4:
            return OP_XORI, rd, rs1, 0, imm
        if f3 == 6:
            return OP_ORI, rd, rs1, 0, imm
        if f3 == 7:
            return OP_ANDI, rd, rs1, 0, imm
        if f3 == 1:
            if f7 != 0:
                return OP_ILLEGAL, 0, 0, 0, 0
            return OP_SLLI, rd, rs1, 0, rs2
        if f7 == 0:
            return OP_SRLI, rd, rs1, 0, rs2
        if f7 == 0x20:
            return OP_SRAI, rd, rs1, 0, rs2
        return OP_ILLEGAL, 0, 0, 0, 0
    if opcode == 0x33:
        if f7 == 0x20:
            if f3 == 0:
                return OP_SUB, rd, rs1, rs2, 0
            if f3 == 5:
                return OP_SRA, rd, rs1, rs2, 0
            return OP_ILLEGAL, 0, 0, 0, 0
        if f7 != 0:
            return OP_ILLEGAL, 0, 0, 0, 0
        if f3 == 0:
            return OP_ADD, rd, rs1, rs2, 0
        if f3 == 1:
            return OP_SLL, rd, rs1, rs2, 0
        if f3 == 2:
            return OP_SLT, rd, rs1, rs2, 0
        if f3 == 3:
            return OP_SLTU, rd, rs1, rs2, 0
        if f3 == 4:
            return OP_XOR, rd, rs1, rs2, 0
        if f3 == 5:
            return OP_SRL, rd, rs1, rs2, 0
        if f3 == 6:
            return OP_OR, rd, rs1, rs2, 0
        return OP_AND, rd, rs1, rs2, 0
    if opcode == 0x73:
        if w == 0x00000073:
            return OP_ECALL, 0, 0, 0, 0
        if w == 0x00100073:
            return OP_EBREAK, 0, 0, 0, 0
    return OP_ILLEGAL, 0, 0, 0, 0


@kernel
def _fault(cpu, kind):
    cpu[C_STATUS] = ST_FAULTED
    cpu[C_ARG] = kind
    return STOP_STATUS


@kernel
def _branch(cpu, cov, cov_state, target):
    if target & 3:
        return _fault(cpu, FAULT_MISALIGNED)
    cpu[C_PC] = target
    record_edge_kernel(cov, cov_state, target)
    return STOP_NONE


@kernel
def exec_one(regs, cpu, mem, mem_base, ranges, inp, pstate, skeys, svals, trace, hits, cov, cov_state):
    """Fetch, decode and execute one instruction; returns a stop code."""
    pc = cpu[C_PC]
    cpu[C_COUNT] += 1
    off = pc - mem_base
    if off < 0 or off + 4 > mem.shape[0]:
        return _fault(cpu, FAULT_BUS_ERROR)
    w = (np.int64(mem[off]) | (np.int64(mem[off + 1]) << 8)
         | (np.int64(mem[off + 2]) << 16) | (np.int64(mem[off + 3]) << 24))
    op, rd, rs1, rs2, imm = decode_kernel(w)
    a = regs[rs1]
    b = regs[rs2]
    nxt = pc + 4
    res = 0
    write = True

    if op == OP_ADDI:
        res = a + imm
    elif op >= OP_BEQ and op <= OP_BGEU:
        write = False
        if op == OP_BEQ:
            taken = a == b
        elif op == OP_BNE:
            taken = a != b
        elif op == OP_BLT:
            taken = _sext(a, 32) < _sext(b, 32)
        elif op == OP_BGE:
            taken = _sext(a, 32) >= _sext(b, 32)
        elif op == OP_BLTU:
            taken = a < b
        else:
            taken = a >= b
        if taken:
            return _branch(cpu, cov, cov_state, (pc + imm) & MASK32)
    elif op >= OP_LB and op <= OP_LHU:
        addr = (a + imm) & MASK32
        if op == OP_LB or op == OP_LBU:
            size = 1
        elif op == OP_LW:
            size = 4
        else:
            size = 2
        if addr & (size - 1):
            return _fault(cpu, FAULT_MISALIGNED)
        res, fault = bus_read(mem, mem_base, ranges, inp, pstate, skeys, svals, trace, hits, addr, size, pc)
        if fault == EXHAUSTED:
            return STOP_EXHAUSTED
        if fault != 0:
            return _fault(cpu, fault)
        if op == OP_LB:
            res = _sext(res, 8)
        elif op == OP_LH:
            res = _sext(res, 16)
    elif op >= OP_SB and op <= OP_SW:
        write = False
        addr = (a + imm) & MASK32
        if op == OP_SB:
            size = 1
        elif op == OP_SH:
            size = 2
        else:
            size = 4
        if addr & (size - 1):
            return _fault(cpu, FAULT_MISALIGNED)
        fault = bus_write(mem, mem_base, ranges, pstate, skeys, svals, hits, addr, size, b)
        if fault != 0:
            return _fault(cpu, fault)
    elif op == OP_ADD:
        res = a + b
    elif op == OP_SUB:
        res = a - b
    elif op == OP_LUI:
        res = imm
    elif op == OP_AUIPC:
        res = pc + imm
    elif op == OP_JAL:
        if rd != 0:
            regs[rd] = nxt & MASK32
        return _branch(cpu, cov, cov_state, (pc + imm) & MASK32)
    elif op == OP_JALR:
        target = (a + imm) & 0xFFFFFFFE
        if rd != 0:
            regs[rd] = nxt & MASK32
        return _branch(cpu, cov, cov_state, target)
    elif op == OP_ANDI:
        res = a & imm
    elif op == OP_ORI:
        res = a | imm
    elif op == OP_XORI:
        res = a ^ imm
    elif op == OP_SLTI:
        res = 1 if _sext(a, 32) < imm else 0
    elif op == OP_SLTIU:
        res = 1 if a < (imm & MASK32) else 0
    elif op == OP_SLLI:
        res = a << imm
    elif op == OP_SRLI:
        res = a >> imm
    elif op == OP_SRAI:
        res = _sext(a, 32) >> imm
    elif op == OP_SLL:
        res = a << (b & 31)
    elif op == OP_SLT:
        res = 1 if _sext(a, 32) < _sext(b, 32) else 0
    elif op == OP_SLTU:
        res = 1 if a < b else 0
    elif op == OP_XOR:
        res = a ^ b
    elif op == OP_SRL:
        res = a >> (b & 31)
    elif op == OP_SRA:
        res = _sext(a, 32) >> (b & 31)
    elif op == OP_OR:
        res = a | b
    elif op == OP_AND:
        res = a & b
    elif op == OP_ECALL:
        cpu[C_STATUS] = ST_EXITED
        cpu[C_ARG] = regs[REG_A0] & 0xFF
        return STOP_STATUS
    elif op == OP_EBREAK:
        cpu[C_STATUS] = ST_BREAK
        cpu[C_ARG] = pc
        return STOP_STATUS
    else:
        return _fault(cpu, FAULT_ILLEGAL)

    if write and rd != 0:
        regs[rd] = res & MASK32
    cpu[C_PC] = nxt & MASK32
    return STOP_NONE


@kernel
def run_loop(regs, cpu, mem, mem_base, ranges, inp, pstate, skeys, svals, trace, hits,
             cov, cov_state, bps, max_count, skip_first_bp):
    """Step until the status changes, a breakpoint is reached, input runs dry
    or the instruction count reaches ``max_count``."""
    first = skip_first_bp
    while True:
        if cpu[C_STATUS] != ST_RUNNING:
            return STOP_STATUS
        if not first:
            pc = cpu[C_PC]
            for i in range(bps.shape[0]):
                if bps[i] == pc:
                    return STOP_BREAKPOINT
        first = False
        if cpu[C_COUNT] >= max_count:
            return STOP_TIMEOUT
        stop = exec_one(regs, cpu, mem, mem_base, ranges, inp, pstate, skeys, svals, trace, hits, cov, cov_state)
        if stop != STOP_NONE:
            return stop


# -- python surface --------------------------------------------------------


class Instruction(NamedTuple):
    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0

    @property
    def illegal(self):
        return self.op == "illegal"


def decode(word):
    op, rd, rs1, rs2, imm = decode_kernel(int(word) & MASK32)
    return Instruction(MNEMONICS[int(op)], int(rd), int(rs1), int(rs2), int(imm))


@dataclass(frozen=True)
class Running:
    pass


@dataclass(frozen=True)
class Exited:
    code: int


@dataclass(frozen=True)
class Faulted:
    kind: FaultKind


@dataclass(frozen=True)
class BreakpointHit:
    address: int


class CpuState:
    """Register file, pc, retired-instruction counter and run status."""

    def __init__(self, pc=0, sp=None):
        self.regs = np.zeros(32, dtype=np.int64)
        self.scalars = np.zeros(4, dtype=np.int64)
        self.scalars[C_PC] = pc
        if sp is not None:
            self.regs[REG_SP] = sp & MASK32

    @property
    def pc(self):
        return int(self.scalars[C_PC])

    @pc.setter
    def pc(self, value):
        self.scalars[C_PC] = value & MASK32

    @property
    def instr_count(self):
        return int(self.scalars[C_COUNT])

    @property
    def status(self):
        st = int(self.scalars[C_STATUS])
        arg = int(self.scalars[C_ARG])
        if st == ST_RUNNING:
            return Running()
        if st == ST_EXITED:
            return Exited(arg)
        if st == ST_FAULTED:
            return Faulted(FaultKind(arg))
        return BreakpointHit(arg)

    @property
    def running(self):
        return self.scalars[C_STATUS] == ST_RUNNING

    def reg(self, i):
        return int(self.regs[i])

    def set_reg(self, i, value):
        if i:
            self.regs[i] = value & MASK32

    def copy(self):
        other = CpuState.__new__(CpuState)
        other.regs = self.regs.copy()
        other.scalars = self.scalars.copy()
        return other

    def restore_from(self, other):
        self.regs[:] = other.regs
        self.scalars[:] = other.scalars

    def __eq__(self, other):
        return (isinstance(other, CpuState) and np.array_equal(self.regs, other.regs)
                and np.array_equal(self.scalars, other.scalars))

    def __repr__(self):
        return f"CpuState(pc={self.pc:#x}, instr_count={self.instr_count}, status={self.status})"


class StopKind(enum.Enum):
    EXITED = "exited"
    FAULTED = "faulted"
    GUEST_BREAK = "guest_break"
    BREAKPOINT = "breakpoint"
    TIMEOUT = "timeout"
    INPUT_EXHAUSTED = "input_exhausted"


@dataclass(frozen=True)
class RunLimits:
    max_instructions: int = DEFAULT_MAX_INSTRUCTIONS
    breakpoints: frozenset = field(default_factory=frozenset)


@dataclass
class SimResult:
    """Outcome of one ``run_until`` call."""

    stop: StopKind
    cpu: CpuState
    instructions: int

    @property
    def exit_code(self):
        st = self.cpu.status
        return st.code if isinstance(st, Exited) else None

    @property
    def address(self):
        """Breakpoint address for BREAKPOINT / GUEST_BREAK stops."""
        return self.cpu.pc


_scratch_cov = None


def _cov_arrays(coverage):
    global _scratch_cov
    if coverage is None:
        if _scratch_cov is None:
            _scratch_cov = (np.zeros(MAP_SIZE, dtype=np.uint8), np.zeros(1, dtype=np.int64))
        return _scratch_cov
    return coverage.bytes, coverage.state


def run_raw(cpu, bus, coverage, bps, max_count, skip_first_bp=False):
    """Run the compiled loop on ``cpu``/``bus``; returns the raw stop code."""
    cov, cov_state = _cov_arrays(coverage)
    return int(run_loop(
        cpu.regs, cpu.scalars, bus.memory.data, bus.memory.base, bus.ranges,
        bus.cursor.input, bus.cursor.state, bus.shadow_keys, bus.shadow_vals,
        bus.trace, bus.hits, cov, cov_state, bps, max_count, skip_first_bp,
    ))


_NO_BPS = np.zeros(0, dtype=np.int64)


def step(cpu: CpuState, bus: BusRouter, coverage=None) -> CpuState:
    """Execute exactly one instruction.  Faults land in ``cpu.status``.

    Returns ``cpu`` (modified in place).  When a probe read finds the input
    exhausted the instruction does not complete and ``bus.cursor.exhausted``
    is set.
    """
    if not cpu.running:
        raise RuntimeError(f"step() on a stopped cpu: {cpu.status}")
    cov, cov_state = _cov_arrays(coverage)
    exec_one(cpu.regs, cpu.scalars, bus.memory.data, bus.memory.base, bus.ranges,
             bus.cursor.input, bus.cursor.state, bus.shadow_keys, bus.shadow_vals,
             bus.trace, bus.hits, cov, cov_state)
    return cpu


_STATUS_STOP = {
    ST_EXITED: StopKind.EXITED,
    ST_FAULTED: StopKind.FAULTED,
    ST_BREAK: StopKind.GUEST_BREAK,
}


def run_until(cpu: CpuState, bus: BusRouter, limits: RunLimits = RunLimits(),
              coverage=None, resume=False) -> SimResult:
    """Run until the cpu stops, a breakpoint is reached or the budget is spent.

    ``limits.max_instructions`` caps ``cpu.instr_count`` (counted since reset,
    so a resumed run shares the budget).  With ``resume`` the breakpoint check
    is skipped for the first instruction so a run can continue past the
    breakpoint it stopped at.
    """
    if not cpu.running:
        raise RuntimeError(f"run_until() on a stopped cpu: {cpu.status}")
    start = cpu.instr_count
    bps = np.array(sorted(limits.breakpoints), dtype=np.int64)
    code = run_raw(cpu, bus, coverage, bps, limits.max_instructions, resume)
    if code == STOP_STATUS:
        stop = _STATUS_STOP[int(cpu.scalars[C_STATUS])]
    elif code == STOP_BREAKPOINT:
        stop = StopKind.BREAKPOINT
    elif code == STOP_TIMEOUT:
        stop = StopKind.TIMEOUT
    else:
        stop = StopKind.INPUT_EXHAUSTED
    return SimResult(stop, cpu, cpu.instr_count - start)
