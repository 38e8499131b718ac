import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tests.conftest import make_machine
from tests.ref_rv32i import KNOWN, RefMachine, encode
from vpfuzz import isa
from vpfuzz.coverage import CoverageMap
from vpfuzz.guest.asm import assemble
from vpfuzz.memory import ConfigError, FaultKind, GuestMemory

SP = 0x11000  # top of the reference machine's 64 KiB


def words(*ws):
    return b"".join(struct.pack("<I", w) for w in ws)


# -- decode ----------------------------------------------------------------

def test_decode_nop():
    assert isa.decode(0x00000013) == isa.Instruction("addi", 0, 0, 0, 0)


def test_decode_ret_matches_assembler_and_encoder_table():
    binary, _ = assemble("ret")
    assert struct.unpack("<I", binary)[0] == KNOWN["jalr x0, 0(x1)"] == 0x00008067
    assert isa.decode(0x00008067) == isa.Instruction("jalr", 0, 1, 0, 0)


def test_decode_all_ones_is_illegal():
    assert isa.decode(0xFFFFFFFF).illegal


@pytest.mark.parametrize("mn,fields", [
    ("add", dict(rd=3, rs1=1, rs2=2)), ("sra", dict(rd=31, rs1=30, rs2=29)),
    ("addi", dict(rd=1, rs1=2, imm=-2048)), ("sltiu", dict(rd=4, rs1=5, imm=2047)),
    ("srai", dict(rd=7, rs1=8, imm=31)), ("lhu", dict(rd=9, rs1=10, imm=-4)),
    ("sh", dict(rs1=11, rs2=12, imm=-6)), ("bgeu", dict(rs1=13, rs2=14, imm=-4096)),
    ("jal", dict(rd=1, imm=-(1 << 20))), ("lui", dict(rd=15, imm=0xFFFFF)),
])
def test_decode_against_reference_encoder(mn, fields):
    ins = isa.decode(encode(mn, **fields))
    assert ins.op == mn
    for k, v in fields.items():
        if k == "imm" and mn == "lui":
            assert ins.imm == v << 12  # upper immediates decode as unsigned 32-bit values
        else:
            assert getattr(ins, k) == v


@given(st.integers(0, 0xFFFFFFFF))
def test_decode_is_total(word):
    ins = isa.decode(word)
    assert ins.op in isa.MNEMONICS


# -- step ------------------------------------------------------------------

def test_step_addi():
    cpu, bus = make_machine("addi x5, x0, 7")
    isa.step(cpu, bus)
    assert cpu.reg(5) == 7 and cpu.pc == 0x1004 and cpu.instr_count == 1


def test_step_ecall_exit_code():
    cpu, bus = make_machine("ecall")
    cpu.set_reg(isa.REG_A0, 1)
    isa.step(cpu, bus)
    assert cpu.status == isa.Exited(1)


def test_step_ecall_masks_exit_code_to_8_bits():
    cpu, bus = make_machine("ecall")
    cpu.set_reg(isa.REG_A0, 0x1FF)
    isa.step(cpu, bus)
    assert cpu.status == isa.Exited(0xFF)


def test_step_ebreak_records_pc():
    cpu, bus = make_machine("nop\nebreak")
    isa.step(cpu, bus)
    isa.step(cpu, bus)
    assert cpu.status == isa.BreakpointHit(0x1004)


def test_step_load_unmapped_faults():
    cpu, bus = make_machine("lui t0, 0x20000\nlw t1, 0(t0)")
    isa.step(cpu, bus)
    isa.step(cpu, bus)
    assert cpu.status == isa.Faulted(FaultKind.BUS_ERROR)


def test_step_illegal_instruction_faults():
    cpu, bus = make_machine(words(0xFFFFFFFF))
    isa.step(cpu, bus)
    assert cpu.status == isa.Faulted(FaultKind.ILLEGAL_INSTRUCTION)


def test_step_misaligned_load_faults():
    cpu, bus = make_machine("lw t1, 2(sp)", sp=0x2000)
    isa.step(cpu, bus)
    assert cpu.status == isa.Faulted(FaultKind.MISALIGNED_ACCESS)


def test_store_just_above_ram_hits_guard():
    cpu, bus = make_machine("sw x0, 0(sp)")  # sp = top of RAM
    isa.step(cpu, bus)
    assert cpu.status == isa.Faulted(FaultKind.STACK_OVERFLOW_GUARD)


def test_step_on_stopped_cpu_raises():
    cpu, bus = make_machine("ecall")
    isa.step(cpu, bus)
    with pytest.raises(RuntimeError):
        isa.step(cpu, bus)


def test_x0_write_ignored():
    cpu, bus = make_machine("addi x0, x0, 5\nlui x0, 1")
    isa.step(cpu, bus)
    isa.step(cpu, bus)
    assert cpu.reg(0) == 0


# -- run_until -------------------------------------------------------------

def test_run_until_single_ecall():
    cpu, bus = make_machine("ecall")
    res = isa.run_until(cpu, bus)
    assert res.stop == isa.StopKind.EXITED and res.exit_code == 0 and res.instructions == 1


def test_run_until_breakpoint_before_execution():
    cpu, bus = make_machine("nop\nnop\nnop")
    res = isa.run_until(cpu, bus, isa.RunLimits(breakpoints=frozenset({0x1008})))
    assert res.stop == isa.StopKind.BREAKPOINT
    assert cpu.pc == 0x1008 and res.instructions == 2


def test_run_until_self_loop_times_out():
    cpu, bus = make_machine("loop: jal x0, loop")
    res = isa.run_until(cpu, bus, isa.RunLimits(max_instructions=1000))
    assert res.stop == isa.StopKind.TIMEOUT and res.instructions == 1000


def test_run_until_resume_past_breakpoint():
    cpu, bus = make_machine("nop\nnop\nli a0, 3\necall")
    limits = isa.RunLimits(breakpoints=frozenset({0x1004}))
    assert isa.run_until(cpu, bus, limits).stop == isa.StopKind.BREAKPOINT
    assert isa.run_until(cpu, bus, limits).stop == isa.StopKind.BREAKPOINT  # no progress without resume
    res = isa.run_until(cpu, bus, limits, resume=True)
    assert res.stop == isa.StopKind.EXITED and res.exit_code == 3 and cpu.instr_count == 4


def test_run_until_input_exhausted_on_probe_read():
    cpu, bus = make_machine("lui t0, 0x40002\nlbu t1, 0(t0)\necall", data=b"")
    res = isa.run_until(cpu, bus)
    assert res.stop == isa.StopKind.INPUT_EXHAUSTED


# -- load_image ------------------------------------------------------------

def test_load_empty_image_leaves_memory_zero():
    mem = GuestMemory()
    mem.load_image(b"", mem.base)
    assert not mem.data.any()


def test_load_image_little_endian():
    mem = GuestMemory()
    mem.load_image(bytes([0x13, 0, 0, 0]), 0x1000)
    assert mem.read(0x1000, 4) == 0x00000013


def test_load_image_out_of_bounds():
    mem = GuestMemory()
    with pytest.raises(ConfigError):
        mem.load_image(b"\0" * 8, mem.base + mem.size - 4)
    with pytest.raises(ConfigError):
        mem.load_image(b"\0", mem.base - 1)


def test_password_binary_first_instruction_is_call_main(password):
    from vpfuzz.guest.disasm import disassemble_word

    mem = GuestMemory()
    mem.load_image(password.binary, 0x1000)
    first = disassemble_word(mem.read(0x1000, 4))
    assert first == disassemble_word(struct.unpack("<I", password.binary[:4])[0])
    target = password.symbols["main"] - 0x1000
    assert first == f"jal x1, {target}"


# -- determinism and counting ----------------------------------------------

def test_run_is_deterministic(password):
    def once():
        cpu, bus = make_machine(password.binary, data=b"hexlo\n", sp=password.config.stack_top)
        cov = CoverageMap()
        res = isa.run_until(cpu, bus, isa.RunLimits(breakpoints=password.config.breakpoints()), cov)
        return res.stop, cpu.regs.copy(), cpu.instr_count, cov.bytes.copy()

    a, b = once(), once()
    assert a[0] == b[0] and a[2] == b[2]
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[3], b[3])


def test_instr_count_equals_running_steps(password):
    cpu, bus = make_machine(password.binary, data=b"abc\n", sp=password.config.stack_top)
    steps = 0
    last = 0
    while cpu.running and not bus.cursor.exhausted and steps < 5000:
        isa.step(cpu, bus)
        steps += 1
        assert cpu.instr_count >= last
        last = cpu.instr_count
        if cpu.running:
            assert cpu.pc % 4 == 0
    assert cpu.instr_count == steps


# -- differential against the reference interpreter ------------------------

PROGRAMS = {
    "arith": "li t0, 1000\nli t1, -7\nadd a0, t0, t1\nsub a1, t0, t1\nxor a2, t0, t1\nor a3, t0, t1\nand a4, t0, t1",
    "imm_ops": "li t0, 0x7ff\nxori a0, t0, -1\nori a1, t0, 0x100\nandi a2, t0, 0x0f0\naddi a3, t0, -2048",
    "compare_signed": "li t0, -5\nli t1, 3\nslt a0, t0, t1\nslt a1, t1, t0\nslti a2, t0, -4\nslti a3, t0, -6",
    "compare_unsigned": "li t0, -5\nli t1, 3\nsltu a0, t0, t1\nsltu a1, t1, t0\nsltiu a2, t1, -1\nsltiu a3, t0, 4",
    "shifts_imm": "li t0, 0x80000f01\nslli a0, t0, 4\nsrli a1, t0, 4\nsrai a2, t0, 4\nsrai a3, t0, 31",
    "shifts_reg": "li t0, 0xf0000003\nli t1, 35\nsll a0, t0, t1\nsrl a1, t0, t1\nsra a2, t0, t1\nli t1, 0\nsra a3, t0, t1",
    "lui_auipc": "lui a0, 0xfffff\nauipc a1, 0\nauipc a2, 0x10\nlui a3, 1\naddi a3, a3, -1",
    "overflow_wrap": "li t0, 0x7fffffff\naddi a0, t0, 1\nli t1, 0\naddi a1, t1, -1\nadd a2, a1, a1\nsub a3, t1, t0",
    "store_load_word": "addi sp, sp, -16\nli t0, 0xdeadbeef\nsw t0, 4(sp)\nlw a0, 4(sp)\nlhu a1, 4(sp)\nlh a2, 6(sp)\nlbu a3, 7(sp)\nlb a4, 7(sp)",
    "store_bytes": "addi sp, sp, -8\nsw x0, 0(sp)\nli t0, 0x1ff\nsb t0, 0(sp)\nsh t0, 2(sp)\nlw a0, 0(sp)\nlb a1, 0(sp)\nlh a2, 2(sp)",
    "branch_loop_sum": "li t0, 10\nli a0, 0\nloop:\nadd a0, a0, t0\naddi t0, t0, -1\nbnez t0, loop",
    "branch_signed": "li t0, -1\nli t1, 1\nli a0, 0\nblt t0, t1, yes\nli a0, 99\nyes:\naddi a0, a0, 1\nbge t0, t1, no\naddi a0, a0, 10\nno:\nnop",
    "branch_unsigned": "li t0, -1\nli t1, 1\nli a0, 0\nbltu t0, t1, skip\naddi a0, a0, 5\nskip:\nbgeu t0, t1, done\naddi a0, a0, 100\ndone:\nnop",
    "beq_bne": "li t0, 4\nli t1, 4\nli a0, 0\nbeq t0, t1, eq\nli a0, 1\neq:\nbne t0, t1, ne\naddi a0, a0, 2\nne:\nnop",
    "call_return": "li a0, 5\ncall double\naddi a1, a0, 1\nj end\ndouble:\nadd a0, a0, a0\nret\nend:\nnop",
    "nested_calls": "addi sp, sp, -16\nsw ra, 12(sp)\nli a0, 3\ncall f\nlw ra, 12(sp)\nj end\nf:\naddi sp, sp, -16\nsw ra, 12(sp)\ncall g\naddi a0, a0, 1\nlw ra, 12(sp)\naddi sp, sp, 16\nret\ng:\nslli a0, a0, 2\nret\nend:\nnop",
    "jalr_table": "la t0, target\njalr ra, 0(t0)\nli a1, 7\nj end\ntarget:\nli a0, 42\njalr x0, 0(ra)\nend:\nnop",
    "fibonacci": "li t0, 0\nli t1, 1\nli t2, 20\nfib:\nadd t3, t0, t1\nmv t0, t1\nmv t1, t3\naddi t2, t2, -1\nbnez t2, fib\nmv a0, t0",
    "memcpy_loop": "addi sp, sp, -64\nli t0, 0\nli t1, 16\nfill:\nslli t2, t0, 2\nadd t2, t2, sp\nsw t0, 0(t2)\naddi t0, t0, 1\nblt t0, t1, fill\nlw a0, 60(sp)\nlw a1, 0(sp)\nlw a2, 32(sp)",
    "multiply_shift_add": "li a0, 0\nli t0, 123\nli t1, 45\nmul:\nandi t2, t1, 1\nbeqz t2, skip\nadd a0, a0, t0\nskip:\nslli t0, t0, 1\nsrli t1, t1, 1\nbnez t1, mul",
    "x0_sink": "addi x0, x0, 1\nadd x0, sp, sp\nlui x0, 5\nmv a0, x0\nsltu a1, x0, sp",
    "string_count": "la t0, s\nli a0, 0\nnext:\nlbu t1, 0(t0)\nbeqz t1, end\naddi a0, a0, 1\naddi t0, t0, 1\nj next\ns:\n.asciz \"vpfuzz!\"\n.align 2\nend:\nnop",
    "negative_offsets": "addi sp, sp, -32\naddi t0, sp, 16\nli t1, -123\nsw t1, -8(t0)\nlw a0, 8(sp)\nsh t1, -2(t0)\nlh a1, 14(sp)",
}


def _run_both(source):
    source = source + "\nend_of_program:\necall"
    image, _ = assemble(source, 0x1000)
    ref = RefMachine(image, 0x1000, 0x10000, sp=SP).run()
    assert ref.exit_code is not None, "reference did not reach ecall"
    cpu, bus = make_machine(image, sp=SP)
    res = isa.run_until(cpu, bus, isa.RunLimits(max_instructions=100_000))
    return ref, cpu, res


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_differential_program(name):
    ref, cpu, res = _run_both(PROGRAMS[name])
    assert res.stop == isa.StopKind.EXITED
    assert [cpu.reg(i) for i in range(32)] == ref.x
    assert cpu.pc == ref.pc
    assert cpu.instr_count == ref.steps


def test_differential_corpus_size():
    assert len(PROGRAMS) >= 20


ALU_R = ["add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and"]
ALU_I = ["addi", "slti", "sltiu", "xori", "ori", "andi"]
SHIFT_I = ["slli", "srli", "srai"]

reg = st.integers(0, 31)
alu_instr = st.one_of(
    st.tuples(st.sampled_from(ALU_R), reg, reg, reg).map(lambda t: encode(t[0], t[1], t[2], t[3])),
    st.tuples(st.sampled_from(ALU_I), reg, reg, st.integers(-2048, 2047)).map(
        lambda t: encode(t[0], t[1], t[2], imm=t[3])),
    st.tuples(st.sampled_from(SHIFT_I), reg, reg, st.integers(0, 31)).map(
        lambda t: encode(t[0], t[1], t[2], imm=t[3])),
    st.tuples(st.sampled_from(["lui", "auipc"]), reg, st.integers(0, 0xFFFFF)).map(
        lambda t: encode(t[0], t[1], imm=t[2])),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(alu_instr, min_size=1, max_size=40), st.lists(st.integers(0, 0xFFFFFFFF), min_size=31, max_size=31))
def test_random_alu_sequences_match_reference_and_keep_x0(prog, init):
    image = words(*prog, 0x00000073)
    ref = RefMachine(image, 0x1000, 0x10000, sp=SP)
    cpu, bus = make_machine(image, sp=SP)
    for i, v in enumerate(init, 1):
        ref.x[i] = v
        cpu.set_reg(i, v)
    while ref.step():
        pass
    while cpu.running:
        isa.step(cpu, bus)
        assert cpu.reg(0) == 0
    assert [cpu.reg(i) for i in range(32)] == ref.x
