import pytest

from tests.ref_rv32i import KNOWN, encode
from vpfuzz.guest.asm import AsmError, assemble
from vpfuzz.guest.disasm import disassemble, normalize


def words(binary):
    return [int.from_bytes(binary[i:i + 4], "little") for i in range(0, len(binary), 4)]


def test_nop_bytes():
    assert assemble("addi x0,x0,0")[0] == bytes([0x13, 0, 0, 0])


@pytest.mark.parametrize("text,word", sorted(KNOWN.items()))
def test_hand_checked_encodings(text, word):
    assert words(assemble(text)[0]) == [word]


def test_self_jump_has_zero_displacement():
    binary, symbols = assemble("loop: jal x0, loop", 0x1000)
    assert symbols == {"loop": 0x1000}
    assert words(binary) == [encode("jal", 0, imm=0)]


def test_forward_and_backward_labels():
    src = """
top:
    beq x1, x2, done
    addi x1, x1, 1
    jal x0, top
done:
    ecall
"""
    binary, symbols = assemble(src, 0x2000)
    assert symbols == {"top": 0x2000, "done": 0x200C}
    assert words(binary) == [
        encode("beq", rs1=1, rs2=2, imm=12),
        encode("addi", 1, 1, imm=1),
        encode("jal", 0, imm=-8),
        0x73,
    ]


def test_li_and_la_expand():
    binary, symbols = assemble("li a0, 0x12345678\nla t0, here\nhere: ecall", 0x1000)
    w = words(binary)
    # lui+addi rebuild the value with a sign-adjusted upper part
    hi = (0x12345678 + 0x800) >> 12
    assert w[0] == encode("lui", 10, imm=hi)
    assert w[1] == encode("addi", 10, 10, imm=0x678)
    assert len(w) == 5 and symbols["here"] == 0x1010


def test_directives():
    binary, _ = assemble('.byte 1, 2\n.half 0x0304\n.word 0xdeadbeef\n.asciz "hi"\n.align 2\n.word 7')
    assert binary == bytes([1, 2, 4, 3, 0xEF, 0xBE, 0xAD, 0xDE]) + b"hi\0" + b"\0" + (7).to_bytes(4, "little")


@pytest.mark.parametrize("src,line,fragment", [
    ("nop\nfoo x1, x2", 2, "unknown mnemonic"),
    ("nop\nnop\njal x0, nowhere", 3, "nowhere"),
    ("addi x1, x0, 5000", 1, ""),
    ("a:\na:", 2, "defined twice"),
    ("beq x1, x2, far\n.space 8192\nfar: ecall", 1, ""),
    ("add x1, x2", 1, ""),
    ("lw x1, 4(x99)", 1, ""),
])
def test_errors_carry_line_numbers(src, line, fragment):
    with pytest.raises(AsmError) as err:
        assemble(src)
    assert err.value.lineno == line
    assert f"line {line}:" in str(err.value) and fragment in str(err.value)


# 50 instructions in mixed spellings: ABI names, hex immediates, odd spacing.
CORPUS = """
addi a0, zero, 42
addi x1, x2, -2048
addi t0, t1, 2047
slti s0, s1, -1
sltiu a1, a2, 0x7ff
xori a3, a4, -0x10
ori a5, a6, 255
andi a7, s2, 0xf0
slli s3, s4, 31
srli s5, s6, 1
srai s7, s8, 0x10
add s9, s10, s11
sub t3, t4, t5
sll t6, ra, sp
slt gp, tp, fp
sltu x5,x6,x7
xor x8, x9, x10
srl x11, x12, x13
sra x14, x15, x16
or x17, x18, x19
and x20, x21, x22
lb a0, 0(sp)
lh a1, -2(s0)
lw a2, 2044(t0)
lbu a3, -2048(a0)
lhu a4, 0x10(gp)
sb a5, 1(sp)
sh a6, -4(s1)
sw a7, 0x7fc(t6)
beq a0, a1, 8
bne t0, zero, -4
blt x1, x2, 4094
bge x3, x4, -4096
bltu s0, s1, 0x40
bgeu s2, s3, -0x40
jal ra, 2048
jal x0, -1048576
jal zero, 1048574
jalr ra, 0(t0)
jalr x0, -12(x5)
lui a0, 0x12345
lui t1, 0xfffff
auipc gp, 0x0
auipc x31, 0x80000
ecall
ebreak
addi x0, x0, 0
sw zero, 0(zero)
lw x31, -1(x31)
sub x0, x31, x1
"""


def test_corpus_round_trip():
    lines = [ln for ln in CORPUS.splitlines() if ln.strip()]
    assert len(lines) == 50
    binary, _ = assemble(CORPUS, 0x1000)
    got = [text for _, text in disassemble(binary, 0x1000)]
    assert got == [normalize(ln) for ln in lines]


def test_disassembly_reassembles_to_same_words():
    binary, _ = assemble(CORPUS, 0x1000)
    text = "\n".join(t for _, t in disassemble(binary, 0x1000))
    assert assemble(text, 0x1000)[0] == binary


def test_assembler_is_deterministic(password):
    a = assemble(password.source, 0x1000)
    b = assemble(password.source, 0x1000)
    assert a == b
    assert a[0] == password.binary
