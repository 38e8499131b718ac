"""Disassembler producing the canonical text form the assembler accepts.

Kept free of any dependency on the interpreter's decoder so the two can be
checked against each other.
"""

from vpfuzz.guest.asm import REGISTERS

_R = {
    (0, 0x00): "add", (0, 0x20): "sub", (1, 0x00): "sll", (2, 0x00): "slt",
    (3, 0x00): "sltu", (4, 0x00): "xor", (5, 0x00): "srl", (5, 0x20): "sra",
    (6, 0x00): "or", (7, 0x00): "and",
}
_I = {0: "addi", 2: "slti", 3: "sltiu", 4: "xori", 6: "ori", 7: "andi"}
_L = {0: "lb", 1: "lh", 2: "lw", 4: "lbu", 5: "lhu"}
_S = {0: "sb", 1: "sh", 2: "sw"}
_B = {0: "beq", 1: "bne", 4: "blt", 5: "bge", 6: "bltu", 7: "bgeu"}


def _signed(value, bits):
    return value - (1 << bits) if value >> (bits - 1) & 1 else value


def disassemble_word(word):
    w = word & 0xFFFFFFFF
    opcode = w & 0x7F
    rd = w >> 7 & 31
    f3 = w >> 12 & 7
    rs1 = w >> 15 & 31
    rs2 = w >> 20 & 31
    f7 = w >> 25
    illegal = f".word {w:#010x}"

    if opcode == 0b0110011:
        name = _R.get((f3, f7))
        return f"{name} x{rd}, x{rs1}, x{rs2}" if name else illegal
    if opcode == 0b0010011:
        if f3 == 1:
            return f"slli x{rd}, x{rs1}, {rs2}" if f7 == 0 else illegal
        if f3 == 5:
            name = {0: "srli", 0x20: "srai"}.get(f7)
            return f"{name} x{rd}, x{rs1}, {rs2}" if name else illegal
        return f"{_I[f3]} x{rd}, x{rs1}, {_signed(w >> 20, 12)}"
    if opcode == 0b0000011:
        name = _L.get(f3)
        return f"{name} x{rd}, {_signed(w >> 20, 12)}(x{rs1})" if name else illegal
    if opcode == 0b0100011:
        name = _S.get(f3)
        imm = _signed((f7 << 5) | rd, 12)
        return f"{name} x{rs2}, {imm}(x{rs1})" if name else illegal
    if opcode == 0b1100011:
        name = _B.get(f3)
        if not name:
            return illegal
        imm = (w >> 31 & 1) << 12 | (w >> 7 & 1) << 11 | (w >> 25 & 0x3F) << 5 | (w >> 8 & 0xF) << 1
        return f"{name} x{rs1}, x{rs2}, {_signed(imm, 13)}"
    if opcode == 0b1101111:
        imm = (w >> 31 & 1) << 20 | (w >> 12 & 0xFF) << 12 | (w >> 20 & 1) << 11 | (w >> 21 & 0x3FF) << 1
        return f"jal x{rd}, {_signed(imm, 21)}"
    if opcode == 0b1100111:
        return f"jalr x{rd}, {_signed(w >> 20, 12)}(x{rs1})" if f3 == 0 else illegal
    if opcode == 0b0110111:
        return f"lui x{rd}, {w >> 12:#x}"
    if opcode == 0b0010111:
        return f"auipc x{rd}, {w >> 12:#x}"
    if w == 0x00000073:
        return "ecall"
    if w == 0x00100073:
        return "ebreak"
    return illegal


def disassemble(binary, base_addr=0):
    """Return ``[(address, text), ...]`` for each 32-bit word of ``binary``."""
    out = []
    for off in range(0, len(binary) - len(binary) % 4, 4):
        word = int.from_bytes(binary[off:off + 4], "little")
        out.append((base_addr + off, disassemble_word(word)))
    return out


def normalize(line):
    """Canonical spelling of one instruction line (no pseudo-instructions).

    Registers become ``xN``, immediates decimal (``lui``/``auipc`` hex),
    operands separated by ``", "``.
    """
    text = line.split("#", 1)[0].strip()
    if not text:
        return ""
    parts = text.split(None, 1)
    mnem = parts[0].lower()
    if len(parts) == 1:
        return mnem
    ops = [o.strip() for o in parts[1].split(",")]
    canon = []
    for op in ops:
        if "(" in op and op.endswith(")"):
            imm, reg = op[:-1].split("(", 1)
            canon.append(f"{_imm(imm or '0')}(x{REGISTERS[reg.strip().lower()]})")
        elif op.lower() in REGISTERS:
            canon.append(f"x{REGISTERS[op.lower()]}")
        elif mnem in ("lui", "auipc"):
            canon.append(f"{_imm(op):#x}")
        else:
            canon.append(str(_imm(op)))
    return f"{mnem} " + ", ".join(canon)


def _imm(text):
    text = text.strip()
    neg = text.startswith("-")
    body = text[1:] if neg else text
    value = int(body, 0) if body[:2].lower() in ("0x", "0b") else int(body, 10)
    return -value if neg else value
