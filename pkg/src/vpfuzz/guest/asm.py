"""Two-pass assembler for the RV32I subset the interpreter runs.

Syntax is GNU-flavoured: ``label:``, ``# comment``, registers as ``xN`` or
ABI names, memory operands as ``imm(reg)``.  Directives: ``.org``, ``.equ``,
``.word``, ``.half``, ``.byte``, ``.ascii``, ``.asciz``, ``.space``/``.zero``
and ``.align`` (power-of-two exponent).

Branch and jump targets that mention a symbol are absolute addresses; a
purely numeric target is a pc-relative offset, which is what the
disassembler prints, so its output assembles back to the same words.
"""

import re

REGISTERS = {f"x{i}": i for i in range(32)}
REGISTERS.update({
    "zero": 0, "ra": 1, "sp": 2, "gp": 3, "tp": 4,
    "t0": 5, "t1": 6, "t2": 7, "s0": 8, "fp": 8, "s1": 9,
    "a0": 10, "a1": 11, "a2": 12, "a3": 13, "a4": 14, "a5": 15, "a6": 16, "a7": 17,
    "s2": 18, "s3": 19, "s4": 20, "s5": 21, "s6": 22, "s7": 23, "s8": 24, "s9": 25,
    "s10": 26, "s11": 27, "t3": 28, "t4": 29, "t5": 30, "t6": 31,
})

R_TYPE = {
    "add": (0, 0x00), "sub": (0, 0x20), "sll": (1, 0x00), "slt": (2, 0x00),
    "sltu": (3, 0x00), "xor": (4, 0x00), "srl": (5, 0x00), "sra": (5, 0x20),
    "or": (6, 0x00), "and": (7, 0x00),
}
I_ARITH = {"addi": 0, "slti": 2, "sltiu": 3, "xori": 4, "ori": 6, "andi": 7}
SHIFTS = {"slli": (1, 0x00), "srli": (5, 0x00), "srai": (5, 0x20)}
LOADS = {"lb": 0, "lh": 1, "lw": 2, "lbu": 4, "lhu": 5}
STORES = {"sb": 0, "sh": 1, "sw": 2}
BRANCHES = {"beq": 0, "bne": 1, "blt": 4, "bge": 5, "bltu": 6, "bgeu": 7}
BRANCH_ZERO = {  # pseudo -> (real op, operand order: True puts rs first)
    "beqz": ("beq", True), "bnez": ("bne", True), "bltz": ("blt", True),
    "bgez": ("bge", True), "blez": ("bge", False), "bgtz": ("blt", False),
}
BRANCH_SWAP = {"bgt": "blt", "ble": "bge", "bgtu": "bltu", "bleu": "bgeu"}


class AsmError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


# -- encoders ---------------------------------------------------------------


def _check_signed(value, bits, what, lineno):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if not lo <= value <= hi:
        raise AsmError(lineno, f"{what} {value} out of range [{lo}, {hi}]")


def enc_r(f7, rs2, rs1, f3, rd, opcode):
    return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode


def enc_i(imm, rs1, f3, rd, opcode):
    return ((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | opcode


def enc_s(imm, rs2, rs1, f3, opcode):
    imm &= 0xFFF
    return ((imm >> 5) << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | ((imm & 0x1F) << 7) | opcode


def enc_b(imm, rs2, rs1, f3):
    imm &= 0x1FFF
    return (((imm >> 12) & 1) << 31) | (((imm >> 5) & 0x3F) << 25) | (rs2 << 20) | (rs1 << 15) \
        | (f3 << 12) | (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) | 0x63


def enc_u(imm20, rd, opcode):
    return ((imm20 & 0xFFFFF) << 12) | (rd << 7) | opcode


def enc_j(imm, rd):
    imm &= 0x1FFFFF
    return (((imm >> 20) & 1) << 31) | (((imm >> 1) & 0x3FF) << 21) | (((imm >> 11) & 1) << 20) \
        | (((imm >> 12) & 0xFF) << 12) | (rd << 7) | 0x6F


def hi20(value):
    return ((value + 0x800) >> 12) & 0xFFFFF


def lo12(value):
    lo = value & 0xFFF
    return lo - 0x1000 if lo & 0x800 else lo


# -- expressions --------------------------------------------------------------

_TOKEN = re.compile(r"\s*(%hi|%lo|0[xX][0-9a-fA-F]+|0[bB][01]+|\d+|'(?:\\.|[^'\\])'|[A-Za-z_.$][\w.$]*|[-+()])")
_ESCAPES = {"n": 10, "t": 9, "r": 13, "0": 0, "\\": 92, "'": 39, '"': 34}


class _Expr:
    """Tiny recursive-descent evaluator: terms joined by + and -."""

    def __init__(self, text, symbols, lineno, allow_undefined):
        self.toks = self._tokenize(text, lineno)
        self.i = 0
        self.symbols = symbols
        self.lineno = lineno
        self.allow_undefined = allow_undefined
        self.uses_symbol = False

    @staticmethod
    def _tokenize(text, lineno):
        toks, pos = [], 0
        text = text.strip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise AsmError(lineno, f"cannot parse expression {text!r}")
            toks.append(m.group(1))
            pos = m.end()
        if not toks:
            raise AsmError(lineno, "missing operand")
        return toks

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self):
        value = self.sum()
        if self.peek() is not None:
            raise AsmError(self.lineno, f"unexpected {self.peek()!r} in expression")
        return value

    def sum(self):
        value = self.unary()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.unary()
            value = value + rhs if op == "+" else value - rhs
        return value

    def unary(self):
        tok = self.peek()
        if tok == "-":
            self.take()
            return -self.unary()
        if tok == "+":
            self.take()
            return self.unary()
        return self.atom()

    def atom(self):
        tok = self.take()
        if tok is None:
            raise AsmError(self.lineno, "truncated expression")
        if tok in ("%hi", "%lo"):
            if self.take() != "(":
                raise AsmError(self.lineno, f"{tok} needs parentheses")
            inner = self.sum()
            if self.take() != ")":
                raise AsmError(self.lineno, "unbalanced parentheses")
            return hi20(inner) if tok == "%hi" else lo12(inner)
        if tok == "(":
            value = self.sum()
            if self.take() != ")":
                raise AsmError(self.lineno, "unbalanced parentheses")
            return value
        if tok[0] == "'":
            body = tok[1:-1]
            if body.startswith("\\"):
                if body[1] not in _ESCAPES:
                    raise AsmError(self.lineno, f"unknown escape {body!r}")
                return _ESCAPES[body[1]]
            return ord(body)
        if tok[0].isdigit():
            return int(tok, 0) if tok[:2].lower() in ("0x", "0b") else int(tok, 10)
        self.uses_symbol = True
        if tok in self.symbols:
            return self.symbols[tok]
        if self.allow_undefined:
            return 0
        raise AsmError(self.lineno, f"undefined symbol {tok!r}")


def _split_operands(text):
    ops, depth, cur, quote = [], 0, [], None
    for ch in text:
        if quote:
            cur.append(ch)
            if ch == quote and (len(cur) < 2 or cur[-2] != "\\"):
                quote = None
            continue
        if ch in "\"'":
            quote = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            ops.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        ops.append("".join(cur).strip())
    return ops


def _strip_comment(line):
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote and line[i - 1] != "\\":
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#" or ch == ";" or line.startswith("//", i):
            return line[:i]
    return line


def _parse_string(text, lineno):
    text = text.strip()
    if len(text) < 2 or text[0] != '"' or text[-1] != '"':
        raise AsmError(lineno, f"expected a quoted string, got {text!r}")
    out, i, body = bytearray(), 0, text[1:-1]
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            i += 1
            if i >= len(body) or body[i] not in _ESCAPES:
                raise AsmError(lineno, "bad escape in string")
            out.append(_ESCAPES[body[i]])
        else:
            out.append(ord(ch))
        i += 1
    return bytes(out)


class Assembler:
    def __init__(self, source, base_addr=0):
        self.source = source
        self.base = base_addr
        self.symbols = {}
        self.equs = set()
        self.lines = []  # (lineno, mnemonic, operands)
        self._li_sizes = {}
        self._emitting = False

    # Each statement's size has to be known in pass 1, so ``li`` picks its
    # one- or two-instruction form from what is known at that point.
    def _li_words(self, operand, lineno):
        expr = _Expr(operand, self.symbols, lineno, allow_undefined=True)
        value = expr.parse()
        if expr.uses_symbol and not self._only_equs(operand):
            return 2
        return 1 if -2048 <= _signed32(value) <= 2047 else 2

    def _only_equs(self, operand):
        names = re.findall(r"[A-Za-z_.$][\w.$]*", operand)
        return all(n in self.equs for n in names if n not in ("%hi", "%lo"))

    def _parse_lines(self):
        for lineno, raw in enumerate(self.source.splitlines(), 1):
            line = _strip_comment(raw).strip()
            while True:
                m = re.match(r"([A-Za-z_.$][\w.$]*)\s*:(.*)", line)
                if not m:
                    break
                self.lines.append((lineno, ":label", m.group(1)))
                line = m.group(2).strip()
            if not line:
                continue
            parts = line.split(None, 1)
            self.lines.append((lineno, parts[0].lower(), parts[1] if len(parts) > 1 else ""))

    def assemble(self):
        self._parse_lines()
        self._pass(emit=False)
        return self._pass(emit=True), dict(self.symbols)

    def _pass(self, emit):
        out = bytearray()
        pc = self.base
        defined = set()

        def ev(text, lineno):
            return _Expr(text, self.symbols, lineno, allow_undefined=not emit).parse()

        for lineno, mnem, rest in self.lines:
            if mnem == ":label":
                if not emit:
                    if rest in defined or rest in self.symbols:
                        raise AsmError(lineno, f"label {rest!r} defined twice")
                    self.symbols[rest] = pc
                defined.add(rest)
                continue
            if mnem.startswith("."):
                pc = self._directive(mnem, rest, lineno, pc, out, ev, emit, defined)
                continue
            words = self._instruction(mnem, _split_operands(rest), lineno, pc, ev, emit)
            for w in words:
                out += (w & 0xFFFFFFFF).to_bytes(4, "little")
            pc += 4 * len(words)
        return bytes(out)

    def _directive(self, name, rest, lineno, pc, out, ev, emit, defined):
        ops = _split_operands(rest)
        if name == ".org":
            target = ev(rest, lineno)
            if target < pc:
                raise AsmError(lineno, f".org {target:#x} moves backwards from {pc:#x}")
            out += bytes(target - pc)
            return target
        if name in (".equ", ".set"):
            if len(ops) != 2:
                raise AsmError(lineno, ".equ needs NAME, VALUE")
            sym = ops[0]
            if not emit:
                if sym in self.symbols:
                    raise AsmError(lineno, f"symbol {sym!r} defined twice")
                self.symbols[sym] = ev(ops[1], lineno)
                self.equs.add(sym)
            return pc
        if name in (".word", ".half", ".byte"):
            size = {".word": 4, ".half": 2, ".byte": 1}[name]
            for op in ops:
                value = ev(op, lineno)
                if not -(1 << (8 * size - 1)) <= value < (1 << (8 * size)):
                    raise AsmError(lineno, f"{name} value {value} does not fit")
                out += (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
            return pc + size * len(ops)
        if name in (".ascii", ".asciz", ".string"):
            data = _parse_string(rest, lineno)
            if name != ".ascii":
                data += b"\0"
            out += data
            return pc + len(data)
        if name in (".space", ".zero", ".skip"):
            n = ev(rest, lineno)
            if n < 0:
                raise AsmError(lineno, f"{name} with negative size")
            out += bytes(n)
            return pc + n
        if name in (".align", ".p2align"):
            align = 1 << ev(rest, lineno)
            pad = (-pc) % align
            out += bytes(pad)
            return pc + pad
        if name in (".text", ".data", ".bss", ".globl", ".global", ".section"):
            return pc
        raise AsmError(lineno, f"unknown directive {name}")

    def _reg(self, text, lineno):
        r = REGISTERS.get(text.strip().lower())
        if r is None:
            raise AsmError(lineno, f"unknown register {text!r}")
        return r

    def _mem(self, text, lineno, ev):
        m = re.fullmatch(r"(.*)\(\s*([\w]+)\s*\)", text.strip())
        if not m:
            raise AsmError(lineno, f"expected imm(reg), got {text!r}")
        off = ev(m.group(1), lineno) if m.group(1).strip() else 0
        return off, self._reg(m.group(2), lineno)

    def _target(self, text, lineno, pc, ev, bits):
        expr = _Expr(text, self.symbols, lineno, allow_undefined=not self._emitting)
        value = expr.parse()
        off = value - pc if expr.uses_symbol else value
        if self._emitting:
            _check_signed(off, bits, "branch/jump displacement", lineno)
            if off & 1:
                raise AsmError(lineno, f"odd displacement {off}")
        return off

    def _nargs(self, ops, n, mnem, lineno):
        if len(ops) != n:
            raise AsmError(lineno, f"{mnem} takes {n} operands, got {len(ops)}")

    def _instruction(self, mnem, ops, lineno, pc, ev, emit):
        self._emitting = emit
        reg = lambda t: self._reg(t, lineno)  # noqa: E731

        def imm12(text):
            value = ev(text, lineno)
            if emit:
                _check_signed(value, 12, "immediate", lineno)
            return value

        if mnem in R_TYPE:
            self._nargs(ops, 3, mnem, lineno)
            f3, f7 = R_TYPE[mnem]
            return [enc_r(f7, reg(ops[2]), reg(ops[1]), f3, reg(ops[0]), 0x33)]
        if mnem in I_ARITH:
            self._nargs(ops, 3, mnem, lineno)
            return [enc_i(imm12(ops[2]), reg(ops[1]), I_ARITH[mnem], reg(ops[0]), 0x13)]
        if mnem in SHIFTS:
            self._nargs(ops, 3, mnem, lineno)
            f3, f7 = SHIFTS[mnem]
            sh = ev(ops[2], lineno)
            if emit and not 0 <= sh <= 31:
                raise AsmError(lineno, f"shift amount {sh} out of range")
            return [enc_r(f7, sh & 0x1F, reg(ops[1]), f3, reg(ops[0]), 0x13)]
        if mnem in LOADS:
            self._nargs(ops, 2, mnem, lineno)
            off, base = self._mem(ops[1], lineno, ev)
            if emit:
                _check_signed(off, 12, "load offset", lineno)
            return [enc_i(off, base, LOADS[mnem], reg(ops[0]), 0x03)]
        if mnem in STORES:
            self._nargs(ops, 2, mnem, lineno)
            off, base = self._mem(ops[1], lineno, ev)
            if emit:
                _check_signed(off, 12, "store offset", lineno)
            return [enc_s(off, reg(ops[0]), base, STORES[mnem], 0x23)]
        if mnem in BRANCHES:
            self._nargs(ops, 3, mnem, lineno)
            off = self._target(ops[2], lineno, pc, ev, 13)
            return [enc_b(off, reg(ops[1]), reg(ops[0]), BRANCHES[mnem])]
        if mnem in BRANCH_ZERO:
            self._nargs(ops, 2, mnem, lineno)
            real, rs_first = BRANCH_ZERO[mnem]
            rs = reg(ops[0])
            off = self._target(ops[1], lineno, pc, ev, 13)
            a, b = (rs, 0) if rs_first else (0, rs)
            return [enc_b(off, b, a, BRANCHES[real])]
        if mnem in BRANCH_SWAP:
            self._nargs(ops, 3, mnem, lineno)
            off = self._target(ops[2], lineno, pc, ev, 13)
            return [enc_b(off, reg(ops[0]), reg(ops[1]), BRANCHES[BRANCH_SWAP[mnem]])]
        if mnem in ("lui", "auipc"):
            self._nargs(ops, 2, mnem, lineno)
            value = ev(ops[1], lineno)
            if emit and not 0 <= value <= 0xFFFFF:
                raise AsmError(lineno, f"{mnem} immediate {value} out of 20-bit range")
            return [enc_u(value, reg(ops[0]), 0x37 if mnem == "lui" else 0x17)]
        if mnem == "jal":
            if len(ops) == 1:
                return [enc_j(self._target(ops[0], lineno, pc, ev, 21), 1)]
            self._nargs(ops, 2, mnem, lineno)
            return [enc_j(self._target(ops[1], lineno, pc, ev, 21), reg(ops[0]))]
        if mnem == "jalr":
            if len(ops) == 1:
                return [enc_i(0, reg(ops[0]), 0, 1, 0x67)]
            if len(ops) == 2:
                off, base = self._mem(ops[1], lineno, ev)
            else:
                self._nargs(ops, 3, mnem, lineno)
                base, off = reg(ops[1]), ev(ops[2], lineno)
            if emit:
                _check_signed(off, 12, "jalr offset", lineno)
            return [enc_i(off, base, 0, reg(ops[0]), 0x67)]
        if mnem == "ecall":
            self._nargs(ops, 0, mnem, lineno)
            return [0x00000073]
        if mnem == "ebreak":
            self._nargs(ops, 0, mnem, lineno)
            return [0x00100073]
        # pseudo-instructions
        if mnem == "nop":
            self._nargs(ops, 0, mnem, lineno)
            return [enc_i(0, 0, 0, 0, 0x13)]
        if mnem == "li":
            self._nargs(ops, 2, mnem, lineno)
            rd = reg(ops[0])
            nwords = self._li_words(ops[1], lineno) if not emit else self._li_sizes[(lineno, pc)]
            if not emit:
                self._li_sizes[(lineno, pc)] = nwords
            value = ev(ops[1], lineno) & 0xFFFFFFFF
            if nwords == 1:
                return [enc_i(_signed32(value), 0, 0, rd, 0x13)]
            return [enc_u(hi20(value), rd, 0x37), enc_i(lo12(value), rd, 0, rd, 0x13)]
        if mnem == "la":
            self._nargs(ops, 2, mnem, lineno)
            rd = reg(ops[0])
            value = ev(ops[1], lineno) & 0xFFFFFFFF
            return [enc_u(hi20(value), rd, 0x37), enc_i(lo12(value), rd, 0, rd, 0x13)]
        if mnem == "mv":
            self._nargs(ops, 2, mnem, lineno)
            return [enc_i(0, reg(ops[1]), 0, reg(ops[0]), 0x13)]
        if mnem == "not":
            self._nargs(ops, 2, mnem, lineno)
            return [enc_i(-1, reg(ops[1]), 4, reg(ops[0]), 0x13)]
        if mnem == "neg":
            self._nargs(ops, 2, mnem, lineno)
            return [enc_r(0x20, reg(ops[1]), 0, 0, reg(ops[0]), 0x33)]
        if mnem == "seqz":
            self._nargs(ops, 2, mnem, lineno)
            return [enc_i(1, reg(ops[1]), 3, reg(ops[0]), 0x13)]
        if mnem == "snez":
            self._nargs(ops, 2, mnem, lineno)
            return [enc_r(0, reg(ops[1]), 0, 3, reg(ops[0]), 0x33)]
        if mnem == "j":
            self._nargs(ops, 1, mnem, lineno)
            return [enc_j(self._target(ops[0], lineno, pc, ev, 21), 0)]
        if mnem == "call":
            self._nargs(ops, 1, mnem, lineno)
            return [enc_j(self._target(ops[0], lineno, pc, ev, 21), 1)]
        if mnem == "jr":
            self._nargs(ops, 1, mnem, lineno)
            return [enc_i(0, reg(ops[0]), 0, 0, 0x67)]
        if mnem == "ret":
            self._nargs(ops, 0, mnem, lineno)
            return [enc_i(0, 1, 0, 0, 0x67)]
        raise AsmError(lineno, f"unknown mnemonic {mnem!r}")


def _signed32(value):
    value &= 0xFFFFFFFF
    return value - (1 << 32) if value & 0x80000000 else value


def assemble(source, base_addr=0):
    """Assemble ``source`` placed at ``base_addr``; returns ``(binary, symbols)``."""
    return Assembler(source, base_addr).assemble()
