"""Bundled sample guests and the generator for the UART password target.

Every guest shares one skeleton: ``_start`` calls ``main`` and the return
lands on ``main_return``, which exits with ``a0`` as the exit code.  The VP
sets ``sp`` from the config before the first instruction.
"""

from dataclasses import dataclass, field

from vpfuzz.config import ErrorHandler, Persistent, ReturnRegister, VpConfig
from vpfuzz.guest.asm import assemble
from vpfuzz.memory import DEFAULT_RAM_BASE, DEFAULT_RAM_SIZE
from vpfuzz.probe import AddressRange

UART_DATA = 0x40002000
UART_RANGE = AddressRange(UART_DATA, UART_DATA + 3)
LOAD_ADDR = DEFAULT_RAM_BASE
STACK_TOP = DEFAULT_RAM_BASE + DEFAULT_RAM_SIZE
READ_CAP = 128

_PRELUDE = f"""
    .equ UART_DATA, {UART_DATA:#x}
_start:
    call main
main_return:
    ecall
"""


@dataclass
class GuestBundle:
    name: str
    binary: bytes
    symbols: dict
    config: VpConfig
    source: str = field(repr=False, default="")
    expected: dict = field(default_factory=dict)

    def symbol_text(self):
        return "".join(f"{name} {addr:#010x}\n" for name, addr in sorted(self.symbols.items(), key=lambda kv: (kv[1], kv[0])))


def caesar(text, shift):
    """Shift lowercase letters by ``shift``; everything else passes through."""
    out = bytearray()
    for b in text.encode("latin-1") if isinstance(text, str) else text:
        if 0x61 <= b <= 0x7A:
            b = 0x61 + (b - 0x61 + shift) % 26
        out.append(b)
    return bytes(out)


def _bundle(name, source, crash="return", expected=None):
    binary, symbols = assemble(source, LOAD_ADDR)
    if crash == "return":
        mode = ReturnRegister(symbols["main_return"])
    else:
        mode = ErrorHandler(symbols["error_handler"])
    cfg = VpConfig(
        image_path=f"{name}.bin",
        load_addr=LOAD_ADDR,
        entry_pc=symbols["_start"],
        stack_top=STACK_TOP,
        tracked=[UART_RANGE],
        crash_mode=mode,
        persistent=Persistent(symbols["main"], symbols["main_return"]),
        image=binary,
    )
    return GuestBundle(name, binary, symbols, cfg, source, expected or {})


def _read_line(buf_reg, cap):
    """Read bytes into ``buf_reg`` until newline/NUL, then terminate the string.

    ``cap`` of None leaves out the length check, so long lines run past the
    buffer just like the unchecked C loop.
    """
    check = f"    bltu t4, t5, read_loop\n" if cap else "    j read_loop\n"
    return f"""
    li t2, UART_DATA
    li t3, '\\n'
    li t5, {cap or 0}
    li t4, 0
read_loop:
    lbu t0, 0(t2)
    add t1, {buf_reg}, t4
    sb t0, 0(t1)
    addi t4, t4, 1
    beq t0, t3, read_done
    beqz t0, read_done
{check}read_done:
    add t1, {buf_reg}, t4
    sb zero, -1(t1)
"""


_CAESAR_FN = """
caesar:
    li t3, 'a'
    li t4, 'z'
    li t6, 26
caesar_loop:
    lbu t0, 0(a0)
    beqz t0, caesar_done
    bltu t0, t3, caesar_next
    bltu t4, t0, caesar_next
    sub t0, t0, t3
    add t0, t0, a1
    bltu t0, t6, caesar_nowrap
    sub t0, t0, t6
caesar_nowrap:
    add t0, t0, t3
    sb t0, 0(a0)
caesar_next:
    addi a0, a0, 1
    j caesar_loop
caesar_done:
    ret
"""


def _validate_password(password, shift):
    if not 1 <= len(password) <= 64:
        raise ValueError("password length must be 1..64")
    if not all("a" <= c <= "z" for c in password):
        raise ValueError(f"password {password!r} must be lowercase a-z")
    if not 1 <= shift <= 25:
        raise ValueError(f"shift {shift} must be in 1..25")


def password_source(password, shift, overflow=False):
    _validate_password(password, shift)
    cipher = caesar(password, shift).decode()
    # One compare block per position, each reached by a taken branch, so a
    # longer correct prefix always lights up a new edge.
    compare = []
    for i in range(len(password) + 1):
        compare.append(f"""    lbu t0, {i}(s0)
    lbu t1, {i}(s1)
    beq t0, t1, match_{i}
    j mismatch
match_{i}:""")
    compare = "\n".join(compare)
    return _PRELUDE + f"""
main:
    addi sp, sp, -144
    sw ra, 140(sp)
    sw s0, 136(sp)
    sw s1, 132(sp)
    mv s0, sp
{_read_line("s0", None if overflow else READ_CAP)}
    mv a0, s0
    li a1, {shift}
    call caesar
    la s1, encr_password
{compare}
    li a0, 1
    j main_exit
mismatch:
    li a0, 0
main_exit:
    lw s1, 132(sp)
    lw s0, 136(sp)
    lw ra, 140(sp)
    addi sp, sp, 144
    ret
{_CAESAR_FN}
    .align 2
encr_password:
    .asciz "{cipher}"
"""


def build_password_guest(password="hello", shift=1, overflow=False):
    """UART password check: read a line, Caesar-shift it, compare, exit 1 on match."""
    source = password_source(password, shift, overflow)
    expected = {
        (password + "\n").encode(): 1,
        (password[:-1] + chr((ord(password[-1]) - 0x61 + 1) % 26 + 0x61) + "\n").encode(): 0,
    }
    name = "password_overflow" if overflow else "password"
    return _bundle(name, source, expected=expected)


def build_caesar_debug(shift=1):
    """Reads a line into ``scratch`` and shifts it in place; always exits 0."""
    source = _PRELUDE + f"""
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    sw s0, 8(sp)
    la s0, scratch
{_read_line("s0", READ_CAP)}
    mv a0, s0
    li a1, {shift}
    call caesar
    li a0, 0
    lw s0, 8(sp)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret
{_CAESAR_FN}
    .align 2
scratch:
    .space {READ_CAP}
"""
    return _bundle("caesar_debug", source)


def build_always_crash():
    source = _PRELUDE + """
main:
    li a0, 1
    ret
"""
    return _bundle("always_crash", source, expected={b"": 1})


def build_always_ok():
    source = _PRELUDE + """
main:
    li a0, 0
    ret
"""
    return _bundle("always_ok", source, expected={b"": 0})


def build_echo_loop():
    """Copies UART bytes into a 64-byte ring until a NUL byte arrives."""
    source = _PRELUDE + """
main:
    li t2, UART_DATA
    la t3, ring
    li t4, 0
echo_loop:
    lbu t0, 0(t2)
    beqz t0, echo_done
    add t1, t3, t4
    sb t0, 0(t1)
    addi t4, t4, 1
    andi t4, t4, 63
    j echo_loop
echo_done:
    li a0, 0
    ret
    .align 2
ring:
    .space 64
"""
    return _bundle("echo_loop", source)


def build_fault_write(magic=0xA5):
    """Stores to an unmapped address when the first UART byte is ``magic``."""
    source = _PRELUDE + f"""
    .equ UNMAPPED, 0x20000000
main:
    li t2, UART_DATA
    lbu t0, 0(t2)
    li t1, {magic:#x}
    bne t0, t1, fw_ok
    li t3, UNMAPPED
    sw t0, 0(t3)
fw_ok:
    li a0, 0
    ret
"""
    return _bundle("fault_write", source, expected={bytes([magic]): "fault", b"\x00": 0})


def build_handler_guest():
    """Jumps to ``error_handler`` when the first UART byte is not 7-bit ASCII."""
    source = _PRELUDE + """
main:
    li t2, UART_DATA
    lbu t0, 0(t2)
    li t1, 0x80
    bgeu t0, t1, bad_input
    li a0, 0
    ret
bad_input:
    j error_handler
error_handler:
    j error_handler
"""
    return _bundle("handler_guest", source, crash="handler", expected={b"\xff": "handler", b"a": 0})


BUILDERS = {
    "password": build_password_guest,
    "password_overflow": lambda password="hello", shift=1: build_password_guest(password, shift, overflow=True),
    "caesar_debug": lambda shift=1: build_caesar_debug(shift),
    "always_crash": build_always_crash,
    "always_ok": build_always_ok,
    "echo_loop": build_echo_loop,
    "fault_write": build_fault_write,
    "handler_guest": build_handler_guest,
}


def build(name, **kwargs):
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown guest {name!r}; choose from {', '.join(BUILDERS)}") from None
    return builder(**kwargs)
