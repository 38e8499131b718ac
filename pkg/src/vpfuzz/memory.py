"""Flat guest RAM and the bus transaction types shared by the CPU and probe."""

import enum
from dataclasses import dataclass

import numpy as np

DEFAULT_RAM_BASE = 0x00001000
DEFAULT_RAM_SIZE = 1 << 20
# Accesses landing in this many bytes just above RAM fault as a guard hit
GUARD_SIZE = 0x1000

FAULT_NONE = 0
FAULT_BUS_ERROR = 1
FAULT_ILLEGAL = 2
FAULT_MISALIGNED = 3
FAULT_GUARD = 4


class FaultKind(enum.IntEnum):
    BUS_ERROR = FAULT_BUS_ERROR
    ILLEGAL_INSTRUCTION = FAULT_ILLEGAL
    MISALIGNED_ACCESS = FAULT_MISALIGNED
    STACK_OVERFLOW_GUARD = FAULT_GUARD

    @property
    def label(self):
        return {
            FAULT_BUS_ERROR: "BusError",
            FAULT_ILLEGAL: "IllegalInstruction",
            FAULT_MISALIGNED: "MisalignedAccess",
            FAULT_GUARD: "StackOverflowGuard",
        }[self.value]


class Direction(enum.IntEnum):
    READ = 0
    WRITE = 1


class ConfigError(ValueError):
    """Invalid VP configuration, detected before any execution starts."""


@dataclass(frozen=True)
class BusTransaction:
    addr: int
    size: int
    dir: Direction
    data: bytes = b""
    origin_pc: int = 0

    def __post_init__(self):
        if self.size not in (1, 2, 4):
            raise ValueError(f"transaction size must be 1, 2 or 4, got {self.size}")
        if not 0 <= self.addr <= 0xFFFFFFFF or self.addr + self.size > 1 << 32:
            raise ValueError(f"transaction at {self.addr:#x} wraps the address space")
        if self.dir == Direction.WRITE and len(self.data) != self.size:
            raise ValueError("write payload length must equal size")

    @property
    def value(self):
        return int.from_bytes(self.data, "little")


class GuestMemory:
    """Zero-initialised little-endian byte store at ``base``."""

    def __init__(self, base=DEFAULT_RAM_BASE, size=DEFAULT_RAM_SIZE):
        if size <= 0 or size % 8:
            raise ConfigError(f"memory size must be a positive multiple of 8, got {size}")
        if base < 0 or base + size > 1 << 32:
            raise ConfigError(f"memory [{base:#x}, +{size:#x}) exceeds the 32-bit space")
        self.base = base
        self.data = np.zeros(size, dtype=np.uint8)

    @property
    def size(self):
        return self.data.shape[0]

    @property
    def end(self):
        return self.base + self.size

    def contains(self, addr, size=1):
        return self.base <= addr and addr + size <= self.end

    def load_image(self, image, load_addr):
        image = bytes(image)
        if not (self.base <= load_addr and load_addr + len(image) <= self.end):
            raise ConfigError(
                f"image of {len(image)} bytes at {load_addr:#x} does not fit in "
                f"RAM [{self.base:#x}, {self.end:#x})"
            )
        self.data[:] = 0
        off = load_addr - self.base
        self.data[off:off + len(image)] = np.frombuffer(image, dtype=np.uint8)

    def read(self, addr, size):
        if not self.contains(addr, size):
            raise IndexError(f"read of {size} bytes at {addr:#x} outside RAM")
        off = addr - self.base
        return int.from_bytes(self.data[off:off + size].tobytes(), "little")

    def write(self, addr, size, value):
        if not self.contains(addr, size):
            raise IndexError(f"write of {size} bytes at {addr:#x} outside RAM")
        off = addr - self.base
        raw = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
        self.data[off:off + size] = np.frombuffer(raw, dtype=np.uint8)

    def read_bytes(self, addr, n):
        off = addr - self.base
        if not self.contains(addr, n):
            raise IndexError(f"read of {n} bytes at {addr:#x} outside RAM")
        return self.data[off:off + n].tobytes()

    def copy(self):
        other = GuestMemory.__new__(GuestMemory)
        other.base = self.base
        other.data = self.data.copy()
        return other
