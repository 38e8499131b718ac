import pytest
from hypothesis import settings

from vpfuzz import isa
from vpfuzz.guest.asm import assemble
from vpfuzz.guest.bundles import build
from vpfuzz.memory import GuestMemory
from vpfuzz.probe import BusRouter, ProbeConfig, AddressRange

# first calls into compiled kernels may load machine code; no per-example deadline
settings.register_profile("vpfuzz", deadline=None)
settings.load_profile("vpfuzz")

UART = AddressRange(0x40002000, 0x40002003)


def make_machine(source_or_bytes, base=0x1000, tracked=(UART,), data=b"", sp=None, **probe_kw):
    """Assemble (or take raw bytes), load at ``base`` and return (cpu, bus)."""
    if isinstance(source_or_bytes, str):
        image, _ = assemble(source_or_bytes, base)
    else:
        image = bytes(source_or_bytes)
    mem = GuestMemory(0x1000, 1 << 20)
    mem.load_image(image, base)
    bus = BusRouter(mem, ProbeConfig(list(tracked), **probe_kw))
    bus.arm(data)
    cpu = isa.CpuState(pc=base, sp=sp if sp is not None else mem.base + mem.size)
    return cpu, bus


@pytest.fixture(scope="session")
def password():
    return build("password")


@pytest.fixture(scope="session")
def handler_guest():
    return build("handler_guest")
