import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpfuzz.config import ConfigFile, Persistent, ReturnRegister, VpConfig, serialize_config
from vpfuzz.guest.asm import assemble
from vpfuzz.guest.bundles import build
from vpfuzz.harness.executor import Deploy, Harness, Mode
from vpfuzz.harness.process import HandshakeError, ProcessVp
from vpfuzz.harness.results import CrashReason, ExitKind
from vpfuzz.harness.vp import EmbeddedVp
from vpfuzz.memory import ConfigError, FaultKind


def fresh(config, data):
    vp = EmbeddedVp(config)
    return vp, vp.run(data)


def same_result(a, b):
    return (a.outcome() == b.outcome() and a.instructions == b.instructions
            and a.probe_reads == b.probe_reads and np.array_equal(a.coverage, b.coverage))


def spin_config(**kw):
    image, sym = assemble("main: j main\nmain_return: ecall", 0x1000)
    return VpConfig(image=image, crash_mode=ReturnRegister(sym["main_return"]), **kw)


# -- persistent mode bookkeeping ---------------------------------------------

def test_hundred_ok_runs_one_spawn(password):
    with Harness(password.config) as h:
        results = [h.run_case(b"xyzzy\n") for _ in range(100)]
    assert h.spawns == 1 and len(results) == 100
    assert all(r.exit_kind == ExitKind.OK for r in results)


def test_crash_at_run_50_respawns_once(password):
    inputs = [b"nope\n"] * 100
    inputs[49] = b"hello\n"
    with Harness(password.config) as h:
        kinds = [h.run_case(d).exit_kind for d in inputs]
    assert h.spawns == 2
    assert kinds.count(ExitKind.CRASH) == 1 and kinds[49] == ExitKind.CRASH


def test_restart_mode_spawns_per_case(password):
    with Harness(password.config, mode=Mode.RESTART) as h:
        for _ in range(5):
            h.run_case(b"a\n")
    assert h.spawns == 5 and len(h.startup_ms) == 5


def test_fresh_vp_refuses_second_run_without_snapshot():
    cfg = replace(build("always_ok").config, persistent=None)
    vp = EmbeddedVp(cfg)
    vp.run(b"")
    with pytest.raises(RuntimeError):
        vp.run(b"")


# -- snapshot fidelity --------------------------------------------------------

@pytest.mark.parametrize("name,inputs", [
    ("password", [b"hello\n", b"hellp\n", b"a" * 200, b"", b"he\n"]),
    ("caesar_debug", [b"zzzz\n", b"abc\n", b"x" * 130, b"q\n"]),
    ("echo_loop", [b"a" * 70 + b"\0", b"bb\0", b"c"]),
    ("fault_write", [b"\xa5", b"\x01", b"\xa5"]),
])
def test_restored_run_equals_fresh_run(name, inputs):
    bundle = build(name)
    vp = EmbeddedVp(bundle.config)
    for data in inputs:
        # a crash leaves memory untrusted, so the harness would respawn there
        if vp.runs and vp.snapshot is None:
            vp = EmbeddedVp(bundle.config)
        got = vp.run(data)
        ref_vp, want = fresh(bundle.config, data)
        assert same_result(got, want), data
        assert np.array_equal(vp.memory.data, ref_vp.memory.data)
        if got.exit_kind == ExitKind.CRASH:
            vp = EmbeddedVp(bundle.config)


def test_snapshot_taken_at_entry(password):
    vp = EmbeddedVp(password.config)
    vp.run(b"x\n")
    assert vp.snapshot.taken_at_pc == password.symbols["main"]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.binary(max_size=12).map(lambda b: b + b"\n"), min_size=1, max_size=12))
def test_modes_agree(inputs):
    bundle = build("password", password="abc")
    runs = {}
    for mode in (Mode.RESTART, Mode.PERSISTENT):
        with Harness(bundle.config, mode=mode) as h:
            runs[mode] = [h.run_case(d) for d in inputs]
    for a, b in zip(runs[Mode.RESTART], runs[Mode.PERSISTENT]):
        assert same_result(a, b)


def test_jump_only_reenters_without_restore():
    bundle = build("echo_loop")
    cfg = replace(bundle.config, persistent=Persistent(bundle.symbols["main"], bundle.symbols["main_return"], True))
    vp = EmbeddedVp(cfg)
    first = vp.run(b"ab\0")
    second = vp.run(b"ab\0")
    assert first.exit_kind == second.exit_kind == ExitKind.OK
    assert vp.snapshot is None and vp.runs == 2


# -- exit classification ------------------------------------------------------

def test_three_crash_modes(password, handler_guest):
    pw = fresh(password.config, b"hello\n")[1]
    hd = fresh(handler_guest.config, b"\x80")[1]
    fw = fresh(build("fault_write").config, b"\xa5")[1]
    assert (pw.crash_reason, pw.exit_value) == (CrashReason.RETURN_VALUE_NONZERO, 1)
    assert (hd.crash_reason, hd.exit_value) == (CrashReason.ERROR_HANDLER_REACHED, handler_guest.symbols["error_handler"])
    assert fw.crash_reason == CrashReason.HARDWARE_FAULT and fw.fault == FaultKind.BUS_ERROR
    assert len({pw.reason_tag, hd.reason_tag, fw.reason_tag}) == 3


def test_unreachable_exit_times_out():
    res = fresh(spin_config(max_instructions=10_000), b"")[1]
    assert res.exit_kind == ExitKind.TIMEOUT and res.instructions == 10_000


def test_wall_clock_timeout_embedded():
    cfg = spin_config(max_instructions=10**12, wall_clock_timeout_ms=200)
    t0 = time.perf_counter()
    res = fresh(cfg, b"")[1]
    assert res.exit_kind == ExitKind.TIMEOUT
    assert time.perf_counter() - t0 < 5


def test_guest_ebreak_is_error_handler_crash():
    image, sym = assemble("ebreak\nmain_return: ecall", 0x1000)
    cfg = VpConfig(image=image, crash_mode=ReturnRegister(sym["main_return"]))
    res = fresh(cfg, b"")[1]
    assert res.crash_reason == CrashReason.ERROR_HANDLER_REACHED and res.exit_value == 0x1000


def test_bad_config_fails_before_running():
    with pytest.raises(ConfigError):
        Harness(VpConfig(image=b"\x13\0\0\0"))


# -- process deployment -------------------------------------------------------

def test_process_vp_matches_embedded(password):
    with Harness(password.config, mode=Mode.PERSISTENT, deploy=Deploy.PROCESS) as h:
        got = [h.run_case(d) for d in (b"hellp\n", b"hello\n", b"abc\n")]
        assert h.spawns == 2  # respawn after the crash
    for data, res in zip((b"hellp\n", b"hello\n", b"abc\n"), got):
        want = fresh(password.config, data)[1]
        assert res.outcome() == want.outcome() and res.instructions == want.instructions
        assert np.array_equal(res.coverage, want.coverage)
        assert res.probe_reads is None


def test_process_vp_wall_clock_timeout():
    cfg = spin_config(max_instructions=10**12, wall_clock_timeout_ms=300)
    with Harness(cfg, mode=Mode.PERSISTENT, deploy=Deploy.PROCESS) as h:
        t0 = time.perf_counter()
        res = h.run_case(b"")
        assert res.exit_kind == ExitKind.TIMEOUT
        assert time.perf_counter() - t0 < 10


def test_process_rejects_bad_config_text():
    with pytest.raises(HandshakeError, match="unknown key"):
        ProcessVp("[guest]\nbogus = 1\n")


def test_process_config_text_round_trips(password, tmp_path):
    h = Harness(password.config, deploy=Deploy.PROCESS, workdir=str(tmp_path))
    assert (tmp_path / "guest.bin").read_bytes() == password.binary
    assert "image = " + str(tmp_path / "guest.bin") in h._config_text
    assert serialize_config(ConfigFile(replace(password.config, image_path=str(tmp_path / "guest.bin"), image=None))) \
        == h._config_text
    h.close()
