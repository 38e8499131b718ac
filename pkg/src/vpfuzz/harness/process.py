"""Harness side of a VP running as a child process."""

import os
import select
import subprocess
import sys
import time

import numpy as np

from vpfuzz.harness import protocol as proto
from vpfuzz.harness.results import CrashReason, ExitKind, RunResult
from vpfuzz.memory import FAULT_BUS_ERROR

BOOT_TIMEOUT_S = 60.0


class VpDied(Exception):
    """The child closed its output or sent something unexpected."""


class HandshakeError(RuntimeError):
    pass


class ProcessVp:
    """Spawn ``python -m vpfuzz.harness.server`` and configure it.

    ``jit`` chooses the child's kernel backend; ``startup_ms`` covers spawn
    to first READY, ``config_ms`` CONFIGURE to READY.
    """

    def __init__(self, config_text, jit=False, timeout_ms=2000):
        self.timeout_ms = timeout_ms
        self.reader = proto.FrameReader()
        env = dict(os.environ)
        env["VPFUZZ_DISABLE_JIT"] = "0" if jit else "1"
        t0 = time.perf_counter()
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "vpfuzz.harness.server"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, env=env, bufsize=0,
        )
        self._fd = self.proc.stdout.fileno()
        try:
            self._expect_ready(BOOT_TIMEOUT_S, "boot")
            t1 = time.perf_counter()
            self._send(proto.Configure(config_text))
            self._expect_ready(BOOT_TIMEOUT_S, "configure")
        except Exception:
            self.kill()
            raise
        t2 = time.perf_counter()
        self.startup_ms = (t1 - t0) * 1e3
        self.config_ms = (t2 - t1) * 1e3

    @property
    def alive(self):
        return self.proc.poll() is None

    def _send(self, msg):
        try:
            self.proc.stdin.write(proto.encode_frame(msg))
        except (BrokenPipeError, OSError) as exc:
            raise VpDied(f"write failed: {exc}") from None

    def _recv(self, timeout_s):
        deadline = time.perf_counter() + timeout_s
        while True:
            msg = self.reader.next()
            if msg is not None:
                return msg
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                raise TimeoutError
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                raise TimeoutError
            chunk = os.read(self._fd, 1 << 17)
            if not chunk:
                raise VpDied("VP closed its output")
            self.reader.feed(chunk)

    def _expect_ready(self, timeout_s, stage):
        try:
            msg = self._recv(timeout_s)
        except TimeoutError:
            raise HandshakeError(f"no READY from VP during {stage}") from None
        except VpDied as exc:
            raise HandshakeError(f"VP died during {stage}: {exc}") from None
        if isinstance(msg, proto.Error):
            raise HandshakeError(f"VP rejected {stage}: {msg.text}")
        if not isinstance(msg, proto.Ready):
            raise HandshakeError(f"expected READY during {stage}, got {type(msg).__name__}")

    def run(self, data) -> RunResult:
        """Execute one input.  Death or wall-clock timeout kills the child."""
        t0 = time.perf_counter()
        try:
            self._send(proto.Run(bytes(data)))
            msg = self._recv(self.timeout_ms / 1e3)
        except TimeoutError:
            self.kill()
            return RunResult(ExitKind.TIMEOUT, coverage=np.zeros(proto.MAP_SIZE, np.uint8),
                             exec_us=int((time.perf_counter() - t0) * 1e6))
        except (VpDied, proto.ProtocolError):
            self.kill()
            return RunResult(ExitKind.CRASH, CrashReason.HARDWARE_FAULT, FAULT_BUS_ERROR,
                             coverage=np.zeros(proto.MAP_SIZE, np.uint8),
                             exec_us=int((time.perf_counter() - t0) * 1e6))
        if not isinstance(msg, proto.Result):
            self.kill()
            raise VpDied(f"expected RESULT, got {msg}")
        return RunResult(
            ExitKind(msg.exit_kind), CrashReason(msg.crash_reason), msg.exit_value,
            coverage=np.frombuffer(msg.coverage, dtype=np.uint8),
            instructions=msg.instructions, exec_us=msg.exec_us,
        )

    def close(self):
        if not self.alive:
            return
        try:
            self._send(proto.Shutdown())
            self.proc.stdin.close()
            self.proc.wait(timeout=2)
        except (VpDied, OSError, subprocess.TimeoutExpired):
            self.kill()
        finally:
            self.proc.stdout.close()

    def kill(self):
        if self.alive:
            self.proc.kill()
        self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
