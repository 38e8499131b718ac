"""Restart and persistent execution on top of embedded or process VPs."""

import enum
import os
import tempfile
from dataclasses import replace

from vpfuzz._jit import JIT_ENABLED
from vpfuzz.config import ConfigFile, VpConfig, serialize_config
from vpfuzz.harness.process import ProcessVp
from vpfuzz.harness.results import ExitKind, RunResult
from vpfuzz.harness.vp import EmbeddedVp


class Mode(str, enum.Enum):
    RESTART = "restart"
    PERSISTENT = "persistent"


class Deploy(str, enum.Enum):
    EMBEDDED = "embedded"
    PROCESS = "process"


class Harness:
    """Supervises VP instances on behalf of the fuzzer.

    Restart mode spawns a fresh VP for every test case.  Persistent mode
    keeps one VP and lets it restore its entry snapshot between cases; a
    crash (or a dead/hung child) forces a full respawn.

    ``jit`` picks the kernel backend of process-mode children.  By default a
    restart child runs the plain numpy kernels, because one execution cannot
    pay back loading compiled code; a persistent child inherits ours.
    """

    def __init__(self, config: VpConfig, mode=Mode.PERSISTENT, deploy=Deploy.EMBEDDED,
                 jit=None, workdir=None):
        self.config = config
        self.mode = Mode(mode)
        self.deploy = Deploy(deploy)
        if jit is None:
            jit = JIT_ENABLED and self.mode == Mode.PERSISTENT
        self.jit = jit
        self.spawns = 0
        self.runs = 0
        self.startup_ms = []
        self.config_ms = []
        self._vp = None
        self._tmp = None
        if self.deploy == Deploy.PROCESS:
            self._config_text = self._process_config_text(workdir)
        else:
            # fail fast on bad configs, before any VP exists
            config.validate()

    def _process_config_text(self, workdir):
        cfg = self.config
        cfg.validate()
        if cfg.image is not None or not cfg.image_path:
            if workdir is None:
                self._tmp = tempfile.TemporaryDirectory(prefix="vpfuzz-")
                workdir = self._tmp.name
            path = os.path.join(workdir, "guest.bin")
            with open(path, "wb") as fh:
                fh.write(cfg.load_image())
            cfg = replace(cfg, image_path=path, image=None)
        else:
            cfg = replace(cfg, image_path=os.path.abspath(cfg.image_path))
        return serialize_config(ConfigFile(cfg))

    def spawn(self):
        if self.deploy == Deploy.PROCESS:
            vp = ProcessVp(self._config_text, jit=self.jit, timeout_ms=self.config.wall_clock_timeout_ms)
        else:
            vp = EmbeddedVp(self.config, snapshot_at_reset=self.mode == Mode.PERSISTENT).configure()
        self.spawns += 1
        self.startup_ms.append(vp.startup_ms)
        self.config_ms.append(vp.config_ms)
        return vp

    def run_case(self, data) -> RunResult:
        if self.mode == Mode.RESTART:
            vp = self.spawn()
            try:
                result = vp.run(data)
            finally:
                vp.close()
        else:
            if self._vp is None:
                self._vp = self.spawn()
            result = self._vp.run(data)
            if result.exit_kind == ExitKind.CRASH or not getattr(self._vp, "alive", True):
                self._vp.close()
                self._vp = None
        self.runs += 1
        return result

    def close(self):
        if self._vp is not None:
            self._vp.close()
            self._vp = None
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
