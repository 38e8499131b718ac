"""Stage timings and restart-vs-persistent throughput."""

import random
import statistics
import time
from dataclasses import dataclass

from vpfuzz.coverage import classify_counts, digest
from vpfuzz.harness.executor import Deploy, Harness, Mode

BENCH_HEADER = "iteration,mode,startup_ms,config_ms,exec_ms"
SUMMARY_HEADER = "stage,startup_ms,config_ms,exec_ms"

# Published bare-metal measurements of two SystemC VPs (AVP, SIM-A), shown
# beside ours for context only.
REFERENCE_STAGES_MS = {
    "AVP": {"startup_ms": 21.0, "config_ms": 0.2, "exec_ms": 0.9},
    "SIM-A": {"startup_ms": 120.0, "config_ms": 0.2, "exec_ms": 0.4},
}
REFERENCE_EXECS_PER_SEC = {
    "AVP": {"restart": 35.0, "persistent": 1950.0},
    "SIM-A": {"restart": 7.0, "persistent": 3100.0},
}


@dataclass
class StageRow:
    iteration: int
    mode: str
    startup_ms: float
    config_ms: float
    exec_ms: float

    def csv(self):
        return f"{self.iteration},{self.mode},{self.startup_ms:.3f},{self.config_ms:.3f},{self.exec_ms:.3f}"


@dataclass
class Throughput:
    mode: str
    execs: int
    seconds: float
    outcomes: list
    digests: list

    @property
    def execs_per_sec(self):
        return self.execs / self.seconds if self.seconds > 0 else float("inf")


def fixed_corpus(n=1000, seed=0, word=b"hello"):
    """Deterministic mixed corpus: partial and full matches of ``word``,
    lowercase noise and raw bytes, some without a newline."""
    rng = random.Random(seed)
    lower = bytes(range(0x61, 0x7B))
    corpus = []
    for _ in range(n):
        r = rng.random()
        if r < 0.05:
            data = word + b"\n"
        elif r < 0.45:
            k = rng.randint(0, len(word))
            tail = bytes(rng.choice(lower) for _ in range(rng.randint(0, 8)))
            data = word[:k] + tail + b"\n"
        elif r < 0.8:
            data = bytes(rng.randrange(256) for _ in range(rng.randint(0, 40)))
        else:
            data = bytes(rng.choice(lower) for _ in range(rng.randint(1, 12)))
        corpus.append(data)
    return corpus


def stage_timings(config, iterations=50, data=b"aaaaa\n", modes=("restart", "persistent")):
    """Per-iteration startup/config/exec times.

    Restart spawns one VP process per iteration.  Persistent keeps one
    in-process VP, so only its first iteration pays startup and config.
    """
    rows = []
    for mode in modes:
        if mode == "restart":
            h = Harness(config, Mode.RESTART, Deploy.PROCESS)
            try:
                for i in range(iterations):
                    vp = h.spawn()
                    t0 = time.perf_counter()
                    vp.run(data)
                    exec_ms = (time.perf_counter() - t0) * 1e3
                    vp.close()
                    rows.append(StageRow(i, mode, vp.startup_ms, vp.config_ms, exec_ms))
            finally:
                h.close()
        elif mode == "persistent":
            h = Harness(config, Mode.PERSISTENT, Deploy.EMBEDDED)
            vp = h.spawn()
            for i in range(iterations):
                t0 = time.perf_counter()
                vp.run(data)
                exec_ms = (time.perf_counter() - t0) * 1e3
                first = i == 0
                rows.append(StageRow(i, mode, vp.startup_ms if first else 0.0,
                                     vp.config_ms if first else 0.0, exec_ms))
            vp.close()
        else:
            raise ValueError(f"unknown bench mode {mode!r}")
    return rows


def summarize(rows):
    """Mean of each stage per mode, as ``stage,startup_ms,config_ms,exec_ms`` rows."""
    out = {}
    for mode in dict.fromkeys(r.mode for r in rows):
        sel = [r for r in rows if r.mode == mode]
        out[mode] = {
            "startup_ms": statistics.fmean(r.startup_ms for r in sel),
            "config_ms": statistics.fmean(r.config_ms for r in sel),
            "exec_ms": statistics.fmean(r.exec_ms for r in sel),
        }
    return out


def measure_throughput(config, corpus, mode, deploy=None):
    """Run the whole corpus through one harness and time it end to end."""
    mode = Mode(mode)
    if deploy is None:
        deploy = Deploy.PROCESS if mode == Mode.RESTART else Deploy.EMBEDDED
    outcomes, digests = [], []
    with Harness(config, mode, deploy) as h:
        t0 = time.perf_counter()
        for data in corpus:
            r = h.run_case(data)
            outcomes.append(r.outcome())
            digests.append(digest(classify_counts(r.coverage)))
        seconds = time.perf_counter() - t0
    return Throughput(mode.value, len(corpus), seconds, outcomes, digests)


def render_summary(stages, throughputs=None):
    lines = ["stage timings (mean ms)", SUMMARY_HEADER]
    for mode, s in stages.items():
        lines.append(f"{mode},{s['startup_ms']:.3f},{s['config_ms']:.3f},{s['exec_ms']:.3f}")
    if throughputs:
        lines += ["", "throughput"]
        for t in throughputs.values():
            lines.append(f"{t.mode}: {t.execs} execs in {t.seconds:.2f} s = {t.execs_per_sec:.1f} execs/s")
        if "restart" in throughputs and "persistent" in throughputs:
            ratio = throughputs["persistent"].execs_per_sec / throughputs["restart"].execs_per_sec
            lines.append(f"speedup persistent/restart: {ratio:.1f}x")
    lines += ["", "reference bare-metal SystemC VPs (ms: startup, config, exec; execs/s: restart, persistent)"]
    for vp, s in REFERENCE_STAGES_MS.items():
        e = REFERENCE_EXECS_PER_SEC[vp]
        lines.append(f"{vp}: {s['startup_ms']:g}, {s['config_ms']:g}, {s['exec_ms']:g}; "
                     f"{e['restart']:g} -> {e['persistent']:g} execs/s "
                     f"({e['persistent'] / e['restart']:.0f}x)")
    return "\n".join(lines) + "\n"
