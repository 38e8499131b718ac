"""Exit criteria.  Each test prints one ``[criterion N] PASS|FAIL`` line.

Run just these with ``pytest tests/test_acceptance.py -v``.  The restart
half of criteria 2 and 4 spawns 1,000 VP processes and takes a few minutes.
"""

import random
import time

import numpy as np
import pytest

from tests.test_coverage import _random_pair, ref_bucket, ref_has_new_bits
from tests.test_isa import PROGRAMS, _run_both
from tests.test_probe import _check_stream, _tracked_sets
from vpfuzz import bench, isa
from vpfuzz.coverage import MAP_SIZE, classify_counts, has_new_bits
from vpfuzz.fuzzer.campaign import fuzz_campaign
from vpfuzz.fuzzer.triage import CrashStore
from vpfuzz.guest.bundles import build, build_password_guest
from vpfuzz.harness.executor import Harness
from vpfuzz.harness.protocol import (
    MAP_SIZE as FRAME_MAP_SIZE, Configure, Error, NeedMoreData, ProtocolError, Ready, Result, Run,
    Shutdown, decode_frame, decode_stream, encode_frame,
)
from vpfuzz.harness.results import CrashReason, ExitKind
from vpfuzz.harness.vp import EmbeddedVp

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_c1_password_crash_found_in_persistent_mode(verdict):
    bundle = build_password_guest("hello", 1)
    counts = []
    for k in range(6):
        res = EmbeddedVp(bundle.config).run(b"hello"[:k] + b"\n")
        counts.append(int(np.count_nonzero(res.coverage)))
    ladder = all(a < b for a, b in zip(counts, counts[1:]))

    t0 = time.perf_counter()
    rep = fuzz_campaign(bundle.config, max_seconds=600, stop_after_crashes=1, rng_seed=0)
    wall = time.perf_counter() - t0
    found = [c for c in rep.crashes if c.reason == "return_value:1"]
    ok = ladder and bool(found) and wall <= 600
    detail = (f"ladder nonzero counts {counts}; "
              + (f"crash {found[0].stem()} input={found[0].input!r} after {rep.stats.total_execs} execs, "
                 f"{wall:.1f} s wall" if found else f"no crash in {wall:.1f} s"))
    verdict(1, ok, detail)


@pytest.fixture(scope="module")
def corpus_runs(password_module):
    corpus = bench.fixed_corpus(1000, seed=0)
    restart = bench.measure_throughput(password_module.config, corpus, "restart")
    persistent = bench.measure_throughput(password_module.config, corpus, "persistent")
    return restart, persistent


@pytest.fixture(scope="module")
def password_module():
    return build("password")


def test_c2_persistent_speedup(verdict, corpus_runs):
    restart, persistent = corpus_runs
    ratio = persistent.execs_per_sec / restart.execs_per_sec
    ref = bench.REFERENCE_EXECS_PER_SEC
    context = "; ".join(f"{vp} {v['restart']:g}->{v['persistent']:g}" for vp, v in ref.items())
    verdict(2, ratio >= 10, f"restart {restart.execs_per_sec:.1f} execs/s, persistent "
                            f"{persistent.execs_per_sec:.1f} execs/s, ratio {ratio:.0f}x >= 10x "
                            f"(published SystemC VPs: {context})")


def test_c3_startup_dominates_restart(verdict, password_module):
    rows = bench.stage_timings(password_module.config, 50, modes=("restart",))
    s = bench.summarize(rows)["restart"]
    ref = bench.REFERENCE_STAGES_MS
    context = "; ".join(f"{vp} {v['startup_ms']:g}/{v['exec_ms']:g}" for vp, v in ref.items())
    verdict(3, s["startup_ms"] > s["exec_ms"],
            f"mean startup {s['startup_ms']:.2f} ms > mean exec {s['exec_ms']:.2f} ms over 50 restarts "
            f"(config {s['config_ms']:.2f} ms; published startup/exec ms: {context})")


def test_c4_modes_equivalent(verdict, corpus_runs):
    restart, persistent = corpus_runs
    kinds_equal = [o[0] for o in restart.outcomes] == [o[0] for o in persistent.outcomes]
    outcomes_equal = restart.outcomes == persistent.outcomes
    digests_equal = restart.digests == persistent.digests
    mix = {ExitKind(k).name: [o[0] for o in restart.outcomes].count(k) for k in set(o[0] for o in restart.outcomes)}
    verdict(4, kinds_equal and outcomes_equal and digests_equal and len(restart.outcomes) == 1000,
            f"1000 inputs, exit kinds equal={kinds_equal}, outcomes equal={outcomes_equal}, "
            f"coverage digests equal={digests_equal}; mix {mix}")


def test_c5_campaign_determinism(verdict, tmp_path, password_module):
    texts, trajectories = [], []
    for d in ("a", "b"):
        fuzz_campaign(password_module.config, max_execs=200_000, rng_seed=1234, out_dir=str(tmp_path / d))
        texts.append((tmp_path / d / "report.txt").read_bytes())
        rows = (tmp_path / d / "stats.csv").read_text().splitlines()[1:]
        # unix_ms is wall time by definition; everything after it must match
        trajectories.append([r.split(",", 1)[1] for r in rows])
    ok = texts[0] == texts[1] and trajectories[0] == trajectories[1]
    verdict(5, ok, f"report.txt identical={texts[0] == texts[1]} ({len(texts[0])} bytes), "
                   f"stats trajectory identical={trajectories[0] == trajectories[1]} ({len(trajectories[0])} rows)")


def test_c6_probe_properties(verdict):
    rng = random.Random(6)
    for _ in range(10_000):
        _check_stream(rng, _tracked_sets(rng))
    for _ in range(10_000):
        _check_stream(rng, [])
    verdict(6, True, "completeness, conservation and value checks held on 10,000 streams with tracked "
                     "ranges; transparency held on 10,000 streams without")


def test_c7_coverage_oracles(verdict):
    raw = np.tile(np.arange(256, dtype=np.uint8), MAP_SIZE // 256)
    out = classify_counts(raw)
    classify_ok = all(int(out[v]) == ref_bucket(v) for v in range(256)) and \
        np.array_equal(out, np.tile(out[:256], MAP_SIZE // 256))
    rng = np.random.default_rng(77)
    agree = 0
    for _ in range(1000):
        g, loc = _random_pair(rng)
        nz = np.flatnonzero(g | loc)
        expected = ref_has_new_bits(g[nz].tolist(), loc[nz].tolist())
        agree += int(has_new_bits(g, loc)) == expected
    verdict(7, classify_ok and agree == 1000,
            f"classify_counts exact on all 256 values={classify_ok}; has_new_bits agreed on {agree}/1000 pairs")


def test_c8_isa_differential(verdict):
    mismatched = []
    for name, src in sorted(PROGRAMS.items()):
        ref, cpu, res = _run_both(src)
        if res.stop != isa.StopKind.EXITED or [cpu.reg(i) for i in range(32)] != ref.x or cpu.pc != ref.pc \
                or cpu.instr_count != ref.steps:
            mismatched.append(name)
    verdict(8, len(PROGRAMS) >= 20 and not mismatched,
            f"{len(PROGRAMS) - len(mismatched)}/{len(PROGRAMS)} programs match the reference register file"
            + (f"; mismatches {mismatched}" if mismatched else ""))


def test_c9_crash_modes_distinct(verdict):
    cases = [("handler_guest", b"\xff", CrashReason.ERROR_HANDLER_REACHED),
             ("password", b"hello\n", CrashReason.RETURN_VALUE_NONZERO),
             ("fault_write", b"\xa5", CrashReason.HARDWARE_FAULT)]
    store = CrashStore()
    seen = []
    for name, data, reason in cases:
        with Harness(build(name).config) as h:
            for _ in range(2):  # the repeat must dedup
                r = h.run_case(data)
                seen.append(r.crash_reason == reason)
                store.triage(r, data)
    pw = next(c for c in store if c.reason.startswith("return_value"))
    ok = all(seen) and len(store) == 3 and store.events == 6 and pw.exit_value == 1
    verdict(9, ok, "unique crashes: " + ", ".join(c.reason for c in store) + f" from {store.events} events")


def _random_message(rng):
    kind = rng.randrange(6)
    if kind == 0:
        return Configure("".join(chr(rng.randrange(32, 0x3000)) for _ in range(rng.randrange(40))))
    if kind == 1:
        return Ready()
    if kind == 2:
        return Run(rng.randbytes(rng.randrange(300)))
    if kind == 3:
        cov = bytearray(FRAME_MAP_SIZE)
        for _ in range(rng.randrange(10)):
            cov[rng.randrange(FRAME_MAP_SIZE)] = rng.randrange(1, 256)
        return Result(rng.randrange(4), rng.randrange(4), rng.getrandbits(32), rng.getrandbits(64),
                      rng.getrandbits(64), bytes(cov))
    if kind == 4:
        return Shutdown()
    return Error("err " + str(rng.random()))


def test_c10_protocol_round_trip(verdict):
    rng = random.Random(10)
    msgs = [_random_message(rng) for _ in range(10_000)]
    identity = sum(decode_frame(encode_frame(m)) == (m, len(encode_frame(m))) for m in msgs)

    # truncate a stream of frames at random points: the error must name the
    # start of the broken frame, the same way every time
    truncations_ok = 0
    for _ in range(500):
        picked = rng.sample(msgs, 4)
        frames = [encode_frame(m) for m in picked]
        wire = b"".join(frames)
        cut = rng.randrange(len(wire))
        starts = np.cumsum([0] + [len(f) for f in frames])
        expected = int(starts[starts <= cut][-1])
        try:
            decode_stream(wire[:cut])
            ok = cut == expected  # cut on a boundary leaves whole frames
        except ProtocolError as exc:
            ok = exc.offset == expected
            try:
                decode_frame(wire[:cut], expected)
            except NeedMoreData:
                pass
            else:
                ok = False
        truncations_ok += ok
    verdict(10, identity == 10_000 and truncations_ok == 500,
            f"{identity}/10000 frames round-tripped; {truncations_ok}/500 truncations rejected at the frame start")
