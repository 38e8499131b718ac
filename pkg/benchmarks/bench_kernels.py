"""Compare the numba kernels with the plain-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

The fallback is selected per process by VPFUZZ_DISABLE_JIT=1, so each
backend is timed in its own child interpreter.  Compile time is excluded:
every kernel is warmed up before timing.
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best * 1e6


def measure(repeat):
    import numpy as np

    from vpfuzz._jit import backend_name
    from vpfuzz.coverage import classify_counts, has_new_bits
    from vpfuzz.guest.bundles import build
    from vpfuzz.harness.vp import EmbeddedVp

    rng = np.random.default_rng(0)
    raw = np.zeros(1 << 16, np.uint8)
    raw[rng.integers(0, 1 << 16, 64)] = rng.integers(1, 256, 64).astype(np.uint8)
    classified = classify_counts(raw)
    virgin = np.zeros_like(classified)

    vp = EmbeddedVp(build("password").config, snapshot_at_reset=True).configure()
    long_input = b"hellp" + b"a" * 120 + b"\n"

    results = {
        "backend": backend_name(),
        "classify_counts_us": _time(lambda: classify_counts(raw), repeat),
        "has_new_bits_us": _time(lambda: has_new_bits(virgin.copy(), classified), repeat),
        "password_run_us": _time(lambda: vp.run(b"hellp\n"), repeat),
        "password_long_run_us": _time(lambda: vp.run(long_input), max(1, repeat // 10)),
    }
    results["instructions_long"] = vp.run(long_input).instructions
    return results


def run_child(disable_jit, repeat):
    env = dict(os.environ, VPFUZZ_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--child", action="store_true")
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return
    jit = run_child(False, args.repeat)
    ref = run_child(True, max(1, args.repeat // 10))
    print(f"{'kernel':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for key in ("classify_counts_us", "has_new_bits_us", "password_run_us", "password_long_run_us"):
        a, b = jit[key], ref[key]
        print(f"{key[:-3]:<24}{a:>12.1f}{b:>12.1f}{b / a:>9.1f}x")
    print(f"backends: {jit['backend']} vs {ref['backend']}; "
          f"long run = {jit['instructions_long']} instructions")


if __name__ == "__main__":
    main()
