"""vpfuzz command line: run, fuzz, bench and guest build.

Exit statuses
  0  run: OK; fuzz/bench/guest: finished (fuzz also after Ctrl-C)
  1  run: CRASH
  2  run: TIMEOUT or INPUT_EXHAUSTED
  3  configuration or usage error (bad config, unreadable file, bad flags,
     existing fuzz output directory without --force, unwritable output)
  4  fuzz: the harness failed; a partial report was written
"""

import argparse
import os
import sys

from vpfuzz import __version__
from vpfuzz.config import ConfigError, ConfigFile, load_config, serialize_config
from vpfuzz.coverage import classify_counts, digest, nonzero_indices
from vpfuzz.harness.results import ExitKind

EXIT_OK, EXIT_CRASH, EXIT_NO_VERDICT, EXIT_CONFIG, EXIT_HARNESS = 0, 1, 2, 3, 4

RUN_STATUS = {
    ExitKind.OK: EXIT_OK,
    ExitKind.CRASH: EXIT_CRASH,
    ExitKind.TIMEOUT: EXIT_NO_VERDICT,
    ExitKind.INPUT_EXHAUSTED: EXIT_NO_VERDICT,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which would read as TIMEOUT
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def cmd_run(args):
    from vpfuzz.harness.vp import EmbeddedVp

    cfg = load_config(args.config).vp
    data = _read_bytes(args.input)
    vp = EmbeddedVp(cfg, trace_capacity=args.trace_limit if args.trace_probe else 0)
    result = vp.run(data)
    if args.trace_probe:
        for ev in vp.bus.probe_events():
            print(ev.format())
    classified = classify_counts(result.coverage)
    print(result.describe())
    print(f"instructions: {result.instructions}")
    print(f"probe_reads: {result.probe_reads}")
    print(f"coverage_digest: {digest(classified):016x}")
    if args.dump_coverage:
        idx = nonzero_indices(result.coverage)
        print(f"coverage_nonzero: {len(idx)}")
        print("coverage_indices: " + " ".join(f"{i}:{result.coverage[i]}" for i in idx))
    return RUN_STATUS[result.exit_kind]


def cmd_fuzz(args):
    from vpfuzz.fuzzer.campaign import CampaignAborted, fuzz_campaign, load_seeds

    cf = load_config(args.config)
    out_dir = args.out_dir or cf.fuzz.out_dir
    if not out_dir:
        raise ConfigError("no output directory: pass --out-dir or set out_dir in [fuzz]")
    seed_dir = args.seed_dir or cf.fuzz.seed_dir
    seeds = load_seeds(seed_dir) if seed_dir else None
    rng_seed = cf.fuzz.rng_seed if args.rng_seed is None else args.rng_seed
    try:
        rep = fuzz_campaign(cf.vp, seeds, max_execs=args.max_execs, max_seconds=args.max_seconds,
                            mode=args.mode, deploy=args.deploy, rng_seed=rng_seed, out_dir=out_dir,
                            force=args.force, stop_after_crashes=args.stop_after_crashes)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CampaignAborted as exc:
        print(f"error: harness failure: {exc}; partial report in {out_dir}", file=sys.stderr)
        return EXIT_HARNESS
    st = rep.stats
    print(f"stop_reason: {rep.stop_reason}")
    print(f"total_execs: {st.total_execs}  queue_len: {st.queue_len}  crashes_unique: {st.crashes_unique}")
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"report: {os.path.join(out_dir, 'report.txt')}")
    return EXIT_OK


def cmd_bench(args):
    from vpfuzz import bench

    cfg = load_config(args.config).vp
    data = _read_bytes(args.input) if args.input else b"aaaaa\n"
    modes = ("restart", "persistent") if args.mode == "both" else (args.mode,)
    rows = bench.stage_timings(cfg, args.iterations, data, modes)
    throughputs = {}
    if args.corpus_size > 0:
        corpus = bench.fixed_corpus(args.corpus_size, seed=args.corpus_seed)
        for mode in modes:
            throughputs[mode] = bench.measure_throughput(cfg, corpus, mode)
    summary = bench.render_summary(bench.summarize(rows), throughputs)
    csv_text = bench.BENCH_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text + "\n")
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_guest_build(args):
    from vpfuzz.guest import bundles

    kwargs = {}
    if args.name == "password":
        kwargs = {"password": args.password, "shift": args.shift, "overflow": args.overflow}
    elif args.name == "caesar_debug":
        kwargs = {"shift": args.shift}
    try:
        b = bundles.build(args.name, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    os.makedirs(args.output, exist_ok=True)
    stem = os.path.join(args.output, b.name)
    with open(stem + ".bin", "wb") as fh:
        fh.write(b.binary)
    with open(stem + ".sym", "w") as fh:
        fh.write(b.symbol_text())
    with open(stem + ".s", "w") as fh:
        fh.write(b.source)
    with open(stem + ".cfg", "w") as fh:
        fh.write(serialize_config(ConfigFile(b.config)))
    print(f"wrote {stem}.bin ({len(b.binary)} bytes), {stem}.sym, {stem}.s, {stem}.cfg")
    return EXIT_OK


def cmd_guest_list(args):
    from vpfuzz.guest import bundles

    for name in bundles.BUILDERS:
        print(name)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="vpfuzz", description="Coverage-guided fuzzing of guests on a virtual prototype.",
                epilog=__doc__.split("\n", 1)[1], formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"vpfuzz {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="execute one input and report the outcome")
    r.add_argument("config")
    r.add_argument("input", help="file whose bytes feed the tracked peripheral reads")
    r.add_argument("--trace-probe", action="store_true", help="print every intercepted read")
    r.add_argument("--trace-limit", type=int, default=1 << 16, help="max PROBE lines (default 65536)")
    r.add_argument("--dump-coverage", action="store_true", help="print nonzero coverage map entries")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fuzz", help="run a fuzzing campaign")
    f.add_argument("config")
    f.add_argument("--mode", choices=("restart", "persistent"), default="persistent")
    f.add_argument("--deploy", choices=("embedded", "process"), default="embedded")
    f.add_argument("--max-execs", type=int)
    f.add_argument("--max-seconds", type=float)
    f.add_argument("--stop-after-crashes", type=int)
    f.add_argument("--out-dir")
    f.add_argument("--seed-dir")
    f.add_argument("--rng-seed", type=int)
    f.add_argument("--force", action="store_true", help="reuse an existing output directory")
    f.set_defaults(func=cmd_fuzz)

    b = sub.add_parser("bench", help="stage timings and restart/persistent throughput")
    b.add_argument("config")
    b.add_argument("--iterations", type=int, default=50)
    b.add_argument("--corpus-size", type=int, default=1000, help="0 skips the throughput run")
    b.add_argument("--corpus-seed", type=int, default=0)
    b.add_argument("--mode", choices=("both", "restart", "persistent"), default="both")
    b.add_argument("--input", help="input used for stage timings")
    b.add_argument("--out", help="write the per-iteration CSV here instead of stdout")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("guest", help="bundled guest programs")
    gsub = g.add_subparsers(dest="guest_command", required=True, parser_class=_Parser)
    gb = gsub.add_parser("build", help="assemble a guest and write .bin/.sym/.s/.cfg")
    gb.add_argument("name")
    gb.add_argument("-o", "--output", default=".")
    gb.add_argument("--password", default="hello")
    gb.add_argument("--shift", type=int, default=1)
    gb.add_argument("--overflow", action="store_true", help="password guest without the read cap")
    gb.set_defaults(func=cmd_guest_build)
    gl = gsub.add_parser("list", help="list bundled guests")
    gl.set_defaults(func=cmd_guest_list)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
