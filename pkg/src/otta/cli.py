"""Command line entry point: ``otta gen|train|run|sweep``."""

from __future__ import annotations

import argparse
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .data import DatasetFormatError, read_dataset, write_dataset
from .harness import CheckpointCache, Subjects, emit_report, make_benchmark, method, run_setting, sweep
from .nn import CheckpointError, read_checkpoint, write_checkpoint
from .training import train_source

log = logging.getLogger("otta")

_SESSION_FILE = re.compile(r"^(?P<subject>.+)_ses(?P<session>\d+)\.ottd$")


def _load_run(args) -> cfgmod.RunConfig:
    pairs = cfgmod.parse_pairs(Path(args.config).read_text()) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise cfgmod.ConfigError(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    return cfgmod.build(pairs)


def _subjects(run: cfgmod.RunConfig, data_dir: str | None) -> Subjects:
    if not data_dir:
        return make_benchmark(run.bench)
    found: dict[str, dict[int, Path]] = {}
    for p in sorted(Path(data_dir).glob("*.ottd")):
        m = _SESSION_FILE.match(p.name)
        if m:
            found.setdefault(m["subject"], {})[int(m["session"])] = p
    if not found:
        raise FileNotFoundError(f"no <subject>_ses<k>.ottd files in {data_dir}")
    return {s: [read_dataset(ps[k]) for k in sorted(ps)] for s, ps in found.items()}


def cmd_gen(args) -> int:
    run = _load_run(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, sessions in make_benchmark(run.bench).items():
        for k, ds in enumerate(sessions, 1):
            write_dataset(out / f"{name}_ses{k}.ottd", ds)
    (out / "benchmark.cfg").write_text(run.to_text())
    print(f"wrote {run.bench.n_subjects} subjects x {run.bench.n_sessions} sessions to {out}")
    return 0


def cmd_train(args) -> int:
    run = _load_run(args)
    domains = [read_dataset(p) for p in args.data]
    cfg = replace(run.train, delta=run.delta, alignment=run.adapt.alignment)
    net = train_source(domains, cfg, args.seed)
    write_checkpoint(args.out, net)
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_run(args) -> int:
    run = _load_run(args)
    subjects = _subjects(run, args.data_dir)
    ckpt = read_checkpoint(args.checkpoint) if args.checkpoint else None
    rep = run_setting(run.setting, subjects, run.train, method(run.adapt, run.delta), run.held_out, checkpoint=ckpt)
    emit_report(rep, args.out, include_timing=not args.no_timing)
    print(rep.summary())
    return 0


def cmd_sweep(args) -> int:
    run = _load_run(args)
    subjects = _subjects(run, args.data_dir)
    reps = sweep(args.axis, subjects, run.train, None if args.axis == "grid" else run.adapt, run.setting,
                 delta=args.delta, held_out=run.held_out, cache=CheckpointCache())
    emit_report(reps, args.out, include_timing=not args.no_timing)
    for rep in reps:
        print(rep.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otta", description="Online test-time adaptation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("gen", help="write the synthetic benchmark as dataset files")
    common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a source model on dataset files")
    common(t)
    t.add_argument("data", nargs="+")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="evaluate one method in one setting")
    common(r)
    r.add_argument("--data-dir", help="directory written by gen (default: generate from config)")
    r.add_argument("--checkpoint", help="use this model instead of training")
    r.add_argument("--out", required=True, help="report path (.json or .csv)")
    r.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="buffer-size, label-smoothing or method-grid sweep")
    common(s)
    s.add_argument("axis", choices=("buffer", "delta", "grid"))
    s.add_argument("--data-dir")
    s.add_argument("--delta", type=float, default=0.4, help="label smoothing of the full method in the grid")
    s.add_argument("--out", required=True)
    s.add_argument("--no-timing", action="store_true")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, DatasetFormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
