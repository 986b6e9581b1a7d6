"""Command-line entry point: ingest, run, eval, report, gen-synth.

Exit codes: 0 ok, 2 input error, 3 backend/runtime error, 4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import CliConfig, ComponentFactory, load_config, parse_override
from .errors import BackendError, ConfigError, MissingReport, ParseError, RunAborted, UserTooShort
from .evaluation.data import five_core, format_stats, ingest, sample_users
from .evaluation.sweep import sweep
from .evaluation.synthetic import gen_synthetic
from .runner import load_dataset, run_config

log = logging.getLogger("recnet")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_CONFIG = 0, 2, 3, 4


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def _resolve(args: argparse.Namespace) -> CliConfig:
    cfg = load_config(args.config) if args.config else CliConfig()
    overrides = dict(parse_override(s) for s in args.set or [])
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "variants", None):
        overrides["variants"] = args.variants
    return cfg.with_overrides(overrides) if overrides else cfg


# -- commands ------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    ds = ingest(args.path, args.format)
    if args.five_core:
        ds = five_core(ds)
    if args.sample_users:
        ds = sample_users(ds, args.sample_users, args.seed, args.max_history)
    print(format_stats(ds.stats()))
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(ds.to_jsonl(), encoding="utf-8")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    factory = ComponentFactory(cfg)
    factory.check()  # missing credentials fail here, before any step
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.dump(), encoding="utf-8")
    resume = json.loads(Path(args.resume).read_text(encoding="utf-8")) if args.resume else None

    def hook(batch: int, snap: dict) -> None:
        _write_json(out / "snapshots" / f"batch_{batch:05d}.json", snap)

    try:
        engine = run_config(cfg, factory, hook, resume)
    except RunAborted as exc:
        _write_json(out / "snapshot_last.json", exc.snapshot)
        print(f"error: {exc}; last consistent state in {out / 'snapshot_last.json'}", file=sys.stderr)
        return EXIT_RUNTIME
    report = engine.report()
    _write_json(out / "run_report.json", report)
    _write_json(out / "final_snapshot.json", engine.snapshot())
    _write_jsonl(out / "delivery_log.jsonl", engine.delivery_log)
    _write_jsonl(out / "lineage.jsonl", engine.lineage)
    _write_jsonl(out / "batches.jsonl", engine.batch_reports)
    print(json.dumps({k: report[k] for k in ("interactions", "batches", "lambda_observed")}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    factory = ComponentFactory(cfg)
    factory.check()
    ds = load_dataset(cfg)
    result = sweep(ds, cfg.variants, cfg.network, cfg.repetitions, cfg.parallelism, factory=factory)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.dump(), encoding="utf-8")
    (out / "metrics.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "metrics.json").write_text(result.to_json(), encoding="utf-8")
    print(result.table())
    if result.failures:
        print(f"{len(result.failures)} variant(s) failed: {', '.join(sorted(result.failures))}", file=sys.stderr)
    return EXIT_OK if result.results else EXIT_RUNTIME


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "run_report.json"
    if not path.exists():
        raise MissingReport(f"no run_report.json in {run_dir}")
    report = json.loads(path.read_text(encoding="utf-8"))
    print(f"variant: {report.get('variant')}  interactions: {report['interactions']}  batches: {report['batches']}")
    for stage, kinds in report["calls"].items():
        print(f"  {stage:<7} " + " ".join(f"{k}={v}" for k, v in kinds.items()))
    print(f"lambda observed: {report['lambda_observed']:.4f} (reference {report.get('lambda_paper', 1.5)})")
    traj = report["k_trajectory"]
    print("router count: " + " ".join(str(k) for k in traj))
    with (run_dir / "k_trajectory.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "routers"])
        w.writerows(enumerate(traj))
    return EXIT_OK


def cmd_gen_synth(args: argparse.Namespace) -> int:
    ds = gen_synthetic(
        groups=args.groups,
        users_per_group=args.users_per_group,
        items_per_group=args.items_per_group,
        vocab_per_group=args.vocab_per_group,
        crossover_rate=args.crossover,
        seed=args.seed,
        events_per_user=args.events_per_user,
        cold_items_per_group=args.cold_items_per_group,
    )
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(ds.to_jsonl(), encoding="utf-8")
    print(format_stats(ds.stats()))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="parse, filter and sample a JSONL interaction file")
    ing.add_argument("path")
    ing.add_argument("--format", choices=["internal", "amazon"], default="internal")
    ing.add_argument("--five-core", action="store_true")
    ing.add_argument("--sample-users", type=int, default=0)
    ing.add_argument("--max-history", type=int, default=None)
    ing.add_argument("--seed", type=int, default=0)
    ing.add_argument("-o", "--output", help="write the normalized dataset here")
    ing.set_defaults(func=cmd_ingest)

    def with_config(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory (overrides output_dir)")

    run = sub.add_parser("run", help="stream a dataset through the network")
    with_config(run)
    run.add_argument("--resume", metavar="SNAPSHOT", help="continue from a snapshot file")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="leave-one-out NDCG sweep over variants")
    with_config(ev)
    ev.add_argument("--variants", help="comma-separated variant names")
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="summarize a run directory")
    rep.add_argument("--run-dir", required=True)
    rep.set_defaults(func=cmd_report)

    gs = sub.add_parser("gen-synth", help="write a planted-community dataset")
    gs.add_argument("-o", "--output", required=True)
    gs.add_argument("--groups", type=int, default=4)
    gs.add_argument("--users-per-group", type=int, default=25)
    gs.add_argument("--items-per-group", type=int, default=40)
    gs.add_argument("--vocab-per-group", type=int, default=12)
    gs.add_argument("--crossover", type=float, default=0.1)
    gs.add_argument("--events-per-user", type=int, default=8)
    gs.add_argument("--cold-items-per-group", type=int, default=0)
    gs.add_argument("--seed", type=int, default=0)
    gs.set_defaults(func=cmd_gen_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, UserTooShort, MissingReport, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
