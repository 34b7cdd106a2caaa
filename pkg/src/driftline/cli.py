"""Command-line entry point: ``driftline run | inject | report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import yaml

from .config import _build, load_config_file
from .errors import ConfigError, DriftlineError, NotFoundError
from .pipeline import RunReport, build_report, run
from .scenario import DriftInjection, inject_records


def _setup_logging() -> None:
    level = os.environ.get("DRIFTLINE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def format_text(rep: RunReport) -> str:
    lines = [f"seed {rep.seed}: {rep.events} events, {rep.feedback} feedback, {rep.malformed} malformed, "
             f"label coverage {rep.label_coverage:.3f}", "", "injections:"]
    if not rep.injections:
        lines.append("  (none)")
    for inj, lat in zip(rep.injections, rep.detection_latency):
        lat_s = "not detected" if lat is None else f"detected after {lat} events"
        lines.append(f"  {inj['kind']} at {inj['start']} (magnitude {inj['magnitude']}): {lat_s}")
    lines += ["", f"detections: {len(rep.detections)}"]
    for d in rep.detections:
        lines.append(f"  {d['ts']:>8}  {d['id']:<10} {d['type']:<18} {d['detector']:<12} magnitude {d['magnitude']:.3f}")
    lines += ["", "actions:"]
    if not rep.actions:
        lines.append("  (none)")
    for a in rep.actions:
        lines.append(f"  {a['ts']:>8}  {a['kind']:<12} {a['status']:<12} rule {a['rule_id']}")
    lines += ["", "models:"]
    for m in rep.models:
        acc = m["metrics"].get("accuracy")
        origin = "initial" if m["decision_id"] is None else m["decision_id"]
        lines.append(f"  v{m['version']} at {m['created_at']} ({origin}) holdout accuracy {acc:.3f}")
    lines += ["", "accuracy by phase:"]
    for ph in rep.phase_accuracy:
        acc = "n/a" if ph["accuracy"] is None else f"{ph['accuracy']:.4f}"
        lines.append(f"  [{ph['from']}, {ph['to']}): {acc}")
    lines += ["", "sketch memory (bytes):"]
    for name, size in sorted(rep.sketch_memory.items()):
        lines.append(f"  {name:<14} {size}")
    return "\n".join(lines) + "\n"


def format_jsonl(rep: RunReport) -> str:
    body = rep.to_json()
    rows = [{"record": "summary", **{k: body[k] for k in ("seed", "events", "feedback", "malformed",
                                                           "label_coverage", "sketch_memory", "store")}}]
    rows += [{"record": "injection", **inj, "latency": lat}
             for inj, lat in zip(rep.injections, rep.detection_latency)]
    rows += [{"record": "detection", **d} for d in rep.detections]
    rows += [{"record": "action", **a} for a in rep.actions]
    rows += [{"record": "model", **m} for m in rep.models]
    rows += [{"record": "phase", **p} for p in rep.phase_accuracy]
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rep = run(cfg, args.out)
    sys.stdout.write(format_text(rep))
    return 0


def cmd_inject(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError(f"spec file {spec_path} does not exist", "--spec")
    spec = yaml.safe_load(spec_path.read_text()) or {}
    if not isinstance(spec, dict):
        raise ConfigError("expected a mapping with 'injections' and optional 'seed'", str(spec_path))
    unknown = set(spec) - {"injections", "seed"}
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", sorted(unknown)[0])
    injections = [_build(DriftInjection, item, f"injections[{i}]") for i, item in enumerate(spec.get("injections", []))]
    in_path = Path(args.input)
    if not in_path.exists():
        raise NotFoundError(f"input stream {in_path} does not exist")
    records = [json.loads(line) for line in in_path.read_text().splitlines() if line.strip()]
    out = inject_records(records, injections, int(spec.get("seed", 0)))
    Path(args.out).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in out))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rep = build_report(args.run)
    sys.stdout.write(format_jsonl(rep) if args.format == "jsonl" else format_text(rep))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftline", description="Self-correcting streaming ML runtime.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the pipeline on a scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--single-thread", action="store_true",
                   help="reference mode; the runtime is single-threaded, so output is identical")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("inject", help="apply drift injections to a recorded JSONL stream")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_inject)
    p = sub.add_parser("report", help="summarise a completed run from its stores")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=("text", "jsonl"), default="text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NotFoundError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 3
    except DriftlineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
