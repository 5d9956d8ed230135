"""Command line entry point: ``mdaa {init,adapt,sweep,oracle}``.

Exit status is 0 on success, 1 when the oracle reports a failing case,
2 for configuration errors, 3 for I/O and snapshot errors, and 4 for
numerical failures.
"""

import argparse
import json
import sys
from pathlib import Path

from . import bench, oracle
from .adapter import restore, snapshot
from .errors import (
    CorruptSnapshot,
    DimensionMismatch,
    EmptyClass,
    InvalidConfig,
    InvalidN,
    InvalidSeverity,
    InvalidSpec,
    NonFiniteInput,
    NotPositiveDefinite,
)
from .metrics import emit_report

EXIT_OK = 0
EXIT_ORACLE_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

# flag dest -> RunConfig field
_OVERRIDES = {
    "gamma": "gamma",
    "theta": "theta",
    "top_n": "top_n",
    "phi": "phi",
    "seed": "seed",
    "schedule": "schedule",
    "direction": "direction",
    "format": "format",
    "lam": "lam",
    "dynamic": "dynamic",
    "batch_size": "batch_size",
    "phase_samples": "phase_samples",
    "source_file": "source_file",
    "heldout_file": "heldout_file",
    "target_file": "target_file",
}


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--gamma", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--top-n", type=int, dest="top_n")
    p.add_argument("--phi", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--schedule", help="progressive-audio, progressive-video, interleaved, clean, none")
    p.add_argument("--direction", choices=("forward", "backward"))
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--dynamic", action="store_true", default=None)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--phase-samples", type=int, dest="phase_samples")
    p.add_argument("--source-file", dest="source_file")
    p.add_argument("--heldout-file", dest="heldout_file")
    p.add_argument("--target-file", dest="target_file")
    p.add_argument("--format", choices=("json_lines", "table_text", "csv"))
    p.add_argument("--out", help="report path; stdout when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdaa", description="Multi-modal analytic test-time adaptation benchmark."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="fit source classifiers and write a snapshot")
    _run_flags(p)
    p.add_argument("--snapshot", required=True, help="snapshot path to write")

    p = sub.add_parser("adapt", help="stream a schedule through a snapshot")
    _run_flags(p)
    p.add_argument("--snapshot", required=True, help="snapshot to start from")
    p.add_argument("--save", help="where to write the adapted snapshot (default: <snapshot>.adapted)")
    p.add_argument("--timing", action="store_true", help="include wall time and memory in the report")

    p = sub.add_parser("sweep", help="one full run per value along an axis")
    _run_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(bench.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")

    p = sub.add_parser("oracle", help="check recursive updates against a dense joint solve")
    p.add_argument("--config", help="key = value oracle config file")
    p.add_argument("--cases", type=int)
    p.add_argument("--phi", type=int, action="append", dest="phis", help="repeatable")
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--near-duplicate", action="store_true", default=None, dest="near_duplicate")
    p.add_argument("--no-timing", action="store_true", help="skip the factorization timing")
    p.add_argument("--out", help="report path; stdout when omitted")
    return parser


def _run_config(args) -> bench.RunConfig:
    base = bench.RunConfig()
    if args.config:
        base = bench.parse_config(Path(args.config).read_text(), base)
    changes = {
        field: getattr(args, dest)
        for dest, field in _OVERRIDES.items()
        if getattr(args, dest, None) is not None
    }
    cfg = base.replace(**changes)
    cfg.validate()
    return cfg


def _write(path, payload: bytes) -> None:
    if path:
        Path(path).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def cmd_init(args) -> int:
    cfg = _run_config(args)
    _, src, held = bench.load_data(cfg)
    model = bench.init_model(cfg, src)
    Path(args.snapshot).write_bytes(snapshot(model))
    if held is not None:
        acc = model.record_baseline(held.batch, held.labels)
        print(f"source accuracy (held-out): {acc:.4f}")
    print(f"wrote {args.snapshot}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = _run_config(args)
    model = restore(Path(args.snapshot).read_bytes())
    task, held = None, None
    if not cfg.target_file:
        task, _, held = bench.load_data(cfg)
    elif cfg.heldout_file:
        _, _, held = bench.load_data(cfg)
    report, _ = bench.adapt_run(cfg, model, task, held)
    _write(args.out or cfg.out, emit_report(report, cfg.format, include_timing=args.timing))
    save = args.save or f"{args.snapshot}.adapted"
    Path(save).write_bytes(snapshot(model))
    print(f"wrote {save}", file=sys.stderr)
    return EXIT_OK


def _sweep_payload(axis: str, results, fmt: str) -> bytes:
    if fmt == "table_text":
        return bench.sweep_table(axis, results).encode()
    rows = [
        {"axis": axis, "value": v, "average_top1": r.average_top1, "forgetting": r.forgetting}
        for v, r in results
    ]
    if fmt == "json_lines":
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows).encode()
    lines = ["axis,value,average_top1,forgetting"]
    lines += [
        f"{axis},{row['value']!r},{row['average_top1']!r},"
        + ("" if row["forgetting"] is None else repr(row["forgetting"]))
        for row in rows
    ]
    return ("\n".join(lines) + "\n").encode()


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise InvalidConfig(f"cannot parse --values {args.values!r}") from None
    if not values:
        raise InvalidConfig("--values is empty")
    results = bench.sweep(cfg, args.axis, values)
    _write(args.out or cfg.out, _sweep_payload(args.axis, results, cfg.format))
    return EXIT_OK


def cmd_oracle(args) -> int:
    values = {}
    if args.config:
        values = bench.parse_key_values(Path(args.config).read_text(), oracle.OracleConfig)
    for key in ("cases", "gamma", "seed", "near_duplicate"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.phis:
        values["phis"] = tuple(args.phis)
    cfg = oracle.OracleConfig(**values)
    report = oracle.run_oracle(cfg)
    out = report.to_dict()
    if not args.no_timing:
        out["factorization"] = oracle.complexity_check().to_dict()
    _write(args.out, (json.dumps(out, sort_keys=True, indent=1) + "\n").encode())
    summary = "PASS" if report.passed else "FAIL"
    print(
        f"oracle {summary}: {len(report.cases)} cases, max rel error {report.max_rel_error}",
        file=sys.stderr,
    )
    return EXIT_OK if report.passed else EXIT_ORACLE_FAILED


_COMMANDS = {"init": cmd_init, "adapt": cmd_adapt, "sweep": cmd_sweep, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        InvalidConfig, InvalidSpec, InvalidN, InvalidSeverity, EmptyClass, DimensionMismatch
    ) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CorruptSnapshot) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NotPositiveDefinite, NonFiniteInput, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
