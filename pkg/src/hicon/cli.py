"""Command line entry point: ``hicon run|cell|check <config>``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .harness import ConfigError, ExperimentConfig, emit_outputs, resolve_out_dir, run_experiment, tensor_csv, ensure_writable, write_text


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hicon", description="High-contrast homogenization lab.")
    p.add_argument("--version", action="version", version=f"hicon {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "full epsilon sweep with limit comparison"),
                       ("cell", "effective tensor only"),
                       ("check", "invariant suites only")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config", help="path to a key = value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory (default: config, then $HICON_OUT)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _run(cfg, args) -> int:
    report = run_experiment(cfg, threads=args.threads)
    paths = emit_outputs(report, cfg, args.out)
    for row in [*report.rows, report.limit_row]:
        gap = row.get("gap_to_limit")
        gap_s = f"{gap:.3e}" if isinstance(gap, float) else "-"
        print(f"eps={row['eps']!s:>6}  scaled={row.get('scaled_infimum', float('nan')):+.6e}  gap={gap_s}  {row['status']}")
    print(f"wrote {len(paths)} files to {paths[0].parent}")
    return 0 if all(r["status"] == "ok" for r in [*report.rows, report.limit_row]) else 1


def _cell(cfg, args) -> int:
    from .homogenize import effective_form
    from .mesh import CellMesh

    W1 = cfg.laws[1]
    eff = effective_form(W1.quad_form, CellMesh(cfg.m, cfg.inclusion))
    out = resolve_out_dir(cfg, args.out)
    ensure_writable(out)
    write_text(out / "effective_tensor.csv", tensor_csv(eff))
    write_text(out / "config.echo", cfg.echo())
    print(np.array2string(eff.form.matrix, precision=6))
    print(f"wrote effective_tensor.csv to {out}")
    return 0


def _check(cfg, args) -> int:
    from .checks import run_checks

    results = run_checks(cfg)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg = cfg.override("seed", args.seed)
    except (OSError, ConfigError) as exc:
        print(f"hicon: {exc}", file=sys.stderr)
        return 2
    handler = {"run": _run, "cell": _cell, "check": _check}[args.command]
    try:
        return handler(cfg, args)
    except OSError as exc:
        print(f"hicon: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
