"""Command line entry point: ``qsim run|validate|report``.

Exit codes: 0 when every metric passes, 2 when a run completes but some
metric fails, 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .scenarios import ConfigError, ScenarioError, load_config, run_scenario

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _print_report(flat: dict, stream=sys.stdout) -> None:
    names = [k[len("metric."):] for k in flat if k.startswith("metric.")]
    print(f"scenario: {flat.get('scenario')}", file=stream)
    width = max((len(n) for n in names), default=10)
    for n in names:
        v = flat["metric." + n]
        v = f"{v:.6g}" if isinstance(v, (int, float)) else str(v)
        print(f"  {flat['pass.' + n]:4}  {n:<{width}}  {v}  "
              f"({flat['threshold.' + n]}, criterion {flat['criterion.' + n]})", file=stream)
    for k, v in flat.items():
        if k.startswith("note."):
            print(f"  note: {v}", file=stream)
    print(f"overall: {flat.get('all_pass')}", file=stream)


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    if cfg.field.get("kind") == "stern_gerlach" and cfg.field.get("variant") == "ideal":
        print("warning: the ideal Stern-Gerlach field has div B = beta; it is not a physical field",
              file=sys.stderr)
    print(json.dumps(cfg.to_dict(), indent=2))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = run_scenario(cfg, out_dir=args.out, seed=args.seed, threads=args.threads)
    flat = report.to_flat()
    _print_report(flat)
    print(f"report: {report.out_dir / 'report.json'}")
    return EXIT_OK if report.all_pass else EXIT_FAIL


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.json"
    try:
        flat = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read report {path}: {exc}") from None
    _print_report(flat)
    return EXIT_OK if flat.get("all_pass") == "pass" else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsim", description="Charged spin-1/2 packet simulations.")
    p.add_argument("--version", action="version", version=f"qsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config", help="TOML scenario file")
    r.add_argument("--out", help="output directory (overrides [output].directory)")
    r.add_argument("--threads", type=int, default=None, help="FFT worker threads")
    r.add_argument("--seed", type=int, default=None, help="recorded in the report; runs are deterministic")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a config and print the effective settings")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="summarize a finished run")
    rep.add_argument("path", help="run directory or report.json")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
