"""``ensfb`` command line: thin wrappers over the library operations.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import SolverError, ValidationError
from .experiments import (
    ExperimentConfig,
    find_config,
    list_presets,
    run_analyze,
    run_bounds,
    run_compare_horizons,
    run_preset,
    run_simulate,
    run_sweep,
    run_synthesize,
)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3

COMMANDS = {
    "analyze": run_analyze,
    "synthesize": run_synthesize,
    "simulate": run_simulate,
    "sweep": run_sweep,
    "bounds": run_bounds,
    "compare-horizons": run_compare_horizons,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message short
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (default: $ENSFB_CONFIG_PATH)")
    p.add_argument("--out", help="directory for output files (default: print to stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--tol", type=float, help="integrator relative tolerance")
    p.add_argument("--horizon", type=float, help="simulation horizon T")
    p.add_argument("--alpha", type=float, help="control weight alpha > 0")
    p.add_argument("--model", help="oscillator, catenary-closed, catenary-open, cyclic, spectral-heat")
    p.add_argument("--ensemble", help='e.g. "list:-4,-2,0,2,4" or "uniform:-0.5:0.5:5"')
    p.add_argument("--sigma", type=float, help="evaluation parameter")
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("--laws", help="comma separated: ensemble, mean-parameter, averaged-riccati")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ensfb", description="Ensemble feedback stabilization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        _common(sub.add_parser(name))
    p = sub.add_parser("run-preset")
    p.add_argument("preset")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list-presets")
    return parser


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad {what}: {text!r}") from exc


def config_from_args(args) -> ExperimentConfig:
    path = find_config(getattr(args, "config", None))
    data = ExperimentConfig.load(path).to_dict() if path else {}
    overrides = {
        "model": args.model,
        "ensemble": args.ensemble,
        "alpha": args.alpha,
        "horizon": args.horizon,
        "tol": args.tol,
        "sigma": args.sigma,
        "out": args.out,
        "format": args.format,
    }
    if args.x0:
        overrides["x0"] = _floats(args.x0, "x0")
    if args.laws:
        overrides["laws"] = [s.strip() for s in args.laws.split(",") if s.strip()]
    if args.model and args.model != data.get("model"):
        data.pop("model_params", None)
        data.pop("x0", None)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def _emit(result, out, fmt) -> None:
    fmt = fmt or "json"
    if out:
        for p in result.write(out, fmt):
            print(p)
    elif fmt == "csv":
        for key in result.tables:
            sys.stdout.write(f"# {key}\n")
            sys.stdout.write(result.table_csv(key))
    else:
        sys.stdout.write(result.to_json())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-presets":
            for name, desc in list_presets():
                print(f"{name}\t{desc}")
            return EXIT_OK
        if args.command == "run-preset":
            _emit(run_preset(args.preset), args.out, args.format)
            return EXIT_OK
        cfg = config_from_args(args)
        _emit(COMMANDS[args.command](cfg), cfg.out, cfg.format)
        return EXIT_OK
    except ValidationError as exc:
        print(f"ensfb: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"ensfb: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
