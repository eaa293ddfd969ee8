"""
CLI - Command-line interface for lorentz_slab experiments
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import MODES, SlabConfig, load_config_file
from .debug import configure_logging, get_logger
from .experiments import EXPERIMENTS, ExperimentSpec, run
from .reports import create_error_report, write_json

logger = get_logger(__name__)


class UsageError(ValueError):
    """Bad command line; reported as usage_error with exit status 2"""


class SlabArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("sweep list is empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = SlabArgumentParser(
        prog="lorentz_slab",
        description="Lorentz gas slab transport experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m lorentz_slab gk --out results/gk
  python -m lorentz_slab profile-kinetic --config slab.cfg --sweep-eta 5,10,20 --samples 100000
  python -m lorentz_slab pathologies --sweep-epsilon 1e-2,3e-3,1e-3,3e-4 --workers 8
  python -m lorentz_slab profile-micro --mode rerandomized --t0 2 --out results/micro

Environment:
  LORENTZ_WORKERS   default worker count (a .env file is read)
  LOG_LEVEL         logging level (default INFO)
  LORENTZ_LOG_FILE  rotating log file
        """,
    )
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS), help="Experiment to run")

    parser.add_argument("--config", type=str, help="Flat key = value config file")
    parser.add_argument("--out", type=str, default="results", help="Output directory (default: results)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides the config file)")
    parser.add_argument("--samples", type=int, help="Samples per estimate")
    parser.add_argument("--bins", type=int, help="Profile bins (default: 16)")
    parser.add_argument("--angles", type=int, help="Velocity angles per bin (default: 32)")
    parser.add_argument("--mode", choices=MODES, help="Micro stationary mode (default: fresh)")
    parser.add_argument("--t0", type=float, help="Refresh interval for rerandomized mode (default: eta)")
    parser.add_argument("--t", type=float, help="Time argument of time-dependent experiments")
    parser.add_argument("--workers", type=int, help="Worker threads (default: LORENTZ_WORKERS or 1)")
    parser.add_argument("--sweep-epsilon", type=_float_list, help="Comma-separated epsilon values")
    parser.add_argument("--sweep-eta", type=_float_list, help="Comma-separated eta values")

    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--log-file", type=str, help="Log file path")
    return parser


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Config file values first, then command-line overrides"""
    physical: Dict[str, Any] = {}
    sampling: Dict[str, Any] = {}
    if args.config:
        physical, sampling = load_config_file(args.config)
    if args.seed is not None:
        physical["seed"] = args.seed

    for key in ("samples", "bins", "angles", "mode", "t0", "workers"):
        value = getattr(args, key)
        if value is not None:
            sampling[key] = value

    spec_kwargs = {k: v for k, v in sampling.items() if k in ("samples", "bins", "angles", "mode", "t0", "workers")}
    return ExperimentSpec(
        name=args.experiment,
        config=SlabConfig(**physical),
        out_dir=Path(args.out),
        t=args.t,
        sweep_epsilon=args.sweep_epsilon,
        sweep_eta=args.sweep_eta,
        **spec_kwargs,
    )


def _report_error(out_dir: Optional[str], error_type: str, message: str) -> None:
    body = create_error_report(message, error_type)
    print(json.dumps(body, indent=2), file=sys.stderr)
    if out_dir:
        try:
            path = Path(out_dir)
            path.mkdir(parents=True, exist_ok=True)
            write_json(path / "error.json", body)
        except OSError:
            pass


def _out_dir(argv: Optional[List[str]]) -> str:
    """--out from a command line that failed to parse"""
    scan = SlabArgumentParser(add_help=False)
    scan.add_argument("--out", default="results")
    try:
        known, _ = scan.parse_known_args(sys.argv[1:] if argv is None else argv)
    except UsageError:
        return "results"
    return known.out


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        _report_error(_out_dir(argv), "usage_error", str(e))
        return 2
    configure_logging(args.log_file, args.verbose)

    try:
        spec = build_spec(args)
    except ValueError as e:
        _report_error(args.out, "config_error", str(e))
        return 1

    try:
        summary = run(spec)
    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        return 130
    except Exception as e:
        logger.exception("Experiment %s failed", spec.name)
        _report_error(args.out, type(e).__name__, str(e))
        return 1

    status = "PASSED" if summary.passed else "FAILED"
    print(f"{summary.experiment}: {status} in {summary.wall_time:.1f}s -> {spec.out_dir / 'summary.json'}")
    for name, ok in summary.checks.items():
        print(f"  [{'ok' if ok else 'FAIL'}] {name}")
    return 0 if summary.passed else 1


if __name__ == "__main__":
    sys.exit(main())
