"""Command line entry point.

    voifilter run --config FILE [--filter F] [--gamma G] [--seed S] --out DIR
    voifilter sweep --config FILE --gammas 0,0.1,0.4 --seeds 5 --out DIR
    voifilter verify [--acceptance]

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, NumericalError
from .harness import ENGINES, run_experiment, run_sweep, write_outputs, write_sweep_csv
from .scenario import FILTERS, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("voifilter")


def _gamma_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad gamma list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("gamma list is empty")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voifilter", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="single closed-loop experiment")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--filter", choices=FILTERS)
    run.add_argument("--gamma", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--engine", choices=ENGINES, default="batched")
    run.add_argument("--out", required=True, type=Path)

    sw = sub.add_parser("sweep", help="gamma sweep averaged over seeds")
    sw.add_argument("--config", required=True, type=Path)
    sw.add_argument("--gammas", required=True, type=_gamma_list, help="comma-separated values")
    sw.add_argument("--seeds", type=int, default=1, help="number of seeds (config seed + i)")
    sw.add_argument("--filter", choices=FILTERS)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", required=True, type=Path)

    ver = sub.add_parser("verify", help="run the oracle and property test suites")
    ver.add_argument("--acceptance", action="store_true", help="include the slow acceptance suite")
    return p


def _overrides(cfg, args):
    changes = {}
    if getattr(args, "filter", None) is not None:
        changes["filter"] = args.filter
    if getattr(args, "gamma", None) is not None:
        changes["gamma"] = args.gamma
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.with_(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    res = run_experiment(cfg, engine=args.engine)
    out = write_outputs(res, args.out)
    s = res.summary
    print(
        f"{cfg.filter} gamma={cfg.gamma:g} seed={cfg.seed}: rmse={s.asymptotic_rmse:.3f} m "
        f"access={s.mean_medium_access:.3f} kbps={s.kbps:.3f} -> {out}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    cfg = _overrides(load_config(args.config), args)
    results = run_sweep(cfg, args.gammas, seeds=args.seeds, n_jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(results, args.out / "sweep.csv")
    for r in results:
        status = r.error or f"rmse={r.asymptotic_rmse:.3f} access={r.mean_medium_access:.3f}"
        print(f"gamma={r.gamma:g}: {status}")
    return EXIT_OK


def _tests_dir() -> Optional[Path]:
    cand = Path(__file__).resolve().parents[2] / "tests"
    return cand if cand.is_dir() else None


def cmd_verify(args) -> int:
    try:
        import pytest
    except ImportError:
        print("verify needs pytest (pip install 'artifact[test]')", file=sys.stderr)
        return EXIT_CONFIG
    tests = _tests_dir()
    if tests is None:
        print("test suite not found next to the package (source checkout required)", file=sys.stderr)
        return EXIT_CONFIG
    argv = [str(tests), "-q"]
    if not args.acceptance:
        argv += ["--ignore", str(tests / "test_acceptance.py")]
    return EXIT_OK if pytest.main(argv) == 0 else EXIT_NUMERICAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
