"""Command line interface: ``gmrfsel {simulate,fit,select,risk,rho-table}``.

Exit status is 0 on success, 2 for invalid input or parameters and 3 for
numerical failures (non-convergence, singular systems, failed calibration).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cls import fit_cls
from .errors import CalibrationError, GMRFError, NumericalError
from .lattice import build_model_collection, full_dimension
from .risk import monte_carlo_risk
from .sampler import PRESETS, read_batch, sample_field, scenario_theta, write_batch
from .selection import SelectionConfig, rho_table, rho_table_csv, select_model
from .spectral import CovarianceModel, read_theta, write_theta

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


class UsageError(Exception):
    pass


def _default_threads() -> int:
    return os.cpu_count() or 1


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _add_common(sp, *, p=False, n=False, seed=False, rho1=False, iso=False, out=True, threads=False):
    if p:
        sp.add_argument("--p", type=_positive_int, help="torus side length")
    if n:
        sp.add_argument("--n", type=_positive_int, default=1, help="replications per batch")
    if seed:
        sp.add_argument("--seed", type=_seed, default=0)
    if rho1:
        sp.add_argument("--rho1", type=float, default=2.0, help="spectral bound rho1 >= 2")
    if iso:
        sp.add_argument("--iso", action="store_true", help="use the isotropic parametrisation")
    if out:
        sp.add_argument("--out", type=Path, help="output path (default: stdout)")
    if threads:
        sp.add_argument("--threads", type=_positive_int, default=_default_threads())


def _add_theta_source(sp):
    sp.add_argument("--preset", choices=sorted(set(PRESETS) | {s.replace("_", "-") for s in PRESETS}))
    sp.add_argument("--theta", type=Path, help="coefficient field file (.csv or .json)")
    sp.add_argument("--a", type=float, default=0.0, help="iso-m1 neighbour weight")
    sp.add_argument("--alpha", type=float, default=0.1, help="hardcase weight")
    sp.add_argument("--sigma2", type=float, default=1.0)


def _theta_from_args(args):
    if (args.preset is None) == (args.theta is None):
        raise UsageError("give exactly one of --preset or --theta")
    if args.theta is not None:
        theta = read_theta(args.theta)
        if args.p is not None and args.p != theta.p:
            raise UsageError(f"--p {args.p} disagrees with the theta file (p={theta.p})")
        return theta
    if args.p is None:
        raise UsageError("--p is required with --preset")
    return scenario_theta(args.preset, args.p, a=args.a, alpha=args.alpha)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        out.write_text(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmrfsel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="draw a batch of exact samples")
    _add_theta_source(sp)
    _add_common(sp, p=True, n=True, seed=True, threads=True, out=False)
    sp.add_argument("--out", type=Path, required=True, help="batch file (.csv for text)")

    sp = sub.add_parser("fit", help="fit one model by conditional least squares")
    sp.add_argument("--batch", type=Path, required=True)
    sp.add_argument("--model", type=int, default=1, help="index in the nested collection (0 = empty)")
    sp.add_argument("--theta-out", type=Path, help="also write the fitted field as CSV")
    _add_common(sp, rho1=True, iso=True)

    sp = sub.add_parser("select", help="penalised model selection")
    sp.add_argument("--batch", type=Path, required=True)
    sp.add_argument("--max-dim", type=int, default=20,
                    help="largest model dimension (isotropic dimension with --iso)")
    sp.add_argument("--mode", choices=("slope", "known", "plugin"), default="slope")
    sp.add_argument("--K", type=float, default=1.0, help="penalty constant (known/plugin modes)")
    sp.add_argument("--phi-max", type=float, help="known phi_max(Sigma)")
    sp.add_argument("--rho2", type=float, help="plugin bound: phi_max = rho2 * sigma0^2")
    sp.add_argument("--table", type=Path, help="per-model CSV table")
    _add_common(sp, rho1=True, iso=True, threads=True)

    sp = sub.add_parser("risk", help="Monte Carlo risk table")
    _add_theta_source(sp)
    sp.add_argument("--reps", type=_positive_int, default=100)
    sp.add_argument("--max-dim", type=int, default=6)
    sp.add_argument("--models", type=int, nargs="+", help="model indices (default: all up to --max-dim)")
    sp.add_argument("--json", type=Path, help="also write the JSON mirror")
    _add_common(sp, p=True, n=True, seed=True, rho1=True, iso=True, threads=True)

    sp = sub.add_parser("rho-table", help="suprema of phi_max over each model")
    sp.add_argument("--k", type=_positive_int, default=4, help="number of non-empty models")
    _add_common(sp, p=True)
    return parser


def cmd_simulate(args) -> int:
    theta = _theta_from_args(args)
    cov = CovarianceModel(theta, args.sigma2)
    batch = sample_field(cov, args.n, args.seed, threads=args.threads)
    if args.out.suffix.lower() == ".csv":
        from .sampler import batch_to_csv

        args.out.write_text(batch_to_csv(batch))
    else:
        write_batch(batch, args.out)
    print(f"p={batch.p} n={batch.n} seed={batch.seed} "
          f"mean={batch.data.mean():.10g} var={batch.data.var():.10g}")
    return EXIT_OK


def _load_batch(path: Path):
    if path.suffix.lower() == ".csv":
        from .sampler import batch_from_csv

        return batch_from_csv(path.read_text())
    return read_batch(path)


def cmd_fit(args) -> int:
    batch = _load_batch(args.batch)
    if args.model < 0:
        raise UsageError(f"--model must be >= 0, got {args.model}")
    models = build_model_collection(batch.p, full_dimension(batch.p), max_models=args.model)
    if args.model >= len(models):
        raise UsageError(f"p={batch.p} has no model with index {args.model}")
    fit = fit_cls(models[args.model], batch, args.rho1, args.iso)
    if args.theta_out is not None:
        write_theta(fit.theta_hat, args.theta_out)
    _emit(fit.to_json(args.theta_out), args.out)
    return EXIT_OK


def cmd_select(args) -> int:
    batch = _load_batch(args.batch)
    if args.max_dim < 0:
        raise UsageError("empty model collection: --max-dim must be >= 0")
    config = SelectionConfig(
        K=args.K, rho1=args.rho1, phi_max_mode=args.mode, phi_max=args.phi_max,
        rho2=args.rho2, iso=args.iso, max_dim=args.max_dim,
    )
    collection = build_model_collection(batch.p, args.max_dim, iso=args.iso)
    report = select_model(batch, collection, config, threads=args.threads)
    if args.table is not None:
        args.table.write_text(report.table_csv())
    _emit(report.to_json(), args.out)
    return EXIT_OK


def cmd_risk(args) -> int:
    theta = _theta_from_args(args)
    if args.max_dim < 0:
        raise UsageError("empty model collection: --max-dim must be >= 0")
    if args.models:
        if min(args.models) < 0:
            raise UsageError("model indices must be >= 0")
        full = build_model_collection(theta.p, full_dimension(theta.p), max_models=max(args.models), iso=False)
        if max(args.models) >= len(full):
            raise UsageError(f"p={theta.p} has no model with index {max(args.models)}")
        collection = [full[i] for i in sorted(set(args.models))]
    else:
        collection = build_model_collection(theta.p, args.max_dim, iso=args.iso)
    table = monte_carlo_risk(theta, args.sigma2, collection, args.n, args.reps, args.rho1,
                             args.iso, args.seed, threads=args.threads)
    if args.json is not None:
        args.json.write_text(table.to_json())
    _emit(table.to_csv(), args.out)
    return EXIT_OK


def cmd_rho_table(args) -> int:
    if args.p is None:
        raise UsageError("--p is required")
    _emit(rho_table_csv(rho_table(args.p, args.k)), args.out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "risk": cmd_risk,
    "rho-table": cmd_rho_table,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, CalibrationError, np.linalg.LinAlgError) as exc:
        print(f"gmrfsel {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, GMRFError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"gmrfsel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
