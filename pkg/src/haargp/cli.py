"""Command-line front end.

Exit codes: 0 success, 2 configuration or schema problem, 3 numerical
conditioning failure, 4 tolerance failure under --check.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .circuit import ObservableSet, zz_feature_map
from .data import ingest_csv
from .errors import ConditioningError, ConfigError, SchemaError, SingularGramError
from .experiments import ExperimentConfig, monotonicity_inversions, run_experiment, \
    sweep_gaussianity
from .gp import ObservedSet, PredictionSet, marginal_predictive, prior_kernel
from .linalg import pauli_string
from .moments import weingarten_table
from .near_gaussian import MomentSet, corrected_covariance, corrected_mean, \
    couplings_from_moments, predicted_connected_four


class CheckFailure(Exception):
    """A --check tolerance was violated (exit code 4)."""


def _emit(payload: dict, out_dir, filename: str):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, filename)
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
        print(path)
    else:
        sys.stdout.write(text)


def _experiment_config(args, kind: str, **extra) -> ExperimentConfig:
    overrides = {"seed": args.seed, "out_dir": args.out,
                 "threads": args.threads, **extra}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        file_kind = raw.setdefault("kind", kind)
        if file_kind != kind:
            raise ConfigError(f"config kind {file_kind!r} does not match subcommand {kind!r}")
        return ExperimentConfig.from_dict(raw, **overrides)
    return ExperimentConfig.from_dict({"kind": kind}, **overrides)


def _cmd_weingarten_table(args):
    table = weingarten_table(args.order, args.dim,
                             allow_pseudo_inverse=args.pseudo_inverse)
    payload = {
        "order": table.p, "dim": table.d,
        "condition_number": table.condition_number,
        "pseudo_inverse": table.pseudo_inverse,
        "entries": {"+".join(str(c) for c in key): val
                    for key, val in sorted(table.values.items())},
    }
    _emit(payload, args.out, f"weingarten_p{table.p}_d{table.d}.json")
    return 0


def _cmd_moments(args):
    cfg = _experiment_config(args, "moments", n_qubits=args.n_qubits,
                             n_samples=args.samples)
    bundle = run_experiment(cfg)
    print(os.path.join(cfg.out_dir, "metrics.json"))
    if args.check and bundle.metrics["max_abs_z"] > args.max_z:
        raise CheckFailure(f"max |z| = {bundle.metrics['max_abs_z']:.3f} "
                           f"exceeds {args.max_z}")
    return 0


def _cmd_gaussianity(args):
    extra = {"n_qubits": args.n_qubits, "depth": args.layers,
             "n_samples": args.samples, "data_path": args.data}
    if args.columns:
        extra["data_columns"] = tuple(c.strip() for c in args.columns.split(","))
    if args.label_column:
        extra["label_column"] = args.label_column
    cfg = _experiment_config(args, "gaussianity", **extra)
    bundle = run_experiment(cfg)
    print(os.path.join(cfg.out_dir, "metrics.json"))
    if args.check:
        rows = bundle.metrics["diagnostics"]["outputs"]
        worst = max((abs(r["excess_kurtosis"]) for r in rows
                     if not r["degenerate"] and r["excess_kurtosis"] is not None),
                    default=0.0)
        if worst > args.kurt_tol:
            raise CheckFailure(f"max |kurtosis| = {worst:.4f} exceeds {args.kurt_tol}")
    return 0


def _read_features(path):
    """Header comes from the file itself; a 'label' column is optional."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        try:
            header = [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            raise SchemaError(f"empty file: {path}") from None
    label = "label" if "label" in header else None
    return ingest_csv(path, header, label_column=label)


def _cmd_gp_predict(args):
    train = _read_features(args.train)
    test = _read_features(args.test)
    if train.labels is None:
        raise SchemaError(f"{args.train} needs a 'label' column")
    if test.n_features != train.n_features:
        raise SchemaError("train and test feature counts differ")
    n = train.n_features
    states = [zz_feature_map(row, n, reps=args.reps) for row in train.features]
    states += [zz_feature_map(row, n, reps=args.reps) for row in test.features]
    obs = ObservableSet((pauli_string("Z" + "I" * (n - 1)),))
    kernel = prior_kernel(obs, states, mode=args.mode)
    observed = ObservedSet(states[:train.n_rows],
                           np.asarray(train.labels, dtype=np.float64)[None, :])
    predict = PredictionSet(states[train.n_rows:])
    post = marginal_predictive(observed, predict, kernel, jitter=args.jitter)
    mean = post.mean[0]
    payload = {
        "mean": [float(v) for v in mean],
        "variance": [float(v) for v in post.variance()[0]],
        "log_marginal": [float(v) for v in post.log_marginal],
        "mode": args.mode, "n_train": train.n_rows, "n_test": test.n_rows,
    }
    if test.labels is not None:
        err = mean - np.asarray(test.labels, dtype=np.float64)
        payload["test_mse"] = float(np.mean(err ** 2))
    _emit(payload, args.out, "predictions.json")
    return 0


def _cmd_qntk_train(args):
    cfg = _experiment_config(args, "dynamics", n_qubits=args.n_qubits,
                             depth=args.layers, eta=args.eta, steps=args.steps)
    bundle = run_experiment(cfg)
    print(os.path.join(cfg.out_dir, "trajectory.csv"))
    print(os.path.join(cfg.out_dir, "metrics.json"))
    if args.check and bundle.metrics["median_rel_deviation"] > args.max_deviation:
        raise CheckFailure(
            f"median relative deviation {bundle.metrics['median_rel_deviation']:.4f} "
            f"exceeds {args.max_deviation}")
    return 0


def _cmd_sweep(args):
    if not args.config:
        raise ConfigError("sweep requires --config with n_values and depth_values")
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep config: {exc}") from None
    for key in ("n_values", "depth_values"):
        if key not in raw:
            raise ConfigError(f"sweep config missing {key!r}")
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    summary = sweep_gaussianity(raw["n_values"], raw["depth_values"],
                                raw.get("n_samples", 10_000), seed,
                                threads=args.threads or 1,
                                out_dir=args.out or raw.get("out_dir", "."))
    print(os.path.join(args.out or raw.get("out_dir", "."), "summary.json"))
    if args.check:
        inv = monotonicity_inversions(summary)
        bad = [v for v in inv if v["increase"] > v["allowance"]]
        if bad or len(inv) > 1:
            raise CheckFailure(f"kurtosis not non-increasing: {len(inv)} inversions, "
                               f"{len(bad)} beyond the 2-SE allowance")
    return 0


def _four_index(raw, m):
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (m, m, m, m):
        raise ConfigError(f"fourth-moment array has shape {arr.shape}, "
                          f"expected {(m, m, m, m)}")
    return arr


def _cmd_ng_correct(args):
    try:
        with open(args.moments, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read moments file: {exc}") from None
    for key in ("second", "fourth_connected"):
        if key not in raw:
            raise ConfigError(f"moments file missing {key!r}")
    second = np.asarray(raw["second"], dtype=np.float64)
    if second.ndim != 2 or second.shape[0] != second.shape[1]:
        raise ConfigError("'second' must be a square matrix")
    m = second.shape[0]
    moments = MomentSet(second, _four_index(raw["fourth_connected"], m))
    action = couplings_from_moments(moments, lam=raw.get("lambda", 1.0))
    payload = {
        "k_coupling": action.k_coupling.tolist(),
        "lambda": action.lam,
        "corrected_covariance": corrected_covariance(action).tolist(),
        "predicted_connected_four": predicted_connected_four(action).tolist(),
        "warning": action.warning,
    }
    if "y" in raw:
        if "observed" not in raw:
            raise ConfigError("'y' given without 'observed' indices")
        y = np.asarray(raw["y"], dtype=np.float64)
        payload["corrected_mean"] = corrected_mean(action, y, raw["observed"]).tolist()
    _emit(payload, args.out, "ng_correct.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haargp",
        description="Haar-averaged circuit moments, Gaussian-process surrogates, "
                    "and training-dynamics tools.")
    parser.add_argument("--version", action="version", version=f"haargp {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", type=int, default=None, help="64-bit RNG seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weingarten-table", parents=[common],
                       help="print or write a Weingarten coefficient table")
    p.add_argument("--order", "-p", type=int, required=True)
    p.add_argument("--dim", "-d", type=int, required=True)
    p.add_argument("--pseudo-inverse", action="store_true",
                   help="allow dim < order (rank-truncated inverse)")
    p.set_defaults(func=_cmd_weingarten_table)

    p = sub.add_parser("moments", parents=[common],
                       help="analytic vs Monte Carlo k-point moments")
    p.add_argument("--n-qubits", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--check", action="store_true")
    p.add_argument("--max-z", type=float, default=4.0)
    p.set_defaults(func=_cmd_moments)

    p = sub.add_parser("gaussianity", parents=[common],
                       help="sample circuit outputs and report kurtosis diagnostics")
    p.add_argument("--n-qubits", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--data", default=None, help="CSV of feature rows for the input state")
    p.add_argument("--columns", default=None, help="comma-separated CSV header")
    p.add_argument("--label-column", default=None)
    p.add_argument("--check", action="store_true")
    p.add_argument("--kurt-tol", type=float, default=0.2)
    p.set_defaults(func=_cmd_gaussianity)

    p = sub.add_parser("gp-predict", parents=[common],
                       help="Gaussian-process regression from train/test CSVs")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", choices=("leading", "exact"), default="leading")
    p.add_argument("--reps", type=int, default=2)
    p.add_argument("--jitter", type=float, default=None)
    p.set_defaults(func=_cmd_gp_predict)

    p = sub.add_parser("qntk-train", parents=[common],
                       help="gradient-descent training with linearized comparison")
    p.add_argument("--n-qubits", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--check", action="store_true")
    p.add_argument("--max-deviation", type=float, default=0.05)
    p.set_defaults(func=_cmd_qntk_train)

    p = sub.add_parser("sweep", parents=[common],
                       help="kurtosis grid over width and depth")
    p.add_argument("--check", action="store_true",
                   help="fail unless |kurtosis| is non-increasing along both axes")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ng-correct", parents=[common],
                       help="quartic-action corrections from measured moments")
    p.add_argument("--moments", required=True,
                   help="JSON with 'second' and 'fourth_connected' arrays")
    p.set_defaults(func=_cmd_ng_correct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConditioningError, SingularGramError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
