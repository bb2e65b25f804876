"""Reproducible experiment driver.

One 64-bit seed per run; every consumer of randomness gets a named
substream derived from it, so adding a new consumer never perturbs the
draws of existing ones. Metric JSON is written with sorted keys and no
timing information, so the same config and seed produce byte-identical
metrics; wall-clock and file inventory go in a separate manifest.
"""

import dataclasses
import hashlib
import json
import os
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .circuit import pauli_z_observables, random_circuit, sample_outputs, \
    sample_parameters, write_samples_csv, zz_feature_map
from .config import LIMITS
from .data import FeatureTable, ingest_csv, pca_reduce
from .errors import ConfigError
from .linalg import basis_state, pauli_string, random_pure_state
from .moments import MomentSpec, haar_expectation, monte_carlo_moment
from .near_gaussian import gaussianity_diagnostics
from .qntk import LinearizedDynamics, QNTKMatrix, gradient_descent_train, \
    parameter_shift_gradient, qntk

EXPERIMENT_KINDS = ("gaussianity", "moments", "dynamics")


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic named child stream of a single 64-bit seed."""
    tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n_qubits: int = 2
    depth: int = 8
    n_samples: int = 10_000
    seed: int = 0
    out_dir: str = "."
    data_path: str = None        # optional CSV consumed by gaussianity runs
    data_columns: tuple = None   # header expected in data_path
    label_column: str = None
    threads: int = 1
    eta: float = 0.01            # dynamics only
    steps: int = 100             # dynamics only
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; "
                              f"expected one of {EXPERIMENT_KINDS}")
        if self.n_qubits < 1 or 2 ** self.n_qubits > LIMITS.max_dim:
            raise ConfigError(f"n_qubits={self.n_qubits} out of range")
        if self.depth < 1:
            raise ConfigError("depth must be positive")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError("seed must fit in 64 bits")
        if self.threads < 1:
            raise ConfigError("threads must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        if d["data_columns"] is not None:
            d["data_columns"] = list(d["data_columns"])
        return d

    @classmethod
    def from_dict(cls, raw: dict, **overrides):
        merged = dict(raw)
        for key, val in overrides.items():
            if val is not None:
                merged[key] = val
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in merged:
            raise ConfigError("config missing required key 'kind'")
        if merged.get("data_columns") is not None:
            merged["data_columns"] = tuple(merged["data_columns"])
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path, **overrides):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw, **overrides)


@dataclass(frozen=True)
class ResultBundle:
    config: ExperimentConfig
    metrics: dict
    tables: dict           # name -> file path (written under out_dir)
    wall_clock: float
    version: str = __version__

    def metrics_json(self) -> str:
        payload = {"config": self.config.to_dict(), "metrics": self.metrics,
                   "version": self.version}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def atomic_write(path, text: str):
    """Never leave a truncated file behind: write aside then rename."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _input_state(cfg: ExperimentConfig):
    if cfg.data_path is None:
        return basis_state(2 ** cfg.n_qubits, 0), "basis-zero"
    if not cfg.data_columns:
        raise ConfigError("data_path given without data_columns")
    table = ingest_csv(cfg.data_path, list(cfg.data_columns),
                       label_column=cfg.label_column)
    reduced = pca_reduce(table, min(cfg.n_qubits, table.n_features))
    row = reduced.features[0]
    angles = np.zeros(cfg.n_qubits)
    angles[:row.shape[0]] = row
    return zz_feature_map(angles, cfg.n_qubits), f"feature-map:{cfg.data_path}"


def _run_gaussianity(cfg: ExperimentConfig, out_dir):
    rho, state_note = _input_state(cfg)
    obs = pauli_z_observables(cfg.n_qubits)
    rng = substream(cfg.seed, "gaussianity/ensemble")
    values = sample_outputs(cfg.n_qubits, cfg.depth, rho, obs, cfg.n_samples,
                            rng, threads=cfg.threads)
    report = gaussianity_diagnostics(values, labels=obs.labels)
    table_path = os.path.join(out_dir, "samples.csv")
    write_samples_csv(table_path, values, obs.labels)
    metrics = {"input_state": state_note, "diagnostics": report.to_dict()}
    return metrics, {"samples": table_path}


def _random_moment_spec(n_qubits, p, rng):
    d = 2 ** n_qubits
    pairs = []
    for k in range(p):
        rho = random_pure_state(d, rng)
        axes = rng.integers(0, 3, size=n_qubits)
        label = "".join("XYZ"[a] for a in axes)
        pairs.append((rho, pauli_string(label)))
    return MomentSpec(tuple(pairs))


def _run_moments(cfg: ExperimentConfig, out_dir):
    metrics = {}
    rows = []
    for p in (1, 2, 3, 4):
        spec = _random_moment_spec(cfg.n_qubits, p, substream(cfg.seed, f"moments/spec/{p}"))
        # below the d >= p threshold the Gram matrix is singular; the
        # rank-truncated table is exact on the ensemble's support
        analytic = haar_expectation(spec, allow_pseudo_inverse=2 ** cfg.n_qubits < p)
        est = monte_carlo_moment(spec, cfg.n_samples,
                                 substream(cfg.seed, f"moments/mc/{p}"),
                                 threads=cfg.threads)
        z = est.z_score(analytic)
        metrics[f"p{p}"] = {"analytic": analytic, "monte_carlo": est.value,
                            "std_error": est.std_error, "z": z,
                            "n_samples": est.n_samples}
        rows.append((p, analytic, est.value, est.std_error, z))
    table_path = os.path.join(out_dir, "moments.csv")
    lines = ["p,analytic,monte_carlo,std_error,z"]
    lines += [f"{p},{a!r},{m!r},{s!r},{z!r}" for p, a, m, s, z in rows]
    atomic_write(table_path, "\n".join(lines) + "\n")
    metrics["max_abs_z"] = max(abs(r[4]) for r in rows)
    return metrics, {"moments": table_path}


def _run_dynamics(cfg: ExperimentConfig, out_dir):
    spec = random_circuit(cfg.n_qubits, cfg.depth, substream(cfg.seed, "dynamics/circuit"))
    theta0 = sample_parameters(cfg.depth, substream(cfg.seed, "dynamics/theta"))
    data_rng = substream(cfg.seed, "dynamics/data")
    xs = data_rng.uniform(0, 2 * np.pi, size=(2, cfg.n_qubits))
    states = [zz_feature_map(x, cfg.n_qubits) for x in xs]
    y = data_rng.uniform(-0.5, 0.5, size=(1, len(states)))
    obs = pauli_z_observables(cfg.n_qubits)
    obs = type(obs)((obs.observables[0],))  # single channel

    traj = gradient_descent_train(spec, theta0, states, y, obs,
                                  eta=cfg.eta, steps=cfg.steps)
    grad0 = parameter_shift_gradient(spec, theta0, states, obs)
    kernel = qntk(spec, theta0, states, obs)
    lin = LinearizedDynamics(kernel, n_observed=len(states),
                             f0=traj.outputs[0], y=y, eta=cfg.eta)
    steps = np.arange(cfg.steps + 1)
    lin_path = np.stack([lin.mean(t) for t in steps])      # (steps+1, n, P)
    dev = np.abs(traj.outputs - lin_path)
    scale = np.maximum(np.abs(traj.outputs[0] - y), 1e-12)
    rel = dev / scale
    metrics = {
        "loss_initial": float(traj.losses[0]),
        "loss_final": float(traj.losses[-1]),
        "median_rel_deviation": float(np.median(rel[1:])),
        "max_rel_deviation": float(rel.max()),
        "kernel_trace": float(np.trace(kernel.matrix)),
        "grad_norm": float(np.linalg.norm(grad0.flat())),
    }
    table_path = os.path.join(out_dir, "trajectory.csv")
    m = traj.outputs.shape[1] * traj.outputs.shape[2]
    head = ["step", "loss"] + [f"f_{i}" for i in range(m)] + \
        [f"lin_f_{i}" for i in range(m)]
    lines = [",".join(head)]
    for t in steps:
        cells = [str(t), repr(float(traj.losses[t]))]
        cells += [repr(float(v)) for v in traj.outputs[t].ravel()]
        cells += [repr(float(v)) for v in lin_path[t].ravel()]
        lines.append(",".join(cells))
    atomic_write(table_path, "\n".join(lines) + "\n")
    return metrics, {"trajectory": table_path}


_RUNNERS = {"gaussianity": _run_gaussianity, "moments": _run_moments,
            "dynamics": _run_dynamics}


def run_experiment(cfg: ExperimentConfig) -> ResultBundle:
    """Execute one experiment and write its artifacts under cfg.out_dir.

    On failure an error manifest is written in place of the bundle and
    the exception propagates; metrics.json is only ever complete.
    """
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    start = time.perf_counter()
    try:
        metrics, tables = _RUNNERS[cfg.kind](cfg, out_dir)
    except Exception as exc:
        manifest = {"error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc(),
                    "config": cfg.to_dict(), "version": __version__}
        atomic_write(os.path.join(out_dir, "error_manifest.json"),
                     json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        raise
    wall = time.perf_counter() - start
    bundle = ResultBundle(config=cfg, metrics=metrics, tables=tables, wall_clock=wall)
    atomic_write(os.path.join(out_dir, "metrics.json"), bundle.metrics_json())
    manifest = {"wall_clock_seconds": wall, "tables": sorted(tables),
                "version": __version__}
    atomic_write(os.path.join(out_dir, "manifest.json"),
                 json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return bundle


def sweep_gaussianity(n_values, depth_values, n_samples, seed, threads: int = 1,
                      out_dir=None) -> dict:
    """Kurtosis grid over circuit width and depth, one cell per pair.

    Every cell draws from its own named substream of the single seed, so
    the grid shape does not change any cell's samples.
    """
    cells = {}
    for n in n_values:
        obs = pauli_z_observables(n)
        rho = basis_state(2 ** n, 0)
        for depth in depth_values:
            rng = substream(seed, f"sweep/n{n}/L{depth}")
            values = sample_outputs(n, depth, rho, obs, n_samples, rng,
                                    threads=threads)
            report = gaussianity_diagnostics(values, labels=obs.labels)
            cells[f"n{n}_L{depth}"] = {
                "n_qubits": int(n), "depth": int(depth),
                "labels": list(report.labels),
                "kurtosis": [float(v) for v in report.kurtosis],
                "kurtosis_se": [float(v) for v in report.kurtosis_se],
            }
    summary = {"cells": cells,
               "config": {"n_values": [int(v) for v in n_values],
                          "depth_values": [int(v) for v in depth_values],
                          "n_samples": int(n_samples), "seed": int(seed)},
               "version": __version__}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        atomic_write(os.path.join(out_dir, "summary.json"),
                     json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def _wire_of(label: str) -> int:
    return label.index("Z")


def monotonicity_inversions(summary: dict) -> list:
    """|kurtosis| increases along depth (fixed width, per observable) or
    along width (fixed depth, observables matched by wire index).

    Returns one record per increase with the 2-SE allowance so callers
    can decide how many marginal inversions to tolerate.
    """
    cells = summary["cells"]
    cfg = summary["config"]
    n_values = sorted(cfg["n_values"])
    depth_values = sorted(cfg["depth_values"])

    def cell_kurt(n, depth):
        c = cells[f"n{n}_L{depth}"]
        return {_wire_of(lab): (abs(k), se)
                for lab, k, se in zip(c["labels"], c["kurtosis"], c["kurtosis_se"])}

    out = []
    for n in n_values:
        for d0, d1 in zip(depth_values, depth_values[1:]):
            a, b = cell_kurt(n, d0), cell_kurt(n, d1)
            for wire in sorted(set(a) & set(b)):
                inc = b[wire][0] - a[wire][0]
                if inc > 0:
                    out.append({"axis": "depth", "from": [n, d0], "to": [n, d1],
                                "wire": wire, "increase": inc,
                                "allowance": 2.0 * float(np.hypot(a[wire][1], b[wire][1]))})
    for depth in depth_values:
        for n0, n1 in zip(n_values, n_values[1:]):
            a, b = cell_kurt(n0, depth), cell_kurt(n1, depth)
            for wire in sorted(set(a) & set(b)):
                inc = b[wire][0] - a[wire][0]
                if inc > 0:
                    out.append({"axis": "width", "from": [n0, depth], "to": [n1, depth],
                                "wire": wire, "increase": inc,
                                "allowance": 2.0 * float(np.hypot(a[wire][1], b[wire][1]))})
    return out


def rerun_from_metrics(path) -> ResultBundle:
    """Rebuild the config embedded in a metrics.json and run it again."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if "config" not in payload:
        raise ConfigError(f"{path} has no embedded config")
    return run_experiment(ExperimentConfig.from_dict(payload["config"]))
