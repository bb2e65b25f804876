"""Global tolerances and resource caps.

Defaults match the documented contracts; a JSON config file can override
individual values (CLI --config, or HAARGP_CONFIG in the environment).
Numerical code reads the module-level TOLERANCES/LIMITS objects so that a
single load_config call applies everywhere.
"""

import dataclasses
import json
import os

from .errors import ConfigError


@dataclasses.dataclass
class Tolerances:
    construction: float = 1e-12   # hermiticity / trace checks at build time
    unitarity: float = 1e-10
    psd_eigenvalue: float = -1e-10
    orthogonality: float = 1e-10  # Gram-row residual


@dataclasses.dataclass
class Limits:
    max_dim: int = 64             # dense operator cap (6 qubits)
    max_tensor_dim: int = 4096    # d**p cap for permutation operators
    mc_chunk: int = 4096          # samples per RNG substream chunk


TOLERANCES = Tolerances()
LIMITS = Limits()


def numba_disabled() -> bool:
    """True when the pure-numpy kernel path is forced via HAARGP_DISABLE_NUMBA."""
    return os.environ.get("HAARGP_DISABLE_NUMBA", "").strip() not in ("", "0", "false")


def load_config(path):
    """Apply overrides from a JSON file to TOLERANCES and LIMITS.

    Unknown keys are rejected so typos fail loudly.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    tol_fields = {f.name for f in dataclasses.fields(Tolerances)}
    lim_fields = {f.name for f in dataclasses.fields(Limits)}
    for key, value in raw.items():
        if key in tol_fields:
            setattr(TOLERANCES, key, float(value))
        elif key in lim_fields:
            setattr(LIMITS, key, int(value))
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    return raw
