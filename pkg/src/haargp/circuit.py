"""Layered variational ansatz, model outputs, and encoding circuits.

A circuit is an ordered stack of layers, each a fixed unitary W followed
by a parameterized rotation exp(i*theta*X). Layer 1 acts first:

    U(theta) = [exp(i th_L X_L) W_L] ... [exp(i th_1 X_1) W_1]

The ensemble generator draws each layer's W as a chain of Haar two
qubit gates on adjacent wire pairs (lowest pair first) followed by a CZ
entangler chain, with X the Pauli Y on wire (layer index mod n); thetas
are drawn uniformly on [0, 2pi). Involutory generators make exact
shift-rule gradients available downstream.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backend import get_kernels
from .config import LIMITS
from .errors import ContractViolation, DimensionError, ResourceLimitError
from .linalg import (
    PAULI_Y,
    PAULI_Z,
    DensityMatrix,
    HermitianObservable,
    UnitaryOperator,
    expm_hermitian_generator,
    pure_state,
)


@dataclass(frozen=True)
class Layer:
    w: UnitaryOperator
    x: HermitianObservable
    involutory: bool = field(init=False)

    def __post_init__(self):
        if self.w.dim != self.x.dim:
            raise DimensionError("layer W and X dimensions differ")
        sq = self.x.matrix @ self.x.matrix
        inv = bool(np.allclose(sq, np.eye(self.x.dim), atol=1e-12))
        object.__setattr__(self, "involutory", inv)

    @property
    def dim(self):
        return self.w.dim

    def rotation(self, theta: float) -> np.ndarray:
        if self.involutory:
            return np.cos(theta) * np.eye(self.dim) + 1j * np.sin(theta) * self.x.matrix
        return expm_hermitian_generator(self.x, theta).matrix


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if self.n_qubits < 1:
            raise DimensionError("need at least one qubit")
        if not layers:
            raise DimensionError("need at least one layer")
        d = 2**self.n_qubits
        if d > LIMITS.max_dim:
            raise ResourceLimitError(f"d={d} exceeds dense cap {LIMITS.max_dim}")
        for lay in layers:
            if lay.dim != d:
                raise DimensionError("layer dimension does not match qubit count")
        object.__setattr__(self, "layers", layers)

    @property
    def d(self) -> int:
        return 2**self.n_qubits

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class ObservableSet:
    observables: tuple

    def __post_init__(self):
        obs = tuple(self.observables)
        if not obs:
            raise DimensionError("observable set is empty")
        d = obs[0].dim
        for ob in obs:
            if ob.dim != d:
                raise DimensionError("observables must share one dimension")
        object.__setattr__(self, "observables", obs)

    @property
    def dim(self) -> int:
        return self.observables[0].dim

    @property
    def labels(self):
        return [ob.label for ob in self.observables]

    def __len__(self):
        return len(self.observables)

    def matrix_stack(self) -> np.ndarray:
        return np.stack([ob.matrix for ob in self.observables])


def check_parameters(spec: CircuitSpec, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=np.float64).ravel()
    if th.shape[0] != spec.depth:
        raise DimensionError(f"{th.shape[0]} parameters for depth {spec.depth}")
    return th


def build_unitary(spec: CircuitSpec, theta) -> UnitaryOperator:
    th = check_parameters(spec, theta)
    u = np.eye(spec.d, dtype=np.complex128)
    for lay, angle in zip(spec.layers, th):
        u = lay.w.matrix @ u
        u = lay.rotation(angle) @ u
    return UnitaryOperator(u)


def model_output(spec: CircuitSpec, theta, rho: DensityMatrix, obs: ObservableSet) -> np.ndarray:
    """f_i = Tr(U rho U+ O_i), checked real."""
    if rho.dim != spec.d or obs.dim != spec.d:
        raise DimensionError("state/observable dimension does not match circuit")
    u = build_unitary(spec, theta).matrix
    evolved = u @ rho.matrix @ u.conj().T
    vals = np.array([np.trace(evolved @ ob.matrix) for ob in obs.observables])
    if np.max(np.abs(vals.imag)) > 1e-10:
        raise ArithmeticError("model output has non-negligible imaginary part")
    return vals.real


def embedded_single_qubit(n_qubits: int, wire: int, gate2: np.ndarray) -> np.ndarray:
    if not 0 <= wire < n_qubits:
        raise DimensionError(f"wire {wire} out of range for n={n_qubits}")
    left = np.eye(2**wire, dtype=np.complex128)
    right = np.eye(2 ** (n_qubits - wire - 1), dtype=np.complex128)
    return np.kron(np.kron(left, gate2), right)


def cz_chain_diag(n_qubits: int) -> np.ndarray:
    """Diagonal of the CZ entangler chain on adjacent pairs."""
    d = 2**n_qubits
    diag = np.ones(d, dtype=np.complex128)
    for idx in range(d):
        bits = [(idx >> (n_qubits - 1 - k)) & 1 for k in range(n_qubits)]
        sign = sum(bits[k] * bits[k + 1] for k in range(n_qubits - 1))
        diag[idx] = (-1.0) ** sign
    return diag


def pauli_z_observables(n_qubits: int) -> ObservableSet:
    """Single-wire Z observables, one per qubit."""
    obs = []
    for wire in range(n_qubits):
        label = "".join("Z" if k == wire else "I" for k in range(n_qubits))
        obs.append(HermitianObservable(embedded_single_qubit(n_qubits, wire, PAULI_Z),
                                       label=label))
    return ObservableSet(tuple(obs))


def _ensemble_draws(n_qubits: int, depth: int, rng: np.random.Generator):
    """One sample's gate randomness: Ginibre blocks then uniform angles.

    The draw order (all complex blocks, then thetas) is part of the
    seeded-reproducibility contract; the n=1 kernel consumes only the
    leading 2x2 corner of its single block column.
    """
    n_pairs = max(1, n_qubits - 1)
    shape = (depth, n_pairs, 4, 4)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    th = rng.uniform(0.0, 2 * np.pi, size=depth)
    return g, th


def random_circuit(n_qubits: int, depth: int, rng: np.random.Generator) -> CircuitSpec:
    """One draw from the layered ensemble, as an explicit CircuitSpec.

    Parameter values are not stored in a CircuitSpec; draw them
    uniformly on [0, 2pi) via sample_parameters.
    """
    if n_qubits < 1 or depth < 1:
        raise DimensionError("need n_qubits >= 1 and depth >= 1")
    d = 2**n_qubits
    if d > LIMITS.max_dim:
        raise ResourceLimitError(f"d={d} exceeds dense cap {LIMITS.max_dim}")
    g, _ = _ensemble_draws(n_qubits, depth, rng)
    kern = get_kernels("numpy")
    cz = cz_chain_diag(n_qubits)
    layers = []
    for layer in range(depth):
        if n_qubits == 1:
            w = kern.haar_from_ginibre_batch(g[layer, :1, :2, :2])[0]
        else:
            w = np.eye(d, dtype=np.complex128)
            for pair in range(n_qubits - 1):
                gate = kern.haar_from_ginibre_batch(g[layer, pair:pair + 1])[0]
                left = np.eye(2**pair, dtype=np.complex128)
                right = np.eye(2 ** (n_qubits - pair - 2), dtype=np.complex128)
                w = np.kron(np.kron(left, gate), right) @ w
            w = np.diag(cz) @ w
        wire = layer % n_qubits
        x = HermitianObservable(embedded_single_qubit(n_qubits, wire, PAULI_Y),
                                label=f"Y@{wire}")
        layers.append(Layer(UnitaryOperator(w), x))
    return CircuitSpec(n_qubits=n_qubits, layers=tuple(layers))


def sample_parameters(depth: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 2 * np.pi, size=depth)


def haar_layer_circuit(n_qubits: int, depth: int, rng: np.random.Generator) -> CircuitSpec:
    """Layered ansatz with each W a full Haar unitary on all n qubits.

    Averages over this ensemble match global-Haar sandwich statistics
    exactly, which the local-gate ensemble only approaches; generators
    follow the same Y-on-(layer mod n) convention.
    """
    from .linalg import sample_haar_unitary

    if n_qubits < 1 or depth < 1:
        raise DimensionError("need n_qubits >= 1 and depth >= 1")
    d = 2**n_qubits
    if d > LIMITS.max_dim:
        raise ResourceLimitError(f"d={d} exceeds dense cap {LIMITS.max_dim}")
    layers = []
    for layer in range(depth):
        w = sample_haar_unitary(d, rng)
        wire = layer % n_qubits
        x = HermitianObservable(embedded_single_qubit(n_qubits, wire, PAULI_Y),
                                label=f"Y@{wire}")
        layers.append(Layer(w, x))
    return CircuitSpec(n_qubits=n_qubits, layers=tuple(layers))


def zz_feature_map(x, n_qubits: int, reps: int = 2, full_pairs: bool = False) -> DensityMatrix:
    """Pure encoded state rho(x) from the layered phase map.

    Per repetition: Hadamards on every wire, single-qubit phases
    exp(i x_j Z_j), then pair phases exp(i (pi - x_j)(pi - x_k) Z_j Z_k)
    on adjacent pairs (all pairs with full_pairs=True).
    """
    feats = np.asarray(x, dtype=np.float64).ravel()
    if feats.shape[0] != n_qubits:
        raise DimensionError(f"{feats.shape[0]} features for {n_qubits} qubits")
    if reps < 1:
        raise ContractViolation("reps must be >= 1")
    d = 2**n_qubits
    zsign = np.empty((n_qubits, d))
    for wire in range(n_qubits):
        for idx in range(d):
            bit = (idx >> (n_qubits - 1 - wire)) & 1
            zsign[wire, idx] = 1.0 - 2.0 * bit
    had = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
    h_all = had
    for _ in range(n_qubits - 1):
        h_all = np.kron(h_all, had)
    if full_pairs:
        pairs = [(j, k) for j in range(n_qubits) for k in range(j + 1, n_qubits)]
    else:
        pairs = [(j, j + 1) for j in range(n_qubits - 1)]
    phase = np.zeros(d)
    for wire in range(n_qubits):
        phase = phase + feats[wire] * zsign[wire]
    for j, k in pairs:
        phase = phase + (np.pi - feats[j]) * (np.pi - feats[k]) * zsign[j] * zsign[k]
    psi = np.zeros(d, dtype=np.complex128)
    psi[0] = 1.0
    for _ in range(reps):
        psi = h_all @ psi
        psi = np.exp(1j * phase) * psi
    return pure_state(psi)


def sample_outputs(n_qubits: int, depth: int, rho: DensityMatrix, obs: ObservableSet,
                   n_samples: int, rng: np.random.Generator,
                   threads: int = 1, backend=None) -> np.ndarray:
    """(n_samples, n_obs) outputs over the random layered ensemble.

    Each sample's randomness comes from its own spawned substream, so
    values are independent of chunking, thread count, and backend.
    """
    if n_samples < 1:
        raise DimensionError("need at least one sample")
    d = 2**n_qubits
    if rho.dim != d or obs.dim != d:
        raise DimensionError("state/observable dimension does not match qubit count")
    kern = get_kernels(backend)
    cz = cz_chain_diag(n_qubits)
    obs_stack = obs.matrix_stack()
    children = rng.spawn(n_samples)
    chunk = LIMITS.mc_chunk
    bounds = list(range(0, n_samples, chunk)) + [n_samples]

    def work(lo, hi):
        gs = []
        ths = []
        for s in range(lo, hi):
            g, th = _ensemble_draws(n_qubits, depth, children[s])
            gs.append(g)
            ths.append(th)
        return kern.circuit_output_samples(np.stack(gs), np.stack(ths), n_qubits,
                                           cz, rho.matrix, obs_stack)

    jobs = list(zip(bounds[:-1], bounds[1:]))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: work(*ab), jobs))
    else:
        parts = [work(lo, hi) for lo, hi in jobs]
    return np.concatenate(parts, axis=0)


def write_samples_csv(path, values: np.ndarray, labels) -> None:
    """Long-form per-sample table with header sample_id,obs_label,value.

    Written aside and renamed so a crash never leaves a truncated table.
    """
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "obs_label", "value"])
        for sid in range(values.shape[0]):
            for j, label in enumerate(labels):
                writer.writerow([sid, label, repr(float(values[sid, j]))])
    os.replace(tmp, path)


def _complex_to_pairs(mat: np.ndarray):
    return [[[float(v.real), float(v.imag)] for v in row] for row in mat]


def _pairs_to_complex(data) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data],
                    dtype=np.complex128)


def spec_to_json(spec: CircuitSpec) -> str:
    """Serialize; complex entries become [re, im] pairs."""
    doc = {
        "n_qubits": spec.n_qubits,
        "layers": [
            {
                "w": _complex_to_pairs(lay.w.matrix),
                "x": _complex_to_pairs(lay.x.matrix),
                "x_label": lay.x.label,
            }
            for lay in spec.layers
        ],
    }
    return json.dumps(doc)


def spec_from_json(text: str) -> CircuitSpec:
    doc = json.loads(text)
    layers = tuple(
        Layer(
            UnitaryOperator(_pairs_to_complex(item["w"])),
            HermitianObservable(_pairs_to_complex(item["x"]), label=item.get("x_label", "")),
        )
        for item in doc["layers"]
    )
    return CircuitSpec(n_qubits=int(doc["n_qubits"]), layers=layers)
