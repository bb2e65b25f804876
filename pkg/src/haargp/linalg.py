"""Dense complex operator foundation.

Validated wrapper types around complex128 ndarrays (states, observables,
unitaries, tensor-factor permutations) plus Haar sampling and Hermitian
exponentials. Everything downstream builds on these.

Wrapped arrays are frozen (writeable=False) so instances can be shared
across threads without copying.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import LIMITS, TOLERANCES
from .errors import ContractViolation, DimensionError, ResourceLimitError


def _as_square_complex(matrix, what: str) -> np.ndarray:
    arr = np.array(matrix, dtype=np.complex128, copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{what} must be a square matrix, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise DimensionError(f"{what} must have positive dimension")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ContractViolation(f"{what} contains NaN or Inf entries")
    arr.flags.writeable = False
    return arr


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def matmul(a, b):
    return a @ b


def kron(a, b):
    return np.kron(a, b)


def trace(a) -> complex:
    return complex(np.trace(a))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(a))


def eigh(a):
    """Hermitian eigendecomposition (ascending eigenvalues)."""
    return np.linalg.eigh(a)


def solve(a, b):
    return np.linalg.solve(a, b)


def pinv(a, rcond: float = 1e-12):
    return np.linalg.pinv(a, rcond=rcond)


def is_hermitian(arr: np.ndarray, tol: float) -> bool:
    return bool(np.max(np.abs(arr - arr.conj().T)) <= tol)


@dataclass(frozen=True)
class DensityMatrix:
    """d x d state: Hermitian, unit trace, PSD (within tolerances)."""

    matrix: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        arr = _as_square_complex(self.matrix, "density matrix")
        tol = TOLERANCES.construction
        if not is_hermitian(arr, tol):
            raise ContractViolation("density matrix is not Hermitian within tolerance")
        tr = np.trace(arr)
        if abs(tr - 1.0) > tol:
            raise ContractViolation(f"density matrix trace {tr} != 1")
        evals = np.linalg.eigvalsh(arr)
        if evals.min() < TOLERANCES.psd_eigenvalue:
            raise ContractViolation(f"density matrix has negative eigenvalue {evals.min()}")
        object.__setattr__(self, "matrix", arr)
        object.__setattr__(self, "dim", arr.shape[0])


@dataclass(frozen=True)
class HermitianObservable:
    """d x d Hermitian operator with a text label (e.g. a Pauli string)."""

    matrix: np.ndarray
    label: str = ""
    dim: int = field(init=False)

    def __post_init__(self):
        arr = _as_square_complex(self.matrix, "observable")
        if not is_hermitian(arr, TOLERANCES.construction):
            raise ContractViolation(f"observable {self.label!r} is not Hermitian")
        object.__setattr__(self, "matrix", arr)
        object.__setattr__(self, "dim", arr.shape[0])


@dataclass(frozen=True)
class UnitaryOperator:
    matrix: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        arr = _as_square_complex(self.matrix, "unitary")
        d = arr.shape[0]
        err = np.linalg.norm(arr @ arr.conj().T - np.eye(d))
        if err > TOLERANCES.unitarity:
            raise ContractViolation(f"matrix is not unitary: ||UU+ - I||_F = {err:.3e}")
        object.__setattr__(self, "matrix", arr)
        object.__setattr__(self, "dim", d)


@dataclass(frozen=True)
class PermutationOperator:
    """Operator permuting p tensor factors of local dimension d.

    sigma is stored 0-based: factor k of the input goes to slot sigma[k]
    of the output.
    """

    p: int
    local_dim: int
    sigma: tuple
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.local_dim**self.p


def check_permutation(sigma) -> tuple:
    perm = tuple(int(s) for s in sigma)
    if sorted(perm) != list(range(len(perm))):
        raise ContractViolation(f"{sigma!r} is not a bijection on 0..{len(perm) - 1}")
    return perm


def cycles_of(sigma) -> list:
    """Cycle decomposition of a 0-based permutation, as lists of indices."""
    perm = tuple(sigma)
    seen = [False] * len(perm)
    out = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        cyc = []
        k = start
        while not seen[k]:
            seen[k] = True
            cyc.append(k)
            k = perm[k]
        out.append(cyc)
    return out


def sample_haar_unitary(d: int, rng: np.random.Generator) -> UnitaryOperator:
    """Draw from the unitarily invariant distribution on U(d).

    Ginibre draw + QR; the Q columns are rescaled by the phases of R's
    diagonal, without which the QR gauge biases the distribution.
    """
    if d < 1:
        raise DimensionError(f"dimension must be >= 1, got {d}")
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    diag = np.diagonal(r)
    q = q * (diag / np.abs(diag))
    return UnitaryOperator(q)


def haar_unitary_from_ginibre(g: np.ndarray) -> np.ndarray:
    """QR + phase fix on a pre-drawn Ginibre matrix; returns a bare ndarray.

    Split out so Monte Carlo kernels can consume externally generated
    randomness (identical draws on every backend).
    """
    q, r = np.linalg.qr(g)
    diag = np.diagonal(r)
    return q * (diag / np.abs(diag))


def expm_hermitian_generator(x: HermitianObservable, theta: float) -> UnitaryOperator:
    """exp(i*theta*X) for Hermitian X, via eigendecomposition."""
    vals, vecs = np.linalg.eigh(x.matrix)
    u = (vecs * np.exp(1j * theta * vals)) @ vecs.conj().T
    return UnitaryOperator(u)


def permutation_operator(sigma, d: int) -> PermutationOperator:
    """Matrix on (C^d)^{otimes p} sending factor k to slot sigma[k]."""
    perm = check_permutation(sigma)
    p = len(perm)
    if d < 1:
        raise DimensionError(f"local dimension must be >= 1, got {d}")
    total = d**p
    if total > LIMITS.max_tensor_dim:
        raise ResourceLimitError(
            f"d^p = {total} exceeds the {LIMITS.max_tensor_dim} dense tensor cap"
        )
    mat = np.zeros((total, total), dtype=np.complex128)
    for idx in np.ndindex(*([d] * p)):
        target = [0] * p
        for k in range(p):
            target[perm[k]] = idx[k]
        row = int(np.ravel_multi_index(tuple(target), [d] * p))
        col = int(np.ravel_multi_index(idx, [d] * p))
        mat[row, col] = 1.0
    mat.flags.writeable = False
    return PermutationOperator(p=p, local_dim=d, sigma=perm, matrix=mat)


# small fixed operators used throughout tests and experiments

PAULI_I = np.eye(2, dtype=np.complex128)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)

_PAULI = {"I": PAULI_I, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}


def pauli_string(label: str) -> HermitianObservable:
    """Tensor product observable from a label like 'ZI' or 'XY'."""
    if not label or any(c not in _PAULI for c in label):
        raise ContractViolation(f"bad Pauli label {label!r}")
    mat = _PAULI[label[0]]
    for c in label[1:]:
        mat = np.kron(mat, _PAULI[c])
    return HermitianObservable(mat, label=label)


def basis_state(d: int, k: int = 0) -> DensityMatrix:
    """|k><k| in dimension d."""
    if not 0 <= k < d:
        raise DimensionError(f"basis index {k} out of range for d={d}")
    m = np.zeros((d, d), dtype=np.complex128)
    m[k, k] = 1.0
    return DensityMatrix(m)


def pure_state(vec) -> DensityMatrix:
    v = np.asarray(vec, dtype=np.complex128).ravel()
    n = np.linalg.norm(v)
    if n == 0:
        raise ContractViolation("zero vector is not a state")
    v = v / n
    return DensityMatrix(np.outer(v, v.conj()))


def random_pure_state(d: int, rng: np.random.Generator) -> DensityMatrix:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return pure_state(v)


def random_density_matrix(d: int, rng: np.random.Generator, rank=None) -> DensityMatrix:
    """Mixed state from a normalized Wishart draw."""
    r = rank or d
    g = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
    w = g @ g.conj().T
    return DensityMatrix(w / np.trace(w))


def random_hermitian(d: int, rng: np.random.Generator, traceless=False) -> HermitianObservable:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (g + g.conj().T) / 2
    if traceless:
        h = h - np.trace(h) / d * np.eye(d)
    return HermitianObservable(h, label="random")
