"""Function-space Gaussian inference over circuit outputs.

The prior covariance between output channel i at state alpha and channel
j at state beta is K_{ij,ab} = (1/d) M_ij G_ab with M_ij = Tr(O_i O_j)/d
and G_ab a state-overlap Gram. With that product structure the posterior
conditioning happens once in the G block and every channel pair reuses
it, scaled by M_ij. The exact prior (second connected Haar moment per
entry) is generally not separable, so a dense four-index kernel path is
kept alongside.

State-axis convention: observed points first, prediction points after.
Flattened joint indices are channel-major, flat = i * n_points + alpha.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .config import TOLERANCES
from .errors import ConditioningError, ContractViolation, DimensionError
from .linalg import DensityMatrix
from .moments import MomentSpec, connected_moment

JITTER_SCALE = 1e-10


def fidelity_kernel(rho: DensityMatrix, rho2: DensityMatrix) -> float:
    if rho.dim != rho2.dim:
        raise DimensionError("fidelity kernel needs equal dimensions")
    return float(np.trace(rho.matrix @ rho2.matrix).real)


def state_gram(states) -> np.ndarray:
    n = len(states)
    g = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            g[a, b] = g[b, a] = fidelity_kernel(states[a], states[b])
    return g


@dataclass(frozen=True)
class ObservedSet:
    states: tuple
    y: np.ndarray  # (n_channels, n_points)

    def __post_init__(self):
        states = tuple(self.states)
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 2:
            raise DimensionError("labels must be a (channels x points) matrix")
        if y.shape[1] != len(states):
            raise DimensionError(f"{y.shape[1]} label columns for {len(states)} states")
        if y.size and not np.all(np.isfinite(y)):
            raise ContractViolation("labels must be finite")
        if states:
            d = states[0].dim
            for s in states:
                if s.dim != d:
                    raise DimensionError("observed states must share one dimension")
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "y", y)

    @property
    def n_points(self):
        return len(self.states)

    @property
    def n_channels(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class PredictionSet:
    states: tuple

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise DimensionError("prediction set is empty")
        d = states[0].dim
        for s in states:
            if s.dim != d:
                raise DimensionError("prediction states must share one dimension")
        object.__setattr__(self, "states", states)

    @property
    def n_points(self):
        return len(self.states)


def _check_symmetric(mat, name):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"{name} must be square")
    if mat.size and np.max(np.abs(mat - mat.T)) > 1e-10 * max(1.0, np.max(np.abs(mat))):
        raise ContractViolation(f"{name} is not symmetric")


@dataclass(frozen=True)
class KernelMatrix:
    """Product kernel unless `dense` is set; then entries come from there.

    dense has shape (n, n, P, P) indexed [i, j, alpha, beta] and must be
    symmetric under the joint swap (i,alpha)<->(j,beta).
    """

    output_block: np.ndarray  # M, (n, n)
    state_block: np.ndarray   # G, (P, P)
    dim: int                  # Hilbert dimension supplying the 1/d scale
    dense: np.ndarray = None

    def __post_init__(self):
        m = np.asarray(self.output_block, dtype=np.float64)
        g = np.asarray(self.state_block, dtype=np.float64)
        _check_symmetric(m, "output block")
        _check_symmetric(g, "state block")
        if self.dim < 1:
            raise DimensionError("dim must be positive")
        if g.size:
            evals = np.linalg.eigvalsh(g)
            floor = TOLERANCES.psd_eigenvalue * max(1.0, float(evals[-1]))
            if evals[0] < floor:
                raise ContractViolation(f"state block not PSD: min eigenvalue {evals[0]:.3e}")
        dense = self.dense
        if dense is not None:
            dense = np.asarray(dense, dtype=np.float64)
            n, p = m.shape[0], g.shape[0]
            if dense.shape != (n, n, p, p):
                raise DimensionError("dense kernel shape mismatch")
            swapped = dense.transpose(1, 0, 3, 2)
            if np.max(np.abs(dense - swapped)) > 1e-10 * max(1.0, np.max(np.abs(dense))):
                raise ContractViolation("dense kernel not symmetric under joint swap")
            dense = dense.copy()
            dense.setflags(write=False)
        for arr in (m, g):
            arr.setflags(write=False)
        object.__setattr__(self, "output_block", m)
        object.__setattr__(self, "state_block", g)
        object.__setattr__(self, "dense", dense)

    @classmethod
    def from_dense(cls, dense, dim: int) -> "KernelMatrix":
        """Wrap a dense (n, n, P, P) kernel that has no product structure.

        The block fields are filled with identity placeholders; every
        entry value comes from `dense`. Per-channel jitter then scales
        as (1/dim) on the diagonal.
        """
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 4 or dense.shape[0] != dense.shape[1] \
                or dense.shape[2] != dense.shape[3]:
            raise DimensionError("dense kernel must have shape (n, n, P, P)")
        n, p = dense.shape[0], dense.shape[2]
        return cls(np.eye(n), np.eye(p), dim=dim, dense=dense)

    @property
    def n_channels(self):
        return self.output_block.shape[0]

    @property
    def n_points(self):
        return self.state_block.shape[0]

    @property
    def separable(self):
        return self.dense is None

    def entries(self) -> np.ndarray:
        """Four-index kernel (n, n, P, P)."""
        if self.dense is not None:
            return self.dense
        return np.einsum("ij,ab->ijab", self.output_block / self.dim, self.state_block)

    def flat(self) -> np.ndarray:
        """Channel-major joint matrix, flat index i*P + alpha."""
        n, p = self.n_channels, self.n_points
        return self.entries().transpose(0, 2, 1, 3).reshape(n * p, n * p)


def prior_kernel(obs, states, mode: str = "leading") -> KernelMatrix:
    """Prior kernel over output channels x states.

    leading: product form, M_ij = Tr(O_i O_j)/d with the overlap Gram.
    exact: second connected Haar moment per entry; the product blocks
    are still recorded but entry values come from the dense array.
    """
    states = tuple(states)
    if not states or len(obs) == 0:
        raise DimensionError("need at least one state and one observable")
    d = obs.dim
    for s in states:
        if s.dim != d:
            raise DimensionError("state dimension does not match observables")
    n = len(obs)
    m = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            m[i, j] = m[j, i] = np.trace(obs.observables[i].matrix
                                         @ obs.observables[j].matrix).real / d
    g = state_gram(states)
    if mode == "leading":
        return KernelMatrix(m, g, dim=d)
    if mode == "exact":
        p = len(states)
        dense = np.empty((n, n, p, p))
        for i in range(n):
            for j in range(n):
                for a in range(p):
                    for b in range(p):
                        if j < i or (j == i and b < a):
                            dense[i, j, a, b] = dense[j, i, b, a]
                            continue
                        spec = MomentSpec(((states[a], obs.observables[i]),
                                           (states[b], obs.observables[j])))
                        dense[i, j, a, b] = connected_moment(spec, 2)
        return KernelMatrix(m, g, dim=d, dense=dense)
    raise ContractViolation(f"unknown prior mode {mode!r}")


@dataclass(frozen=True)
class GPPosterior:
    mean: np.ndarray         # (n, P_pred)
    covariance: np.ndarray   # (n, n, P_pred, P_pred)
    log_marginal: np.ndarray = None  # per channel, when requested

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        n, p = mean.shape
        if cov.shape != (n, n, p, p):
            raise DimensionError("posterior covariance shape mismatch")
        var = np.einsum("iiaa->ia", cov)
        if var.size and var.min() < TOLERANCES.psd_eigenvalue * max(1.0, float(np.abs(cov).max())):
            raise ContractViolation(f"negative posterior variance {var.min():.3e}")
        for arr in (mean, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def variance(self) -> np.ndarray:
        return np.einsum("iiaa->ia", self.covariance).copy()


def _default_jitter(g_oo: np.ndarray) -> float:
    n = g_oo.shape[0]
    return JITTER_SCALE * float(np.trace(g_oo)) / n if n else 0.0


def _chol(a: np.ndarray, what: str):
    try:
        return cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        evals = np.linalg.eigvalsh(a)
        cond = float("inf") if evals[0] <= 0 else float(evals[-1] / evals[0])
        raise ConditioningError(f"{what} not positive definite after jitter",
                                condition_number=cond) from exc


def gp_posterior(kernel: KernelMatrix, observed: ObservedSet, predict: PredictionSet,
                 jitter: float = None, with_log_marginal: bool = False) -> GPPosterior:
    """Condition the prior on the observed labels.

    Mean is K(pred,obs) K(obs,obs)^-1 y per channel; covariance is the
    Schur complement. Jitter (default 1e-10 * trace(G_oo)/|obs|) is added
    once to the G-block diagonal; on the dense path the equivalent
    (1/d) M_ii-scaled amount goes on each channel's diagonal.
    """
    n_o, n_p = observed.n_points, predict.n_points
    n = kernel.n_channels
    if observed.n_channels != n and n_o > 0:
        raise DimensionError("label channel count does not match kernel")
    if kernel.n_points != n_o + n_p:
        raise DimensionError("kernel state block must cover observed then prediction points")
    m = kernel.output_block
    g = kernel.state_block
    d = kernel.dim
    logml = None

    if n_o == 0:
        prior = kernel.entries()[:, :, :, :]
        mean = np.zeros((n, n_p))
        if with_log_marginal:
            logml = np.zeros(n)
        return GPPosterior(mean, prior, log_marginal=logml)

    g_oo = g[:n_o, :n_o]
    jit = _default_jitter(g_oo) if jitter is None else float(jitter)

    if kernel.separable:
        a = g_oo + jit * np.eye(n_o)
        cho = _chol(a, "observed-state Gram")
        g_po = g[n_o:, :n_o]
        g_pp = g[n_o:, n_o:]
        alpha = cho_solve(cho, observed.y.T)          # (n_o, n)
        mean = (g_po @ alpha).T                       # (n, n_p)
        schur = g_pp - g_po @ cho_solve(cho, g_po.T)
        schur = 0.5 * (schur + schur.T)
        cov = np.einsum("ij,ab->ijab", m / d, schur)
        if with_log_marginal:
            logml = np.empty(n)
            ldet_a = 2.0 * np.sum(np.log(np.diag(cho[0])))
            for i in range(n):
                scale = m[i, i] / d
                if scale <= 0:
                    raise ConditioningError(
                        "channel marginal covariance not positive definite",
                        condition_number=float("inf"))
                quad = float(observed.y[i] @ cho_solve(cho, observed.y[i])) / scale
                ldet = n_o * np.log(scale) + ldet_a
                logml[i] = -0.5 * quad - 0.5 * (ldet + n_o * np.log(2 * np.pi))
        return GPPosterior(mean, cov, log_marginal=logml)

    # dense path: joint solve over channel-major flattened indices
    dense = kernel.dense
    k_oo = dense[:, :, :n_o, :n_o].transpose(0, 2, 1, 3).reshape(n * n_o, n * n_o).copy()
    k_po = dense[:, :, n_o:, :n_o].transpose(0, 2, 1, 3).reshape(n * n_p, n * n_o)
    k_pp = dense[:, :, n_o:, n_o:].transpose(0, 2, 1, 3).reshape(n * n_p, n * n_p)
    diag_jit = np.repeat(np.diag(m) / d, n_o) * jit
    k_oo[np.diag_indices_from(k_oo)] += diag_jit
    cho = _chol(k_oo, "observed-block kernel")
    yflat = observed.y.reshape(-1)
    mean = (k_po @ cho_solve(cho, yflat)).reshape(n, n_p)
    schur = k_pp - k_po @ cho_solve(cho, k_po.T)
    schur = 0.5 * (schur + schur.T)
    cov = schur.reshape(n, n_p, n, n_p).transpose(0, 2, 1, 3)
    if with_log_marginal:
        logml = np.empty(n)
        for i in range(n):
            k_i = dense[i, i, :n_o, :n_o] + jit * (m[i, i] / d) * np.eye(n_o)
            cho_i = _chol(k_i, f"channel {i} marginal covariance")
            quad = float(observed.y[i] @ cho_solve(cho_i, observed.y[i]))
            ldet = 2.0 * np.sum(np.log(np.diag(cho_i[0])))
            logml[i] = -0.5 * quad - 0.5 * (ldet + n_o * np.log(2 * np.pi))
    return GPPosterior(mean, cov, log_marginal=logml)


def marginal_predictive(observed: ObservedSet, predict: PredictionSet,
                        kernel: KernelMatrix, jitter: float = None) -> GPPosterior:
    """gp_posterior plus the per-channel log marginal likelihood of y."""
    return gp_posterior(kernel, observed, predict, jitter=jitter, with_log_marginal=True)
