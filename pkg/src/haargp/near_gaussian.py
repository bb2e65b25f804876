"""Quartic (nearly Gaussian) model of the output distribution.

Joint output coordinates are flattened channel-major (output channel i,
datapoint alpha) -> flat = i * n_points + alpha, so the couplings are a
plain matrix K and 4-index array V. The density is

    p(f) = exp(-S(f)) / Z,  S(f) = 1/2 f.K.f + (lam/4!) sum V f f f f,

with lam a formal bookkeeping scalar fixed to 1 by default; the physical
smallness lives in V itself. With that sign choice the propagator is
C = K^-1 and the printed first-order moment formulas hold:

    second moment   C - (lam/2) V.C.C.C
    connected 4th  -lam V.C.C.C.C

V > 0 then damps the tails, so the density stays normalizable.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, ContractViolation, DimensionError

_PERMS4 = list(itertools.permutations(range(4)))


def symmetrize_four(v: np.ndarray) -> np.ndarray:
    """Average over all 24 index orders; idempotent."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4 or len(set(v.shape)) != 1:
        raise DimensionError("need a 4-index array with equal axis lengths")
    out = np.zeros_like(v)
    for perm in _PERMS4:
        out += v.transpose(perm)
    return out / len(_PERMS4)


def _check_spd(k: np.ndarray, name: str):
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DimensionError(f"{name} must be square")
    if np.max(np.abs(k - k.T)) > 1e-10 * max(1.0, float(np.abs(k).max())):
        raise ContractViolation(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        evals = np.linalg.eigvalsh(k)
        cond = float("inf") if evals[0] <= 0 else float(evals[-1] / evals[0])
        raise ConditioningError(f"{name} is not positive definite",
                                condition_number=cond) from exc


@dataclass(frozen=True)
class QuarticAction:
    k_coupling: np.ndarray
    v_coupling: np.ndarray
    lam: float = 1.0
    warning: str = None

    def __post_init__(self):
        k = np.asarray(self.k_coupling, dtype=np.float64)
        _check_spd(k, "quadratic coupling")
        v = symmetrize_four(self.v_coupling)
        if v.shape[0] != k.shape[0]:
            raise DimensionError("coupling sizes disagree")
        k = 0.5 * (k + k.T)
        for arr in (k, v):
            arr.setflags(write=False)
        object.__setattr__(self, "k_coupling", k)
        object.__setattr__(self, "v_coupling", v)

    @property
    def size(self):
        return self.k_coupling.shape[0]

    def propagator(self) -> np.ndarray:
        return np.linalg.inv(self.k_coupling)


@dataclass(frozen=True)
class MomentSet:
    second: np.ndarray
    fourth_connected: np.ndarray
    source: str = "analytic"

    def __post_init__(self):
        if self.source not in ("analytic", "monte-carlo"):
            raise ContractViolation(f"unknown moment source {self.source!r}")
        q = np.asarray(self.second, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionError("second-moment matrix must be square")
        if np.max(np.abs(q - q.T)) > 1e-10 * max(1.0, float(np.abs(q).max())):
            raise ContractViolation("second-moment matrix is not symmetric")
        v = symmetrize_four(self.fourth_connected)
        if v.shape[0] != q.shape[0]:
            raise DimensionError("moment array sizes disagree")
        q = 0.5 * (q + q.T)
        for arr in (q, v):
            arr.setflags(write=False)
        object.__setattr__(self, "second", q)
        object.__setattr__(self, "fourth_connected", v)

    @property
    def size(self):
        return self.second.shape[0]


def action_evaluate(action: QuarticAction, f) -> float:
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.shape[0] != action.size:
        raise DimensionError("vector length does not match couplings")
    quad = 0.5 * float(f @ action.k_coupling @ f)
    quart = float(np.einsum("abcd,a,b,c,d->", action.v_coupling, f, f, f, f))
    return quad + action.lam / 24.0 * quart


def _w_contraction(v: np.ndarray, c: np.ndarray) -> np.ndarray:
    """W_ab = sum V_cdef C_ac C_bd C_ef (one-loop second-moment shift)."""
    return np.einsum("cdef,ac,bd,ef->ab", v, c, c, c)


def corrected_covariance(action: QuarticAction) -> np.ndarray:
    """Second moment to first order: C - (lam/2) W(V, C)."""
    c = action.propagator()
    out = c - 0.5 * action.lam * _w_contraction(action.v_coupling, c)
    return 0.5 * (out + out.T)


def predicted_connected_four(action: QuarticAction) -> np.ndarray:
    """Connected fourth moment to first order: -lam V.C.C.C.C."""
    c = action.propagator()
    return -action.lam * np.einsum("efgh,ae,bf,cg,dh->abcd",
                                   action.v_coupling, c, c, c, c)


def couplings_from_moments(moments: MomentSet, lam: float = 1.0,
                           perturbative_threshold: float = 0.1) -> QuarticAction:
    """First-order inversion of the moment formulas.

    V comes from contracting the connected 4th with four inverse second
    moments; the quadratic coupling is then the inverse of the propagator
    re-substituted through at most two fixed-point rounds (the O(lam^2)
    truncation makes more rounds meaningless). A result outside the
    perturbative regime carries a warning string instead of failing.
    """
    q = moments.second
    _check_spd(q, "second-moment matrix")
    q_inv = np.linalg.inv(q)
    vbar = moments.fourth_connected
    v = -np.einsum("abcd,ae,bf,cg,dh->efgh", vbar, q_inv, q_inv, q_inv, q_inv) / lam
    c = q.copy()
    for _ in range(2):
        c = q + 0.5 * lam * _w_contraction(v, c)
    k = np.linalg.inv(0.5 * (c + c.T))
    k = 0.5 * (k + k.T)
    scale = float(np.max(np.abs(np.diag(q)))) ** 2
    ratio = float(np.max(np.abs(vbar))) / scale if scale > 0 else float("inf")
    warning = None
    if ratio > perturbative_threshold:
        warning = (f"connected fourth moment is not small: max|V4|/diag(Q)^2 = "
                   f"{ratio:.3g} exceeds {perturbative_threshold}")
    return QuarticAction(k, v, lam=lam, warning=warning)


def _conditional_pieces(action: QuarticAction, observed, y):
    observed = np.asarray(observed, dtype=int)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = action.size
    if y.shape[0] != observed.shape[0]:
        raise DimensionError("label count does not match observed index count")
    if observed.size and (observed.min() < 0 or observed.max() >= m):
        raise DimensionError("observed index out of range")
    if len(set(observed.tolist())) != observed.size:
        raise ContractViolation("observed indices repeat")
    c = action.propagator()
    if observed.size == 0:
        return np.zeros(m), c, observed, y
    c_oo = c[np.ix_(observed, observed)]
    c_ao = c[:, observed]
    try:
        sol = np.linalg.solve(c_oo, c_ao.T)
        m_inf = c_ao @ np.linalg.solve(c_oo, y)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("observed-block covariance is singular") from exc
    # conditional mean of all coordinates given the observed ones
    m_inf[observed] = y
    # conditional covariance; observed rows/columns vanish identically
    s_tilde = c - c_ao @ sol
    s_tilde[observed, :] = 0.0
    s_tilde[:, observed] = 0.0
    return m_inf, s_tilde, observed, y


def corrected_mean(action: QuarticAction, y, observed) -> np.ndarray:
    """First-order conditional mean over every coordinate.

    Observed entries carry their labels exactly; the rest get the
    Gaussian conditional mean plus the quartic correction

        - (lam/3!) sum_{n p q r} V_npqr S_bn (a_p a_q a_r
              + a_p S_qr + a_q S_pr + a_r S_pq)

    with a the label/conditional-mean vector and S the conditional
    covariance (zero on observed rows and columns). Every correction
    term carries at least one factor of a, so y = 0 gives 0.
    """
    m_inf, s_tilde, observed, y = _conditional_pieces(action, observed, y)
    v = action.v_coupling
    a = m_inf
    a3 = np.einsum("p,q,r->pqr", a, a, a)
    a3 = a3 + np.einsum("p,qr->pqr", a, s_tilde) \
        + np.einsum("q,pr->pqr", a, s_tilde) \
        + np.einsum("r,pq->pqr", a, s_tilde)
    corr = np.einsum("npqr,bn,pqr->b", v, s_tilde, a3)
    out = m_inf - action.lam / 6.0 * corr
    out[observed] = y
    return out


@dataclass(frozen=True)
class GaussianityReport:
    labels: tuple
    kurtosis: np.ndarray
    kurtosis_se: np.ndarray
    pairwise: np.ndarray  # standardized connected 4th, kur4(i,i,j,j)/(var_i var_j)
    max_abs_deviation: float
    flagged: tuple        # labels with |kurtosis| > 4 SE
    degenerate: tuple     # zero-variance outputs
    n_samples: int

    def __post_init__(self):
        se = np.asarray(self.kurtosis_se)
        if se.size and np.nanmin(se) < 0:
            raise ContractViolation("standard errors must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "outputs": [
                {
                    "label": self.labels[i],
                    "excess_kurtosis": None if np.isnan(self.kurtosis[i])
                    else float(self.kurtosis[i]),
                    "std_error": None if np.isnan(self.kurtosis_se[i])
                    else float(self.kurtosis_se[i]),
                    "flagged": self.labels[i] in self.flagged,
                    "degenerate": self.labels[i] in self.degenerate,
                }
                for i in range(len(self.labels))
            ],
            "pairwise_standardized_fourth":
                [[None if np.isnan(x) else float(x) for x in row]
                 for row in self.pairwise],
            "max_abs_deviation": float(self.max_abs_deviation),
        }


def _excess_kurtosis(x: np.ndarray) -> float:
    mu = x.mean()
    c = x - mu
    m2 = np.mean(c**2)
    return float(np.mean(c**4) / m2**2 - 3.0)


def gaussianity_diagnostics(samples: np.ndarray, labels=None,
                            n_blocks: int = 100) -> GaussianityReport:
    """Excess kurtosis per output with jackknife errors, plus pairwise
    standardized connected fourth moments.

    Needs at least 1000 samples. Zero-variance outputs are reported as
    degenerate with NaN statistics rather than raising.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, k = samples.shape
    if n < 1000:
        raise DimensionError(f"need >= 1000 samples, got {n}")
    if not np.all(np.isfinite(samples)):
        raise ContractViolation("sample table has non-finite entries")
    if labels is None:
        labels = tuple(f"out{i}" for i in range(k))
    labels = tuple(labels)
    if len(labels) != k:
        raise DimensionError("label count does not match columns")

    var = samples.var(axis=0)
    scale = float(np.abs(samples).max()) if samples.size else 1.0
    degenerate = tuple(labels[i] for i in range(k) if var[i] <= (1e-12 * max(1.0, scale))**2)
    good = [i for i in range(k) if labels[i] not in degenerate]

    kurt = np.full(k, np.nan)
    se = np.full(k, np.nan)
    blocks = np.array_split(np.arange(n), min(n_blocks, n // 10))
    nb = len(blocks)
    for i in good:
        x = samples[:, i]
        kurt[i] = _excess_kurtosis(x)
        loo = np.empty(nb)
        for b, idx in enumerate(blocks):
            mask = np.ones(n, dtype=bool)
            mask[idx] = False
            loo[b] = _excess_kurtosis(x[mask])
        se[i] = np.sqrt((nb - 1) / nb * np.sum((loo - loo.mean())**2))

    centered = samples - samples.mean(axis=0)
    pairwise = np.full((k, k), np.nan)
    for i in good:
        for j in good:
            vij = np.mean(centered[:, i]**2 * centered[:, j]**2) \
                - var[i] * var[j] \
                - 2 * np.mean(centered[:, i] * centered[:, j])**2
            pairwise[i, j] = vij / (var[i] * var[j])
    flagged = tuple(labels[i] for i in good if abs(kurt[i]) > 4 * se[i])
    finite = pairwise[np.isfinite(pairwise)]
    max_dev = float(np.max(np.abs(finite))) if finite.size else 0.0
    return GaussianityReport(labels=labels, kurtosis=kurt, kurtosis_se=se,
                             pairwise=pairwise, max_abs_deviation=max_dev,
                             flagged=flagged, degenerate=degenerate, n_samples=n)


def quadrature_moments(action: QuarticAction, n_nodes: int = 240,
                       half_width_sigmas: float = 12.0):
    """Gauss-Legendre moments of exp(-S)/Z for 1 or 2 coordinates.

    Returns (mean, covariance, connected_fourth). The grid spans
    +-half_width_sigmas Gaussian standard deviations per axis and the
    normalization is computed numerically.
    """
    m = action.size
    if m not in (1, 2):
        raise DimensionError("quadrature oracle covers 1 or 2 coordinates only")
    if n_nodes < 200:
        raise ContractViolation("need at least 200 nodes per axis")
    c = action.propagator()
    sig = np.sqrt(np.diag(c))
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    axes = [(half_width_sigmas * sig[i]) * nodes for i in range(m)]
    wts = [(half_width_sigmas * sig[i]) * weights for i in range(m)]
    if m == 1:
        f = axes[0][None, :]
        w = wts[0]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        f = np.stack([g0.ravel(), g1.ravel()])
        w = np.outer(wts[0], wts[1]).ravel()
    k, v, lam = action.k_coupling, action.v_coupling, action.lam
    quad = 0.5 * np.einsum("ab,aN,bN->N", k, f, f)
    quart = np.einsum("abcd,aN,bN,cN,dN->N", v, f, f, f, f)
    dens = np.exp(-(quad + lam / 24.0 * quart)) * w
    z = dens.sum()
    mean = (f * dens).sum(axis=1) / z
    fc = f - mean[:, None]
    cov = np.einsum("aN,bN,N->ab", fc, fc, dens) / z
    m4 = np.einsum("aN,bN,cN,dN,N->abcd", fc, fc, fc, fc, dens) / z
    conn4 = m4 - (np.einsum("ab,cd->abcd", cov, cov)
                  + np.einsum("ac,bd->abcd", cov, cov)
                  + np.einsum("ad,bc->abcd", cov, cov))
    return mean, cov, conn4


def quadrature_conditional_mean(action: QuarticAction, y: float, observed_index: int,
                                n_nodes: int = 500,
                                half_width_sigmas: float = 12.0) -> float:
    """Exact conditional mean of the free coordinate of a 2-dim quartic
    density given the observed one, by 1-dim quadrature along the slice."""
    if action.size != 2:
        raise DimensionError("conditional quadrature oracle needs exactly 2 coordinates")
    if observed_index not in (0, 1):
        raise DimensionError("observed index must be 0 or 1")
    free = 1 - observed_index
    c = action.propagator()
    sig = np.sqrt(c[free, free])
    nodes, weights = np.polynomial.legendre.leggauss(max(n_nodes, 200))
    x = (half_width_sigmas * sig) * nodes
    w = (half_width_sigmas * sig) * weights
    f = np.zeros((2, x.size))
    f[observed_index] = y
    f[free] = x
    k, v, lam = action.k_coupling, action.v_coupling, action.lam
    s = 0.5 * np.einsum("ab,aN,bN->N", k, f, f) \
        + lam / 24.0 * np.einsum("abcd,aN,bN,cN,dN->N", v, f, f, f, f)
    dens = np.exp(-s) * w
    return float((x * dens).sum() / dens.sum())
