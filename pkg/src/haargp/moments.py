"""Analytic Haar-average engine and its Monte Carlo oracle.

The central object is the k-point average E[prod_k Tr(U O_k U+ rho_k)]
over Haar-random U, evaluated exactly by the permutation-pair
contraction: a double sum over S_p weighted by the Weingarten
coefficients, with one trace product per cycle. Connected correlators,
their leading large-d terms, and a sampling oracle sit on top.
"""

import hashlib
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sym
from .backend import get_kernels
from .config import LIMITS
from .errors import DimensionError, SingularGramError, UnsupportedOrderError
from .linalg import DensityMatrix, HermitianObservable


@dataclass(frozen=True)
class WeingartenTable:
    """Wg(sigma, d) on S_p, keyed by cycle type.

    condition_number reports the Gram matrix conditioning;
    pseudo_inverse marks tables built below the d >= p invertibility
    threshold (rank-deficient Gram, opt-in only).
    """

    p: int
    d: int
    values: dict
    condition_number: float
    pseudo_inverse: bool = False

    def wg(self, sigma) -> float:
        return self.values[sym.cycle_type(sigma)]

    def orthogonality_residual(self) -> float:
        """max |sum_tau Wg(sigma tau^-1) d^{#cycles(tau)} - delta_{sigma,e}|."""
        perms = sym.all_permutations(self.p)
        worst = 0.0
        for sigma in perms:
            acc = 0.0
            for tau in perms:
                rel = sym.compose(sigma, sym.inverse(tau))
                acc += self.values[sym.cycle_type(rel)] * float(self.d) ** sym.cycle_count(tau)
            target = 1.0 if sigma == sym.identity(self.p) else 0.0
            worst = max(worst, abs(acc - target))
        return worst


def weingarten_table(p: int, d: int, allow_pseudo_inverse: bool = False) -> WeingartenTable:
    """Invert the Gram matrix G_{sigma,tau} = d^{#cycles(sigma^-1 tau)} on S_p.

    Wg(sigma) is the identity row of the inverse. For d < p the Gram
    matrix is singular; by default that is refused. allow_pseudo_inverse
    opts into the rank-truncated inverse, which keeps the contraction
    formula valid on the support of the ensemble.
    """
    if not 1 <= p <= 4:
        raise UnsupportedOrderError(f"order p={p} outside supported range 1..4")
    if d < 1:
        raise DimensionError(f"dimension must be positive, got {d}")
    perms = sym.all_permutations(p)
    n = len(perms)
    gram = np.empty((n, n))
    for i, s in enumerate(perms):
        s_inv = sym.inverse(s)
        for j, t in enumerate(perms):
            gram[i, j] = float(d) ** sym.cycle_count(sym.compose(s_inv, t))
    evals, evecs = np.linalg.eigh(gram)
    tiny = np.abs(evals) < 1e-9 * np.abs(evals).max()
    cond = float(np.abs(evals).max() / np.abs(evals[~tiny]).min())
    if d < p or tiny.any():
        if not allow_pseudo_inverse:
            raise SingularGramError(
                f"Gram matrix on S_{p} is singular at d={d} (need d >= p); "
                f"condition number {cond:.3e}",
                condition_number=cond,
            )
        inv_evals = np.where(tiny, 0.0, 1.0 / np.where(tiny, 1.0, evals))
        pseudo = True
    else:
        inv_evals = 1.0 / evals
        pseudo = False
    # identity row of the (pseudo-)inverse; perms[0] is the identity
    assert perms[0] == sym.identity(p)
    ginv_row = (evecs[0] * inv_evals) @ evecs.T
    values = {}
    for j, t in enumerate(perms):
        ct = sym.cycle_type(t)
        v = float(ginv_row[j])
        if ct in values:
            # Weingarten values are class functions; enforce it
            assert abs(values[ct] - v) <= 1e-9 * max(1.0, abs(v))
        else:
            values[ct] = v
    return WeingartenTable(p=p, d=d, values=values, condition_number=cond, pseudo_inverse=pseudo)


@dataclass(frozen=True)
class MomentSpec:
    """Ordered (state, observable) pairs defining a k-point correlator."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        if not 1 <= len(pairs) <= 4:
            raise UnsupportedOrderError(f"need 1..4 pairs, got {len(pairs)}")
        d = pairs[0][0].dim
        for rho, ob in pairs:
            if not isinstance(rho, DensityMatrix) or not isinstance(ob, HermitianObservable):
                raise DimensionError("pairs must be (DensityMatrix, HermitianObservable)")
            if rho.dim != d or ob.dim != d:
                raise DimensionError("all pairs must share one dimension")
        object.__setattr__(self, "pairs", pairs)

    @property
    def p(self) -> int:
        return len(self.pairs)

    @property
    def d(self) -> int:
        return self.pairs[0][0].dim

    def subset(self, indices) -> "MomentSpec":
        return MomentSpec(tuple(self.pairs[i] for i in indices))

    def spec_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"p={self.p};d={self.d};".encode())
        for rho, ob in self.pairs:
            h.update(np.ascontiguousarray(rho.matrix).tobytes())
            h.update(np.ascontiguousarray(ob.matrix).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    std_error: float
    n_samples: int

    def z_score(self, reference: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.value == reference else float("inf")
        return (self.value - reference) / self.std_error


def trace_product(sigma, mats) -> complex:
    """prod over cycles c of sigma of Tr(A_{k} A_{sigma(k)} ...), k in c."""
    out = 1.0 + 0.0j
    for cyc in sym.cycles(sigma):
        k = cyc[0]
        acc = mats[k]
        k = sigma[k]
        while k != cyc[0]:
            acc = acc @ mats[k]
            k = sigma[k]
        out *= np.trace(acc)
    return complex(out)


def haar_expectation(spec: MomentSpec, table: WeingartenTable = None,
                     allow_pseudo_inverse: bool = False) -> float:
    """E[prod_k Tr(U O_k U+ rho_k)] via the double permutation sum.

    Weight Wg(alpha^-1 beta, d) multiplies the state-side trace product
    along alpha and the observable-side product along beta^-1; the cycle
    orientation is fixed by agreement with the order-2 closed form and
    Monte Carlo.
    """
    p, d = spec.p, spec.d
    if table is None:
        table = weingarten_table(p, d, allow_pseudo_inverse=allow_pseudo_inverse)
    rhos = [pair[0].matrix for pair in spec.pairs]
    obs = [pair[1].matrix for pair in spec.pairs]
    perms = sym.all_permutations(p)
    t_rho = {a: trace_product(a, rhos) for a in perms}
    t_obs = {b: trace_product(sym.inverse(b), obs) for b in perms}
    total = 0.0 + 0.0j
    for a in perms:
        a_inv = sym.inverse(a)
        ta = t_rho[a]
        for b in perms:
            wg = table.values[sym.cycle_type(sym.compose(a_inv, b))]
            total += wg * ta * t_obs[b]
    if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
        raise ArithmeticError(f"expectation has non-negligible imaginary part {total.imag}")
    return float(total.real)


def _partitions(items):
    """All set partitions of a small tuple."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def connected_moment(spec: MomentSpec, order: int, centered: bool = False,
                     allow_pseudo_inverse: bool = False) -> float:
    """Connected correlator at the given order.

    order=2: E[f1 f2] - E[f1]E[f2].
    order=4 (default): raw minus the three pair products; odd moments
    enter only through the order-2 subtraction.
    order=4 with centered=True: the full fourth joint cumulant (all set
    partitions with Moebius weights), subtracting means as well.
    """
    if order not in (2, 4):
        raise UnsupportedOrderError(f"connected order must be 2 or 4, got {order}")
    if spec.p != order:
        raise DimensionError(f"spec has p={spec.p} but order={order}")
    tables = {q: weingarten_table(q, spec.d, allow_pseudo_inverse=allow_pseudo_inverse)
              for q in range(1, order + 1)}

    def ev(indices):
        sub = spec.subset(indices)
        return haar_expectation(sub, table=tables[sub.p])

    if order == 2:
        return ev((0, 1)) - ev((0,)) * ev((1,))
    if not centered:
        raw = ev((0, 1, 2, 3))
        pairs = [((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))]
        return raw - sum(ev(a) * ev(b) for a, b in pairs)
    total = 0.0
    for part in _partitions(range(4)):
        k = len(part)
        weight = (-1.0) ** (k - 1) * float(math.factorial(k - 1))
        prod = 1.0
        for block in part:
            prod *= ev(tuple(sorted(block)))
        total += weight * prod
    return total


def leading_order(spec: MomentSpec, order: int) -> float:
    """Leading 1/d term of the connected correlator.

    order=2: Tr(rho1 rho2) Tr(O1 O2) / d^2.
    order=4: the closed-form leading bracket with its rational prefactor
    (six four-cycle observable traces against the cyclic state trace,
    four three-state rows, and the doubled product-trace counterterm).
    """
    d = spec.d
    if order == 2:
        if spec.p != 2:
            raise DimensionError(f"spec has p={spec.p} but order=2")
        (r1, o1), (r2, o2) = spec.pairs
        return float(np.trace(r1.matrix @ r2.matrix).real
                     * np.trace(o1.matrix @ o2.matrix).real) / d**2
    if order != 4:
        raise UnsupportedOrderError(f"leading order must be 2 or 4, got {order}")
    if spec.p != 4:
        raise DimensionError(f"spec has p={spec.p} but order=4")
    rho = [pair[0].matrix for pair in spec.pairs]
    ob = [pair[1].matrix for pair in spec.pairs]

    def tr(*mats):
        acc = mats[0]
        for m in mats[1:]:
            acc = acc @ m
        return np.trace(acc)

    pref = (d**4 - 8 * d**2 + 6) / (d**2 * (d**6 - 14 * d**4 + 49 * d**2 - 36))
    four_cycles = (
        tr(ob[0], ob[1], ob[2], ob[3]) + tr(ob[0], ob[1], ob[3], ob[2])
        + tr(ob[0], ob[2], ob[1], ob[3]) + tr(ob[0], ob[2], ob[3], ob[1])
        + tr(ob[0], ob[3], ob[1], ob[2]) + tr(ob[0], ob[3], ob[2], ob[1])
    )
    bracket = tr(rho[0], rho[1], rho[2], rho[3]) * four_cycles
    bracket += tr(rho[0], rho[1], rho[2]) * (
        tr(ob[1], ob[2], ob[0]) + tr(ob[2], ob[1], ob[0])) * np.trace(ob[3])
    bracket += tr(rho[0], rho[1], rho[3]) * (
        tr(ob[1], ob[3], ob[0]) + tr(ob[3], ob[1], ob[0])) * np.trace(ob[2])
    bracket += tr(rho[0], rho[2], rho[3]) * (
        tr(ob[2], ob[3], ob[0]) + tr(ob[3], ob[2], ob[0])) * np.trace(ob[1])
    bracket += tr(rho[1], rho[2], rho[3]) * np.trace(ob[0]) * (
        tr(ob[2], ob[3], ob[1]) + tr(ob[3], ob[2], ob[1])
        - 2 * np.trace(ob[1]) * np.trace(ob[2]) * np.trace(ob[3]))
    return float(pref * bracket.real)


def _rng_children(rng: np.random.Generator, count: int):
    return rng.spawn(count)


def _sample_chunks(spec: MomentSpec, n_samples: int, rng, threads: int, backend):
    kern = get_kernels(backend)
    d = spec.d
    rhos = np.stack([pair[0].matrix for pair in spec.pairs])
    obs = np.stack([pair[1].matrix for pair in spec.pairs])
    chunk = LIMITS.mc_chunk
    sizes = [chunk] * (n_samples // chunk)
    if n_samples % chunk:
        sizes.append(n_samples % chunk)
    children = _rng_children(rng, len(sizes))

    def draw(i):
        sub = children[i]
        m = sizes[i]
        return sub.standard_normal((m, d, d)) + 1j * sub.standard_normal((m, d, d))

    def work(i):
        return kern.moment_trace_samples(draw(i), rhos, obs)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(i) for i in range(len(sizes))]
    return np.concatenate(parts, axis=0)


def _jackknife_blocks(n: int) -> int:
    return 100 if n >= 2000 else max(2, n // 100 or 2)


def _plugin_connected(means: dict, p: int, centered: bool) -> float:
    if p == 2:
        return means[(0, 1)] - means[(0,)] * means[(1,)]
    if not centered:
        return (means[(0, 1, 2, 3)]
                - means[(0, 1)] * means[(2, 3)]
                - means[(0, 2)] * means[(1, 3)]
                - means[(0, 3)] * means[(1, 2)])
    total = 0.0
    for part in _partitions(range(4)):
        k = len(part)
        weight = (-1.0) ** (k - 1) * float(math.factorial(k - 1))
        prod = 1.0
        for block in part:
            prod *= means[tuple(sorted(block))]
        total += weight * prod
    return total


def _needed_subsets(p: int, centered: bool):
    if p == 2:
        return [(0, 1), (0,), (1,)]
    if not centered:
        return [(0, 1, 2, 3), (0, 1), (2, 3), (0, 2), (1, 3), (0, 3), (1, 2)]
    subs = []
    for r in range(1, 5):
        subs.extend(itertools.combinations(range(4), r))
    return subs


def monte_carlo_moment(spec: MomentSpec, n_samples: int, rng: np.random.Generator,
                       connected: bool = False, centered: bool = False,
                       threads: int = 1, backend=None) -> MomentEstimate:
    """Sampling oracle: mean +- SE of the trace product over Haar draws.

    With connected=True the Wick subtraction is applied to jointly
    sampled estimates and the standard error comes from a delete-block
    jackknife (the plug-in estimator is a nonlinear function of means).
    """
    if n_samples < 100:
        raise DimensionError(f"need at least 100 samples, got {n_samples}")
    f = _sample_chunks(spec, n_samples, rng, threads, backend)
    if not connected:
        prod = f.prod(axis=1)
        val = float(prod.mean())
        se = float(prod.std(ddof=1) / np.sqrt(n_samples))
        return MomentEstimate(val, se, n_samples)
    p = spec.p
    if p not in (2, 4):
        raise UnsupportedOrderError(f"connected sampling needs p in (2, 4), got {p}")
    subs = _needed_subsets(p, centered)
    prods = {s: f[:, list(s)].prod(axis=1) for s in subs}
    means = {s: float(v.mean()) for s, v in prods.items()}
    theta = _plugin_connected(means, p, centered)
    nb = _jackknife_blocks(n_samples)
    bounds = np.linspace(0, n_samples, nb + 1).astype(int)
    total = {s: v.sum() for s, v in prods.items()}
    thetas = np.empty(nb)
    for b in range(nb):
        lo, hi = bounds[b], bounds[b + 1]
        m = n_samples - (hi - lo)
        loo = {s: (total[s] - prods[s][lo:hi].sum()) / m for s in subs}
        thetas[b] = _plugin_connected(loo, p, centered)
    se = float(np.sqrt((nb - 1) / nb * ((thetas - thetas.mean()) ** 2).sum()))
    return MomentEstimate(float(theta), se, n_samples)


def moment_record(spec: MomentSpec, n_samples: int, rng: np.random.Generator,
                  connected: bool = False, threads: int = 1, backend=None,
                  allow_pseudo_inverse: bool = False) -> dict:
    """JSON-ready record comparing analytic and sampled values."""
    if connected:
        analytic = connected_moment(spec, spec.p, allow_pseudo_inverse=allow_pseudo_inverse)
    else:
        analytic = haar_expectation(spec, allow_pseudo_inverse=allow_pseudo_inverse)
    est = monte_carlo_moment(spec, n_samples, rng, connected=connected,
                             threads=threads, backend=backend)
    return {
        "spec_hash": spec.spec_hash(),
        "p": spec.p,
        "d": spec.d,
        "connected": bool(connected),
        "analytic": analytic,
        "mc_value": est.value,
        "mc_se": est.std_error,
        "n": est.n_samples,
        "z": est.z_score(analytic),
    }
