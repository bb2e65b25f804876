"""Parameter-space view: gradients, tangent kernel, training dynamics.

The tangent kernel is the Gram matrix of output gradients with the
identity parameter metric,

    Q_{ij,ab} = sum_mu (df_{i,a}/dtheta_mu)(df_{j,b}/dtheta_mu),

flattened channel-major (flat = i * n_points + alpha) as in gp. Training
is plain full-batch gradient descent on the mean-squared error with
eps = f - y as the output-space residual; the linearized (lazy) solution
freezes the kernel at the initial parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitSpec, ObservableSet, build_unitary, check_parameters, model_output
from .errors import ConditioningError, ContractViolation, DimensionError, TrainingDivergence
from .linalg import HermitianObservable

SHIFT = np.pi / 4  # rotation generated by X with X^2=I has period pi in f


@dataclass(frozen=True)
class GradientTensor:
    values: np.ndarray  # (n_channels, n_points, n_params)
    exact: bool = True  # False when the finite-difference fallback ran

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DimensionError("gradient tensor must be (channels, points, params)")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("gradient tensor has non-finite entries")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_params(self):
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        """(n_channels * n_points, n_params), channel-major rows."""
        n, p, L = self.values.shape
        return self.values.reshape(n * p, L)


@dataclass(frozen=True)
class QNTKMatrix:
    matrix: np.ndarray  # (m, m), m = n_channels * n_points
    n_channels: int
    n_points: int

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        m = self.n_channels * self.n_points
        if mat.shape != (m, m):
            raise DimensionError("kernel matrix shape mismatch")
        scale = max(1.0, float(np.abs(mat).max())) if mat.size else 1.0
        if np.max(np.abs(mat - mat.T)) > 1e-10 * scale:
            raise ContractViolation("tangent kernel must be symmetric")
        evals = np.linalg.eigvalsh(mat)
        if evals.size and evals[0] < -1e-10 * max(1.0, float(evals[-1])):
            raise ContractViolation(f"tangent kernel not PSD: min eigenvalue {evals[0]:.3e}")
        mat = 0.5 * (mat + mat.T)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def entries(self) -> np.ndarray:
        """Four-index view (i, j, alpha, beta)."""
        n, p = self.n_channels, self.n_points
        return self.matrix.reshape(n, p, n, p).transpose(0, 2, 1, 3)


def _shifted_outputs(spec, theta, rho, obs, index, delta):
    th = np.array(theta, dtype=np.float64)
    th[index] += delta
    return model_output(spec, th, rho, obs)


def _fd_derivative(spec, theta, rho, obs, index, h=1e-4):
    # 5-point central difference, O(h^4)
    vals = [_shifted_outputs(spec, theta, rho, obs, index, k * h)
            for k in (-2, -1, 1, 2)]
    return (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)


def _shift_sweep(spec, th, rho, obs_mats):
    """All shift-rule derivatives in one forward/backward pass.

    For parameter mu the circuit splits as S_mu R_mu(th) W_mu P_{mu-1};
    the state is pushed up through W/R and each observable pulled down
    through the suffix, so every shifted evaluation costs O(1) products.
    Returns (n_obs, L).
    """
    L = spec.depth
    pre = []  # state conjugated by W_mu P_{mu-1}
    state = rho.matrix
    for lay, angle in zip(spec.layers, th):
        w = lay.w.matrix
        below = w @ state @ w.conj().T
        pre.append(below)
        r = lay.rotation(angle)
        state = r @ below @ r.conj().T
    out = np.empty((len(obs_mats), L))
    for k, ob in enumerate(obs_mats):
        above = ob
        for mu in range(L - 1, -1, -1):
            lay = spec.layers[mu]
            r_p = lay.rotation(th[mu] + SHIFT)
            r_m = lay.rotation(th[mu] - SHIFT)
            f_p = np.trace(r_p @ pre[mu] @ r_p.conj().T @ above).real
            f_m = np.trace(r_m @ pre[mu] @ r_m.conj().T @ above).real
            out[k, mu] = f_p - f_m
            rw = lay.rotation(th[mu]) @ lay.w.matrix
            above = rw.conj().T @ above @ rw
    return out


def parameter_shift_gradient(spec: CircuitSpec, theta, states, obs: ObservableSet,
                             force_fd: bool = False) -> GradientTensor:
    """Exact shift-rule gradient; finite differences for general generators.

    The pi/4 two-point rule is exact whenever every layer generator is
    involutory (X^2 = I). Otherwise, or when force_fd is set, a 5-point
    central difference with h=1e-4 runs instead and the result carries
    exact=False.
    """
    th = check_parameters(spec, theta)
    states = tuple(states)
    n, p, L = len(obs), len(states), spec.depth
    use_shift = all(lay.involutory for lay in spec.layers) and not force_fd
    out = np.empty((n, p, L))
    obs_mats = [ob.matrix for ob in obs.observables]
    for a, rho in enumerate(states):
        if use_shift:
            out[:, a, :] = _shift_sweep(spec, th, rho, obs_mats)
        else:
            for mu in range(L):
                out[:, a, mu] = _fd_derivative(spec, th, rho, obs, mu)
    return GradientTensor(out, exact=use_shift)


def shift_derivative(spec: CircuitSpec, theta, rho, obs: ObservableSet, indices) -> np.ndarray:
    """Nested exact shift rule: mixed partial d^k f / dtheta_{i1}..dtheta_{ik}.

    Requires involutory generators; 2^k circuit evaluations.
    """
    if not all(lay.involutory for lay in spec.layers):
        raise ContractViolation("nested shift rule needs involutory generators")
    th = check_parameters(spec, theta)
    indices = tuple(indices)
    if not indices:
        return model_output(spec, th, rho, obs)
    head, rest = indices[0], indices[1:]
    tp = np.array(th)
    tp[head] += SHIFT
    tm = np.array(th)
    tm[head] -= SHIFT
    return (shift_derivative(spec, tp, rho, obs, rest)
            - shift_derivative(spec, tm, rho, obs, rest))


def qntk(spec: CircuitSpec, theta, states, obs: ObservableSet) -> QNTKMatrix:
    grad = parameter_shift_gradient(spec, theta, states, obs)
    g = grad.flat()
    return QNTKMatrix(g @ g.T, n_channels=len(obs), n_points=len(tuple(states)))


def haar_averaged_qntk(o_i: HermitianObservable, o_j: HermitianObservable,
                       rho_a, rho_b, x_mu: HermitianObservable,
                       x_nu: HermitianObservable, d: int = None) -> float:
    """Ensemble average of a tangent-kernel entry, closed form.

    Valid for a generator slot sandwiched between independent global
    Haar factors; the product-trace structure holds on the diagonal
    slice (i=j, alpha=beta), which is where the Monte Carlo cross-check
    applies it.
    """
    if d is None:
        d = o_i.dim
    if d < 2:
        raise DimensionError("need d >= 2")
    tr_oo = np.trace(o_i.matrix @ o_j.matrix).real
    tr_oi = np.trace(o_i.matrix).real
    tr_oj = np.trace(o_j.matrix).real
    tr_rr = np.trace(rho_a.matrix @ rho_b.matrix).real
    tr_ra = np.trace(rho_a.matrix).real
    tr_rb = np.trace(rho_b.matrix).real
    tr_xx = np.trace(x_mu.matrix @ x_nu.matrix).real
    pref = 2.0 * d / ((d - 1) * (d + 1) * (d**2 + d))
    return pref * (tr_oo * tr_rr - tr_oi * tr_oj * tr_ra * tr_rb) * tr_xx


def haar_averaged_qntk_leading(o_i, o_j, rho_a, rho_b, x_mu, x_nu, d: int = None) -> float:
    """Large-d leading form (c/d^2) Tr(O_i O_j) Tr(rho_a rho_b), c = Tr(X_mu X_nu)/d."""
    if d is None:
        d = o_i.dim
    c = np.trace(x_mu.matrix @ x_nu.matrix).real / d
    return c / d**2 * np.trace(o_i.matrix @ o_j.matrix).real \
        * np.trace(rho_a.matrix @ rho_b.matrix).real


@dataclass(frozen=True)
class TrainingTrajectory:
    thetas: np.ndarray   # (steps+1, L)
    outputs: np.ndarray  # (steps+1, n_channels, n_points)
    losses: np.ndarray   # (steps+1,)
    eta: float

    def __post_init__(self):
        if not (len(self.thetas) == len(self.outputs) == len(self.losses)):
            raise DimensionError("trajectory arrays disagree on length")
        if not np.all(np.isfinite(self.losses)):
            raise ContractViolation("trajectory loss is not finite")

    @property
    def steps(self):
        return len(self.losses) - 1


def gradient_descent_train(spec: CircuitSpec, theta0, states, y, obs: ObservableSet,
                           eta: float, steps: int) -> TrainingTrajectory:
    """Full-batch gradient descent on L = 1/2 sum (f - y)^2.

    Aborts with TrainingDivergence if the loss exceeds 1e6 times its
    initial value.
    """
    if eta < 0:
        raise ContractViolation("learning rate must be nonnegative")
    th = check_parameters(spec, theta0).copy()
    states = tuple(states)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (len(obs), len(states)):
        raise DimensionError("label matrix must be (channels x points)")
    thetas, outputs, losses = [], [], []

    def record(th_now):
        f = np.stack([model_output(spec, th_now, r, obs) for r in states], axis=1)
        loss = 0.5 * float(np.sum((f - y) ** 2))
        thetas.append(th_now.copy())
        outputs.append(f)
        losses.append(loss)
        return f, loss

    f, loss0 = record(th)
    guard = max(1e6 * loss0, 1e6 * np.finfo(float).tiny)
    for _ in range(steps):
        grad = parameter_shift_gradient(spec, th, states, obs)
        eps = (f - y).reshape(-1)
        th = th - eta * (grad.flat().T @ eps)
        f, loss = record(th)
        if loss > guard:
            raise TrainingDivergence(f"loss {loss:.3e} exceeded 1e6 x initial {loss0:.3e}")
    return TrainingTrajectory(np.stack(thetas), np.stack(outputs), np.array(losses), eta)


class LinearizedDynamics:
    """Frozen-kernel linear dynamics for outputs split into observed
    (labeled, first n_obs points of the kernel) and prediction points.

    mean(t) relaxes the observed residual f0 - y through exp(-eta Q t)
    (or the discrete power (1 - eta Q)^t with mode="discrete") and
    propagates it to prediction points through Q_po Q_oo^-1; the
    covariance interpolates from the prior Q to its Schur complement.
    """

    def __init__(self, kernel: QNTKMatrix, n_observed: int, f0, y, eta: float,
                 jitter: float = None, mode: str = "continuous"):
        if mode not in ("continuous", "discrete"):
            raise ContractViolation(f"unknown mode {mode!r}")
        n, p = kernel.n_channels, kernel.n_points
        if not 0 < n_observed <= p:
            raise DimensionError("n_observed out of range")
        f0 = np.asarray(f0, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if f0.shape != (n, p):
            raise DimensionError("f0 must be (channels x points) over the kernel's points")
        if y.shape != (n, n_observed):
            raise DimensionError("labels must cover the observed points")
        self.mode = mode
        self.eta = float(eta)
        self.n_channels, self.n_points, self.n_observed = n, p, n_observed
        obs_idx = np.array([i * p + a for i in range(n) for a in range(n_observed)])
        pred_idx = np.array([i * p + a for i in range(n) for a in range(n_observed, p)],
                            dtype=int)
        q = kernel.matrix
        self._q_oo = q[np.ix_(obs_idx, obs_idx)]
        self._q_po = q[np.ix_(pred_idx, obs_idx)] if pred_idx.size else \
            np.zeros((0, obs_idx.size))
        self._q_pp = q[np.ix_(pred_idx, pred_idx)]
        m_o = obs_idx.size
        jit = 1e-10 * float(np.trace(self._q_oo)) / m_o if jitter is None else float(jitter)
        a = self._q_oo + jit * np.eye(m_o)
        evals, evecs = np.linalg.eigh(a)
        if evals[0] <= 0:
            cond = float("inf") if evals[0] <= 0 else float(evals[-1] / evals[0])
            raise ConditioningError("observed-block kernel is singular after jitter",
                                    condition_number=cond)
        if self.mode == "discrete" and self.eta * evals[-1] >= 2.0:
            raise ContractViolation(
                f"discrete update unstable: eta*lambda_max = {self.eta * evals[-1]:.3f} >= 2")
        self._evals, self._evecs = evals, evecs
        self._f0_obs = f0[:, :n_observed].reshape(-1)
        self._f0_pred = f0[:, n_observed:].reshape(-1)
        self._y = y.reshape(-1)
        self._resid0 = self._f0_obs - self._y

    def _decay(self, t) -> np.ndarray:
        """Eigenvalue factors e^{-eta lambda t} (or discrete analogue)."""
        if np.isinf(t):
            return np.zeros_like(self._evals)
        if self.mode == "continuous":
            return np.exp(-self.eta * self._evals * t)
        return (1.0 - self.eta * self._evals) ** t

    def _solve_damped(self, t) -> np.ndarray:
        """Q_oo^-1 (I - decay(t)) applied through the eigenbasis."""
        coef = (1.0 - self._decay(t)) / self._evals
        return self._evecs @ (coef[:, None] * self._evecs.T)

    def observed_mean(self, t) -> np.ndarray:
        decay = self._decay(t)
        resid = self._evecs @ (decay * (self._evecs.T @ self._resid0))
        return (self._y + resid).reshape(self.n_channels, self.n_observed)

    def predicted_mean(self, t) -> np.ndarray:
        n_pred = self.n_points - self.n_observed
        if n_pred == 0:
            return np.zeros((self.n_channels, 0))
        move = self._q_po @ (self._solve_damped(t) @ self._resid0)
        return (self._f0_pred - move).reshape(self.n_channels, n_pred)

    def mean(self, t) -> np.ndarray:
        """Full (channels x points) trajectory mean at time t."""
        return np.concatenate([self.observed_mean(t), self.predicted_mean(t)], axis=1)

    def predicted_covariance(self, t) -> np.ndarray:
        """Four-term interpolation from prior to Schur complement."""
        a_t = self._q_po @ self._solve_damped(t)
        cov = self._q_pp - a_t @ self._q_po.T - self._q_po @ a_t.T \
            + a_t @ self._q_oo @ a_t.T
        return 0.5 * (cov + cov.T)

    def infinite_time(self):
        return self.mean(np.inf), self.predicted_covariance(np.inf)


def linearized_dynamics(kernel: QNTKMatrix, n_observed: int, f0, y, eta: float, t,
                        jitter: float = None, mode: str = "continuous"):
    """Mean and prediction-block covariance at time t (np.inf allowed)."""
    dyn = LinearizedDynamics(kernel, n_observed, f0, y, eta, jitter=jitter, mode=mode)
    return dyn.mean(t), dyn.predicted_covariance(t)


def theta_star(theta0, grad: GradientTensor, kernel: QNTKMatrix, f, y,
               eta: float = 1.0, jitter: float = 0.0) -> np.ndarray:
    """One-shot parameter update theta0 - eta * grad Q^-1 (f - y).

    With eta=1 the model linearized at theta0 interpolates y at the new
    parameters.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    g = grad.flat()
    if f.shape != y.shape or f.shape[0] != g.shape[0]:
        raise DimensionError("outputs, labels, and gradients disagree on size")
    q = kernel.matrix + jitter * np.eye(kernel.matrix.shape[0])
    try:
        resid = np.linalg.solve(q, f - y)
    except np.linalg.LinAlgError as exc:
        evals = np.abs(np.linalg.eigvalsh(q))
        cond = float("inf") if evals.min() == 0 else float(evals.max() / evals.min())
        raise ConditioningError("tangent kernel is singular", condition_number=cond) from exc
    return theta0 - eta * (g.T @ resid)


@dataclass(frozen=True)
class MetaKernelEstimate:
    order: str
    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ContractViolation("standard error must be nonnegative")


def meta_kernel_estimate(n_qubits: int, depth: int, order: str, n_samples: int,
                         rng: np.random.Generator, rho=None, obs: ObservableSet = None,
                         ensemble=None) -> MetaKernelEstimate:
    """Monte Carlo mean of the identity-metric derivative contractions.

    order="dQNTK": sum_{mu,nu} d2f_{mu nu} df_mu df_nu (third-order
    correlation analogue, zero on average for traceless observables).
    order="ddQNTK": sum_{mu,nu,lam} d3f_{mu nu lam} df_mu df_nu df_lam
    + sum_{mu,nu,lam} d2f_{mu nu} d2f_{mu lam} df_nu df_lam (fourth-order
    analogue).

    ensemble: callable rng -> CircuitSpec; defaults to fresh Haar layers
    with uniformly drawn parameters per instance.
    """
    from .circuit import haar_layer_circuit, pauli_z_observables, sample_parameters
    from .linalg import basis_state

    if order not in ("dQNTK", "ddQNTK"):
        raise ContractViolation(f"unknown meta-kernel order {order!r}")
    if n_samples < 2:
        raise DimensionError("need at least two samples")
    if rho is None:
        rho = basis_state(2**n_qubits, 0)
    if obs is None:
        obs = ObservableSet((pauli_z_observables(n_qubits).observables[0],))
    if ensemble is None:
        def ensemble(r):
            return haar_layer_circuit(n_qubits, depth, r)
    vals = np.empty(n_samples)
    for s in range(n_samples):
        spec = ensemble(rng)
        L = spec.depth
        th = sample_parameters(L, rng)
        d1 = np.empty(L)
        for mu in range(L):
            d1[mu] = np.sum(shift_derivative(spec, th, rho, obs, (mu,)))
        d2 = np.empty((L, L))
        for mu in range(L):
            for nu in range(mu, L):
                d2[mu, nu] = d2[nu, mu] = np.sum(shift_derivative(spec, th, rho, obs, (mu, nu)))
        if order == "dQNTK":
            vals[s] = float(np.einsum("mn,m,n->", d2, d1, d1))
        else:
            d3 = np.empty((L, L, L))
            for mu in range(L):
                for nu in range(mu, L):
                    for lam in range(nu, L):
                        v = np.sum(shift_derivative(spec, th, rho, obs, (mu, nu, lam)))
                        for a, b, c in ((mu, nu, lam), (mu, lam, nu), (nu, mu, lam),
                                       (nu, lam, mu), (lam, mu, nu), (lam, nu, mu)):
                            d3[a, b, c] = v
            term3 = float(np.einsum("mnl,m,n,l->", d3, d1, d1, d1))
            term22 = float(np.einsum("mn,ml,n,l->", d2, d2, d1, d1))
            vals[s] = term3 + term22
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n_samples))
    return MetaKernelEstimate(order=order, value=mean, std_error=se, n_samples=n_samples)
