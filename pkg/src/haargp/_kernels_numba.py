"""numba njit kernels: per-sample loops, nogil so chunks thread cleanly.

Import of this module is guarded by backend.py; any import failure falls
back to the numpy path.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _haar_from_ginibre(g):
    q, r = np.linalg.qr(g)
    d = g.shape[0]
    for j in range(d):
        ph = r[j, j] / abs(r[j, j])
        for i in range(d):
            q[i, j] = q[i, j] * ph
    return np.ascontiguousarray(q)


@njit(cache=True, nogil=True)
def moment_trace_samples(g, rhos, obs):
    m = g.shape[0]
    p = rhos.shape[0]
    out = np.empty((m, p), dtype=np.float64)
    for s in range(m):
        u = _haar_from_ginibre(g[s])
        udag = np.ascontiguousarray(np.conj(u.T))
        for k in range(p):
            w = udag @ (np.ascontiguousarray(rhos[k]) @ u)
            out[s, k] = np.trace(obs[k] @ w).real
    return out


@njit(cache=True, nogil=True)
def _embed_left(gate, a_dim, b_dim, u):
    """(I_a x gate x I_b) @ u without forming the big kron."""
    s = gate.shape[0]
    d = u.shape[0]
    out = np.zeros((d, d), dtype=np.complex128)
    for a in range(a_dim):
        for b in range(b_dim):
            for si in range(s):
                row = (a * s + si) * b_dim + b
                for sj in range(s):
                    src = (a * s + sj) * b_dim + b
                    gv = gate[si, sj]
                    if gv != 0:
                        for c in range(d):
                            out[row, c] += gv * u[src, c]
    return out


@njit(cache=True, nogil=True)
def circuit_output_samples(g, thetas, n_qubits, cz_diag, rho, obs):
    m, big_l, n_pairs = g.shape[0], g.shape[1], g.shape[2]
    d = rho.shape[0]
    n_obs = obs.shape[0]
    pauli_y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
    out = np.empty((m, n_obs), dtype=np.float64)
    for s in range(m):
        u = np.eye(d, dtype=np.complex128)
        for layer in range(big_l):
            if n_qubits == 1:
                gate = _haar_from_ginibre(g[s, layer, 0, :2, :2].copy())
                u = gate @ u
            else:
                for pair in range(n_pairs):
                    gate = _haar_from_ginibre(g[s, layer, pair].copy())
                    u = _embed_left(gate, 2**pair, 2 ** (n_qubits - pair - 2), u)
                for i in range(d):
                    for j in range(d):
                        u[i, j] = cz_diag[i] * u[i, j]
            wire = layer % n_qubits
            a_dim = 2**wire
            b_dim = 2 ** (n_qubits - wire - 1)
            th = thetas[s, layer]
            yu = _embed_left(pauli_y, a_dim, b_dim, u)
            u = np.cos(th) * u + 1j * np.sin(th) * yu
        t = (u @ rho) @ np.ascontiguousarray(np.conj(u.T))
        for i in range(n_obs):
            out[s, i] = np.trace(t @ obs[i]).real
    return out
