"""Timing comparison of the numba and numpy sampling kernels.

Run:  python3 benchmarks/bench_kernels.py [--samples N]

Both backends consume identical pre-drawn randomness, so the check
column should show agreement at rounding level while the wall times
differ. The first numba call pays JIT compilation; a warmup run keeps
that out of the timing.
"""

import argparse
import time

import numpy as np

from haargp import circuit, linalg
from haargp.backend import active_backend, get_kernels
from haargp.moments import MomentSpec, monte_carlo_moment


def _moment_case(n_samples, backend, threads):
    rng = np.random.default_rng(5)
    rho1 = linalg.random_density_matrix(4, rng)
    rho2 = linalg.random_density_matrix(4, rng)
    o1 = linalg.random_hermitian(4, rng)
    o2 = linalg.random_hermitian(4, rng)
    spec = MomentSpec(((rho1, o1), (rho2, o2)))
    start = time.perf_counter()
    est = monte_carlo_moment(spec, n_samples, np.random.default_rng(6),
                             threads=threads, backend=backend)
    return time.perf_counter() - start, est.value


def _circuit_case(n_samples, backend, threads):
    rho = linalg.basis_state(8, 0)
    obs = circuit.pauli_z_observables(3)
    start = time.perf_counter()
    out = circuit.sample_outputs(3, 16, rho, obs, n_samples,
                                 np.random.default_rng(7),
                                 threads=threads, backend=backend)
    return time.perf_counter() - start, float(out.mean())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000,
                    help="Haar draws for the moment case (circuit case uses 1/10)")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    backends = ["numpy"]
    if active_backend() == "numba":
        backends.append("numba")
        get_kernels("numba")  # trigger import
        _moment_case(500, "numba", 1)  # JIT warmup
        _circuit_case(100, "numba", 1)
    else:
        print("numba backend unavailable; timing numpy only")

    print(f"{'case':<28}{'backend':<10}{'seconds':>10}{'value':>16}")
    for case, fn, n in (("moment p=2 d=4", _moment_case, args.samples),
                        ("circuit n=3 depth=16", _circuit_case, args.samples // 10)):
        times = {}
        for backend in backends:
            dt, val = fn(n, backend, args.threads)
            times[backend] = dt
            print(f"{case + f' N={n}':<28}{backend:<10}{dt:>10.3f}{val:>16.6f}")
        if len(times) == 2:
            print(f"{'':<28}{'speedup':<10}{times['numpy'] / times['numba']:>10.2f}x")


if __name__ == "__main__":
    main()
