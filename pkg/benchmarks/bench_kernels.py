"""Compare the compiled and NumPy membership-sweep kernels.

    python benchmarks/bench_kernels.py [--n 100] [--q 2 3 5] [--repeat 5]

Times one E-step sweep and one full fit per backend and checks that both
give the same memberships.
"""

import argparse
import time

import numpy as np

from osbm import _backend
from osbm.model import OsbmParameters, sample_network
from osbm.selection import nmf_init
from osbm.vbem import e_step_tau, fit, initial_state, refresh_m_step
from osbm.model import Hyperpriors


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--q", type=int, nargs="+", default=[2, 3, 5])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = _backend.available()
    print(f"backends: {', '.join(backends)}")
    print(f"{'Q':>3} {'kernel':>8} {'sweep ms':>10} {'fit s':>8} {'max |dtau|':>11}")
    for q in args.q:
        params = OsbmParameters.structured(q, 6.0, 1.0, -5.5)
        x, _ = sample_network(params, args.n, seed=q)
        pri = Hyperpriors.default(q)
        init = nmf_init(x, q, 0)
        state = initial_state(x, init, pri)
        refresh_m_step(x, state, pri)
        taus = {}
        for name in backends:
            with _backend.use_backend(name):
                sweep, _ = best_of(lambda: e_step_tau(x, state, pri, max_sweeps=1), args.repeat)
                t_fit, res = best_of(lambda: fit(x, q, init, pri), max(1, args.repeat // 2))
            taus[name] = res.state.tau
            diff = np.max(np.abs(taus[name] - taus[backends[0]]))
            print(f"{q:>3} {name:>8} {1e3 * sweep:>10.2f} {t_fit:>8.3f} {diff:>11.1e}")


if __name__ == "__main__":
    main()
