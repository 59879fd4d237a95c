"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the three hot paths (collocation solve, kernel evaluation, map flow) on
the same inputs with both backends and checks that the results agree.
"""

import argparse
import time

import numpy as np

from slitflow import loewner, make_slits
from slitflow._accel import get_backend
from slitflow.bmd_kernel import _geo


def _best(fn, repeat):
    fn()  # warm-up (numba compiles here)
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), out


def cases():
    s = make_slits((-0.5, 0.5, 1.0), (1.2, 1.8, 0.4), (-2.0, -1.0, 0.7))
    geo = _geo(s.y, s.x, s.xr, 0.0)
    traj = loewner.evolve(make_slits((1.2, 1.8, 0.4)), loewner.DrivingSpec.constant(0.0, 0.2),
                          opts=loewner.EvolveOptions(max_step=0.005))
    seg, shift, g, coef = traj.history.arrays()
    rng = np.random.default_rng(0)
    zs = rng.uniform(-3, 3, 2000) + 1j * rng.uniform(1.5, 3.0, 2000)
    probes = np.ascontiguousarray(0.3 + np.linspace(0.2, 2.0, 64) * 1j)

    def solve(k):
        return lambda: k.solve_density(geo, 32)[0]

    def evaluate(k):
        coef32 = k.solve_density(geo, 32)[0]
        own = np.full(len(zs), -1, dtype=np.int64)
        tp = np.zeros(len(zs))
        side = np.zeros(len(zs), dtype=np.int64)
        return lambda: k.h_points(zs, coef32, geo, own, tp, side)

    def flow(k):
        return lambda: k.flow_points(probes, traj.t_end, 0.0, seg, shift, g, coef, 1e-10, 1e-6)[0]

    return [("solve_density N=3 M=32", solve), ("h_points 2000 points", evaluate),
            ("flow_points 64 probes back", flow)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    nb, npy = get_backend("numba"), get_backend("numpy")
    print(f"{'case':32s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speedup':>9s} {'max diff':>10s}")
    for name, make in cases():
        t_nb, a = _best(make(nb), args.repeat)
        t_np, b = _best(make(npy), args.repeat)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:32s} {t_nb:12.5f} {t_np:12.5f} {t_np / t_nb:9.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
