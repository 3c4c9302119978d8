"""Compiled vs numpy EL kernel: time per log-EL evaluation near the RQ fit.

    python benchmarks/bench_el.py [--repeat 200]
"""
import argparse
import time

import numpy as np

from belqr import _el_py
from belqr.quantreg import rq_fit_levels
from belqr.simulation import generate

try:
    from belqr import _el_kernel
except ImportError:  # pragma: no cover
    _el_kernel = None


def time_kernel(kernel, data, taus, betas, repeat):
    ws = kernel.Workspace(data.y, data.X, np.asarray(taus))
    ws.log_ratio(betas[0])
    t0 = time.perf_counter()
    out = [ws.log_ratio(b) for b in betas[:repeat]]
    return (time.perf_counter() - t0) / repeat, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'k':>3} {'compiled us':>12} {'numpy us':>10} {'speedup':>8} {'max |diff|':>11} {'feasible':>9}")
    for n, taus in [(100, (0.9, 0.925, 0.95)), (400, (0.5,)), (2000, (0.5,)), (3200, (0.25, 0.75))]:
        data = generate("M1", n, 1)
        center = rq_fit_levels(data, taus).beta
        betas = [center + rng.normal(0, 0.2 / np.sqrt(n), center.shape) for _ in range(args.repeat)]
        tp, out_p = time_kernel(_el_py, data, taus, betas, args.repeat)
        if _el_kernel is None:
            print(f"{n:>6} {len(taus):>3} {'n/a':>12} {tp * 1e6:>10.1f}")
            continue
        tc, out_c = time_kernel(_el_kernel, data, taus, betas, args.repeat)
        diffs = [abs(a[0] - b[0]) for a, b in zip(out_c, out_p) if np.isfinite(a[0]) and np.isfinite(b[0])]
        print(f"{n:>6} {len(taus):>3} {tc * 1e6:>12.1f} {tp * 1e6:>10.1f} {tp / tc:>8.1f} {max(diffs, default=0):>11.2e} {len(diffs) / len(out_c):>9.2f}")


if __name__ == "__main__":
    main()
