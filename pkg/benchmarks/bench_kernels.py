"""Round-loop kernel timing: numba path vs pure-numpy fallback.

    python benchmarks/bench_kernels.py [--reps 3] [--duration 3600]

Both paths run the same configs; results are checked for bit equality.
"""

import argparse
import time

import numpy as np

from geosim.engine import nib_config, simulate_rounds
from geosim.kernels import numba_enabled
from geosim.workload import generate_arrivals

CASES = [
    ("n=4 4MiB", dict(n=4)),
    ("n=32 direct", dict(n=32, strategy="direct")),
    ("n=128 tree", dict(n=128)),
    ("n=7 crash+jitter", dict(n=7, crashed=(3,), jitter=0.1, gamma=2)),
]


def best_of(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--duration", type=float, default=3600.0)
    args = ap.parse_args()
    if not numba_enabled():
        print("numba path disabled (GEOSIM_DISABLE_NUMBA set); timing numpy only")

    print(f"{'case':<20}{'rounds':>8}{'numpy s':>10}{'numba s':>10}{'speedup':>9}  equal")
    for name, kw in CASES:
        cfg = nib_config(duration=args.duration, seed=1, **kw)
        arr = generate_arrivals(cfg.arrival_rate, cfg.duration, cfg.seed, cfg.stream)
        t_np, res_np = best_of(lambda: simulate_rounds(cfg, arr, use_numba=False), args.reps)
        if numba_enabled():
            simulate_rounds(cfg, arr, use_numba=True)  # compile outside the timing
            t_nb, res_nb = best_of(lambda: simulate_rounds(cfg, arr, use_numba=True), args.reps)
            equal = all(np.array_equal(a, b, equal_nan=True) for a, b in zip(res_np, res_nb))
            print(f"{name:<20}{len(res_np[0]):>8}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x  {equal}")
        else:
            print(f"{name:<20}{len(res_np[0]):>8}{t_np:>10.3f}{'-':>10}{'-':>9}  -")


if __name__ == "__main__":
    main()
