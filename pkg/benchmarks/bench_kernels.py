"""Time the numba kernels against their pure-numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Compilation (or cache load) happens in an untimed warm-up call and is
reported separately.
"""

import argparse
import json
import time

import numpy as np

from qfilter import _accel, _kernels


def cases(rng):
    obs = rng.normal(size=100_000)
    u = rng.random(2000 * 100)
    wt, wo = rng.normal(0, 10, 100_000), rng.normal(0, 10, 100_000)
    targets, conds = rng.normal(size=20_000), rng.normal(size=(20_000, 2))
    seq = rng.normal(size=3000)
    return {
        "kalman_scalar (T=1e5)": ("kalman_scalar", (obs, 0.8, 0.36, 1.0, 1.0, 0.0, 1.0)),
        "mobius_chain (2000 blocks x 100)": ("mobius_chain", (0.1, 0.01, 100, u)),
        "euler_qubit_chain (T=1e5)": ("euler_qubit_chain", (0.1, 0.1, 100.0, 1e-6, wt, wo, False)),
        "nw_sums (n=2e4, m=2)": ("nw_sums", (targets, conds, 0.3, np.array([0.1, -0.2]), 0.3, 0.3)),
        "nw_sequential (n=3000, m=1)": ("nw_sequential", (seq, 1, 3, 0.0)),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", dest="json_path")
    args = parser.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<34} {'warm-up':>9} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for label, (name, call) in cases(rng).items():
        fast = getattr(_kernels.numba_impl, name)
        slow = getattr(_kernels.numpy_impl, name)
        t0 = time.perf_counter()
        fast(*call)
        warm = time.perf_counter() - t0
        t_fast = best_of(fast, call, args.repeat)
        t_slow = best_of(slow, call, max(1, args.repeat // 2))
        rows.append({"kernel": label, "warmup_s": warm, "numba_s": t_fast, "numpy_s": t_slow, "speedup": t_slow / t_fast})
        print(f"{label:<34} {warm:9.3f} {t_fast:10.5f} {t_slow:10.5f} {t_slow / t_fast:8.1f}x")
    if args.json_path:
        with open(args.json_path, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
