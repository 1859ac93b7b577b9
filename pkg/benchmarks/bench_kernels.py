"""Time the numba and numpy paths of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is run once per path to warm up (numba compiles on first call),
outputs are checked for agreement, then the best of ``--repeat`` runs is
reported.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from radelft import kernels


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    cube = rng.exponential(size=(64, 128, 64))
    yield ("cfar OS 16x16 window", lambda nb: kernels.cfar_window_stats(
        cube, (8, 8), (0, 0), (False, False), 0.75, kernels.OS, use_numba=nb))
    yield ("cfar CA 16x16 window", lambda nb: kernels.cfar_window_stats(
        cube, (8, 8), (0, 0), (False, False), 1.0, kernels.CA, use_numba=nb))
    dop = rng.exponential(size=(128, 64, 64))
    yield ("cfar OS doppler wrap", lambda nb: kernels.cfar_window_stats(
        dop, (0, 4), (0, 0), (False, True), 0.75, kernels.OS, use_numba=nb))
    a = rng.uniform(-20, 20, size=(4000, 3))
    b = rng.uniform(-20, 20, size=(4000, 3))
    yield ("nn distances 4k x 4k", lambda nb: kernels.nn_distances(a, b, use_numba=nb))
    idx = rng.integers(0, 128, size=(1_000_000, 3))
    valid = rng.random(len(idx)) < 0.5
    yield ("occupancy scatter 1M", lambda nb: kernels.scatter_occupancy(
        idx, valid, (128, 128, 128), use_numba=nb))


def _same(x, y):
    if isinstance(x, tuple):
        return all(_same(a, b) for a, b in zip(x, y))
    return np.allclose(x, y, rtol=1e-12, atol=0)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<24}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, run in cases(rng):
        t_np = _best(lambda: run(False), args.repeat)
        if kernels.HAVE_NUMBA:
            if not _same(run(True), run(False)):
                raise SystemExit(f"{name}: numba and numpy outputs differ")
            t_nb = _best(lambda: run(True), args.repeat)
        else:
            t_nb = float("nan")
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb})
        print(f"{name:<24}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
