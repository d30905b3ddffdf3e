"""Numba versus pure-numpy timings for the two hot kernels.

    python3 benchmarks/bench_kernels.py [--paths N] [--steps K] [--repeat R]

Each kernel is warmed up once (JIT compilation excluded) and the best of
``repeat`` runs is reported, together with the largest output difference
between the two backends.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from builders import random_instance  # noqa: E402
from mftg import _accel, riccati, strategy  # noqa: E402
from mftg import simulator as sm  # noqa: E402


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--riccati-steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    _accel.configure_threads()

    spec = random_instance(0, "rn_nash")
    rows = []
    res = {}
    for backend in ("numpy", "numba"):
        t, sol = best_of(lambda: riccati.solve_rn_nash(spec, args.riccati_steps, backend=backend), args.repeat)
        res[backend] = sol
        rows.append(("riccati (d=2, n=2, S=2)", backend, t))
    ric_diff = float(np.abs(res["numba"].P - res["numpy"].P).max())

    law = strategy.synthesize(spec, res["numpy"])
    cfg = sm.SimulationConfig(args.paths, args.steps, 1)
    for backend in ("numpy", "numba"):
        t, batch = best_of(lambda: sm.simulate(spec, law, cfg, backend=backend), args.repeat)
        res[backend] = batch
        rows.append((f"simulate ({args.paths} paths x {args.steps} steps)", backend, t))
    sim_diff = float(np.abs(res["numba"].costs - res["numpy"].costs).max())

    print(f"{'kernel':<40} {'backend':<8} {'seconds':>9}")
    for name, backend, t in rows:
        print(f"{name:<40} {backend:<8} {t:>9.3f}")
    print(f"speed-up riccati {rows[0][2] / rows[1][2]:.1f}x, simulate {rows[2][2] / rows[3][2]:.1f}x")
    print(f"max backend difference: riccati {ric_diff:.1e}, simulate costs {sim_diff:.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
