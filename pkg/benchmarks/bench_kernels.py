"""Benchmark the stencil kernels on both backends (numba vs pure numpy).

The backend is fixed at import time by KSCTL_BACKEND, so this driver spawns
one subprocess per backend and compares medians.

    python benchmarks/bench_kernels.py [--n1d 20000] [--n2d 512] [--reps 30]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, os, time
import numpy as np
from ksctl import _kernels
from ksctl.grid import build_grid, neumann_laplacian, chemotaxis_divergence

cfg = json.loads(os.environ["BENCH_CFG"])
n1d, n2d, reps = cfg["n1d"], cfg["n2d"], cfg["reps"]

g1 = build_grid(1, 1.0, n1d, 1.0, 16)
g2 = build_grid(2, (1.0, 1.0), (n2d, n2d), 1.0, 16)
rng = np.random.default_rng(0)
f1 = rng.standard_normal(g1.num_nodes)
u1 = rng.standard_normal(g1.num_nodes)
f2 = rng.standard_normal(g2.num_nodes)
u2 = rng.standard_normal(g2.num_nodes)

def bench(fn, *args):
    fn(*args)                      # warm-up (includes any JIT compile)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))

out = {
    "backend": _kernels.backend_name(),
    "lap_1d": bench(neumann_laplacian, f1, g1),
    "chemdiv_1d": bench(chemotaxis_divergence, u1, f1, g1),
    "lap_2d": bench(neumann_laplacian, f2, g2),
    "chemdiv_2d": bench(chemotaxis_divergence, u2, f2, g2),
}
print(json.dumps(out))
"""


def run_backend(backend: str, cfg: dict) -> dict:
    env = dict(os.environ, KSCTL_BACKEND=backend, BENCH_CFG=json.dumps(cfg))
    out = subprocess.run(
        [sys.executable, "-c", WORKER], env=env, capture_output=True, text=True
    )
    if out.returncode != 0:
        raise RuntimeError(f"{backend} run failed:\n{out.stderr}")
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n1d", type=int, default=20000)
    ap.add_argument("--n2d", type=int, default=512)
    ap.add_argument("--reps", type=int, default=30)
    args = ap.parse_args()
    cfg = {"n1d": args.n1d, "n2d": args.n2d, "reps": args.reps}

    results = {b: run_backend(b, cfg) for b in ("numpy", "numba")}
    kernels = ["lap_1d", "chemdiv_1d", "lap_2d", "chemdiv_2d"]
    print(f"{'kernel':<12} {'numpy [us]':>12} {'numba [us]':>12} {'speedup':>9}")
    for k in kernels:
        t_np = results["numpy"][k] * 1e6
        t_nb = results["numba"][k] * 1e6
        print(f"{k:<12} {t_np:>12.1f} {t_nb:>12.1f} {t_np / t_nb:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
