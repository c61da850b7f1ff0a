"""Compare the compiled Euler-Maruyama kernel against the numpy fallback.

    python benchmarks/bench_sde.py [--paths N] [--steps N] [--repeat N]

Both backends run the same ensemble; the script reports wall time, path-steps
per second, the speedup, and the largest difference between the two results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chemostat_fpk import _backend
from chemostat_fpk.model import monod_params
from chemostat_fpk.sde_sim import SimConfig, simulate_ensemble


def bench(backend: str, cfg: SimConfig, repeat: int):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = simulate_ensemble(monod_params(0.02), cfg, [cfg.t_end], backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    dt = 1e-3
    cfg = SimConfig(dt=dt, t_end=args.steps * dt, n_paths=args.paths, seed=1)
    work = args.paths * args.steps
    rows = {}
    for name in ("python", "compiled"):
        if name == "compiled" and not _backend.compiled_available():
            print("compiled kernel not built; skipping")
            continue
        rows[name] = bench(name, cfg, args.repeat)
        secs = rows[name][0]
        print(f"{name:>9}: {secs:8.3f} s  {work / secs / 1e6:8.2f} M path-steps/s")
    if len(rows) == 2:
        (tp, ep), (tc, ec) = rows["python"], rows["compiled"]
        gap = max(np.nanmax(np.abs(ep.S - ec.S)), np.nanmax(np.abs(ep.B - ec.B)))
        print(f"  speedup: {tp / tc:8.2f}x")
        print(f"  max |python - compiled|: {gap:.2e}")


if __name__ == "__main__":
    main()
