"""Time the compiled reception kernel against the numpy fallback.

    python3 benchmarks/bench_kernel.py [--nodes 1000 3000] [--repeat 3]

Both kernels see the same event stream; the script checks they agree
before reporting timings.
"""

import argparse
import time

import numpy as np

from lorasf import allocators as al
from lorasf import kernel
from lorasf.phy import Thresholds
from lorasf.sim import SimOptions, delivered_events, generate_traffic
from lorasf.topology import place_grid


def bench(n, m_side, duration, repeat, intersf):
    thr = Thresholds()
    t = place_grid(n, m_side, 12_000, seed=0)
    plan = al.explora_c(t, thr, seed=0)
    opts = SimOptions(intersf=intersf)
    stream = generate_traffic(t, plan, duration, seed=0)
    times, results = {}, {}
    for name, fn in kernel.KERNELS.items():
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            results[name] = delivered_events(stream, t, thr, opts, fn)
            best = min(best, time.perf_counter() - t0)
        times[name] = best
    ref = next(iter(results.values()))
    if not all(np.array_equal(ref, r) for r in results.values()):
        raise SystemExit(f"kernels disagree at n={n}")
    return len(stream), times


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, nargs="+", default=[1000, 3000, 8000])
    ap.add_argument("--gateways-side", type=int, default=2)
    ap.add_argument("--duration", type=float, default=90_000.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--intersf", action="store_true")
    args = ap.parse_args()

    names = list(kernel.KERNELS)
    print(f"default backend: {kernel.BACKEND}")
    print(f"{'nodes':>7} {'events':>9} " + " ".join(f"{n + ' s':>10}" for n in names) + "  speedup")
    for n in args.nodes:
        events, times = bench(n, args.gateways_side, args.duration, args.repeat, args.intersf)
        cols = " ".join(f"{times[k]:10.3f}" for k in names)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{n:7d} {events:9d} {cols}  {speed:6.1f}x")


if __name__ == "__main__":
    main()
