"""Compare simulator throughput of the compiled and pure-Python kernels.

Usage: python3 benchmarks/bench_kernel.py [--duration SECONDS] [--repeat N]
"""

import argparse
import time

import numpy as np

from vsr_fdx.kernel import BACKENDS
from vsr_fdx.sim import FaultScenario, SimParams, SwitchId, simulate


def time_backend(name, duration, repeat):
    scenario = FaultScenario.single([SwitchId.SaP], duration / 2)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        trace = simulate(scenario, duration, backend=name)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=0.1, help="simulated seconds per run")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    params = SimParams()
    steps = int(round(args.duration / params.sim_step))
    results = {}
    for name in sorted(BACKENDS):
        seconds, trace = time_backend(name, args.duration, args.repeat)
        results[name] = (seconds, trace)
        print(f"{name:>9}: {seconds:8.3f} s  {steps / seconds:12,.0f} steps/s  "
              f"{args.duration / seconds:8.2f}x realtime")
    if len(results) == 2:
        (tc, a), (tp, b) = results["compiled"], results["python"]
        same = np.array_equal(a.i_abc, b.i_abc) and np.array_equal(a.u_dc, b.u_dc)
        print(f"speedup: {tp / tc:.1f}x, traces bit-identical: {same}")
    else:
        print("compiled kernel not built; only the Python fallback was timed")


if __name__ == "__main__":
    main()
