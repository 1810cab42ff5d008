"""Timing comparison of the compiled kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

The script times each workload in-process (whatever lane the current
environment selects), then re-runs itself in a subprocess with
TOPSEL_NO_NUMBA=1 and prints a side-by-side table. Workload values are
carried along so the two lanes can be checked against each other; MC
workloads share counter-based streams, so they agree to float rounding.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

import topsel as ts

CHILD_FLAG = "TOPSEL_BENCH_CHILD"


def build_workloads():
    area = ts.Rect(0.0, 0.0, 1.0, 1.0)
    dmap20 = ts.random_deployment(20, area, seed=7)
    grid10 = ts.grid_covering(area, 10, 10)
    pr20 = ts.TopPProblem(dmap20, grid10, 0.5, 3, check_separation=False)

    dmap8 = ts.random_deployment(8, area, seed=8)
    pr8 = ts.TopPProblem(dmap8, ts.grid_covering(area, 3, 3), 0.5, 2,
                         check_separation=False)

    big = ts.Rect(0.0, 0.0, 30.0, 30.0)
    dmap = ts.random_deployment(16, big, seed=9)
    grid = ts.grid_covering(big, 18, 18)
    model = ts.PropagationModel(
        tuple(ts.LogLinearModel(-40.0, 2.5, 1.5) for _ in range(dmap.s))
    )
    rng = np.random.default_rng(10)
    frames = [
        ts.sample_measurements(
            model, dmap, ts.Location(*rng.uniform(3.0, 27.0, 2)), seed=i, t=i
        )
        for i in range(300)
    ]
    pair_frames = frames[:50]
    blocks = [
        ts.local_grid(grid, ts.Location(8.0, 8.0), 7),
        ts.local_grid(grid, ts.Location(22.0, 20.0), 7),
    ]

    def joint_many():
        acc = 0.0
        for f in pair_frames:
            acc += float(ts.joint_posterior(model, dmap, grid, blocks, f).log_probs[0])
        return acc

    return [
        ("quadrature s=20 grid=100 p=3",
         lambda: ts.error_prob_quadrature(pr20).p_error),
        ("rule simulation 2e5 draws",
         lambda: ts.empirical_error(pr20, 200_000, seed=1).p_error),
        ("orthant MC 1e5 per hypothesis",
         lambda: ts.error_prob_orthant_mc(pr8, 100_000, seed=2).p_error),
        ("posterior tracking 300 frames",
         lambda: ts.run_single_target(model, dmap, grid, frames,
                                      ts.ListParams(1, 3), 2).accuracy),
        ("joint posterior 50 frames, two 7x7 blocks", joint_many),
    ]


def run_lane():
    rows = []
    for name, fn in build_workloads():
        fn()  # warm-up covers jit compilation in the compiled lane
        t0 = time.perf_counter()
        value = fn()
        dt = time.perf_counter() - t0
        rows.append({"name": name, "seconds": dt, "value": value})
    return {"backend": ts.BACKEND, "rows": rows}


def main():
    if os.environ.get(CHILD_FLAG):
        print(json.dumps(run_lane()))
        return

    here = run_lane()
    env = dict(os.environ, TOPSEL_NO_NUMBA="1", **{CHILD_FLAG: "1"})
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__)],
        env=env, capture_output=True, text=True, check=True,
    )
    other = json.loads(out.stdout.splitlines()[-1])

    print(f"lane A: {here['backend']}, lane B: {other['backend']}")
    width = max(len(r["name"]) for r in here["rows"])
    print(f"{'workload':<{width}}  {'A (s)':>9}  {'B (s)':>9}  {'B/A':>6}  value gap")
    for a, b in zip(here["rows"], other["rows"]):
        gap = abs(a["value"] - b["value"])
        ratio = b["seconds"] / a["seconds"] if a["seconds"] > 0 else float("inf")
        print(
            f"{a['name']:<{width}}  {a['seconds']:>9.4f}  {b['seconds']:>9.4f}"
            f"  {ratio:>5.1f}x  {gap:.2e}"
        )


if __name__ == "__main__":
    main()
