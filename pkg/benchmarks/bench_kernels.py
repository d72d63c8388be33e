"""Compare the numba and numpy kernel backends.

Times each kernel on inputs shaped like one step of the 8-AP room scenario,
then a full 780-step tracking run per backend. The backend is fixed at
import time, so each full run happens in a subprocess with
``DISAC_TRACK_BACKEND`` set.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 780]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from disac_track import kernels
from disac_track.measurement import PSD_TOL

_FULL_RUN = """
import json, time
from disac_track import kernels, presets
from disac_track.ap_manager import ManagementPolicy
from disac_track.pipeline import TrackerConfig, run_tracker
from disac_track.scenario import deployment_of, generate_scenario

cfg = presets.room(seed=1, steps={steps}, clutter_per_ap=9.0)
_, steps = generate_scenario(cfg)
dep = deployment_of(cfg)
tc = TrackerConfig(policy=ManagementPolicy("all_active"), clutter_per_ap=9.0)
run_tracker(dep, steps[:5], cfg.ue_inits, tc)  # compile / warm caches
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    run_tracker(dep, steps, cfg.ue_inits, tc)
    best = min(best, time.perf_counter() - t0)
n = sum(s.total() for s in steps) / len(steps)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": best, "meas_per_step": n}}))
"""


def _inputs(rng: np.random.Generator):
    J, N = 40, 80
    w = rng.uniform(0.01, 1.0, J)
    m = rng.normal(size=(J, 3))
    A = rng.normal(size=(J, 3, 3))
    P = A @ A.transpose(0, 2, 1) * 0.01 + 1e-3 * np.eye(3)
    z = rng.normal(size=(N, 3))
    B = rng.normal(size=(N, 3, 3))
    R = B @ B.transpose(0, 2, 1) * 0.01 + 1e-3 * np.eye(3)
    zt = np.column_stack([rng.uniform(1e-8, 3e-8, N), rng.uniform(0.5, 2.5, N), rng.uniform(-3, 3, N)])
    cov = np.tile(np.diag([(0.05 / 3e8) ** 2, 4e-4, 4e-4]), (N, 1, 1))
    pos = rng.normal(size=(N, 3))
    rot = np.tile(np.eye(3), (N, 1, 1))
    return dict(w=w, m=m, P=P, z=z, R=R, zt=zt, cov=cov, pos=pos, rot=rot)


def bench_kernels(repeat: int) -> dict[str, dict[str, float]]:
    x = _inputs(np.random.default_rng(0))
    out: dict[str, dict[str, float]] = {}
    for name, mod in kernels.backends().items():
        L, _ = mod.psd_factor(x["cov"], PSD_TOL)
        calls = {
            "gm_update": lambda: mod.gm_update(x["w"], x["m"], x["P"], x["z"], x["R"], 0.9, 1e-2),
            "merge_pass": lambda: mod.merge_pass(x["w"], x["m"], x["P"], 4.0),
            "greedy_partition": lambda: mod.greedy_partition(x["z"], 0.5),
            "psd_factor": lambda: mod.psd_factor(x["cov"], PSD_TOL),
            "cubature_points": lambda: mod.cubature_points(x["zt"], L, x["pos"], x["rot"], 299792458.0),
        }
        res = {}
        for kname, fn in calls.items():
            fn()  # compile
            n = 200
            res[kname] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
        out[name] = res
    return out


def bench_full(repeat: int, steps: int) -> list[dict]:
    rows = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, DISAC_TRACK_BACKEND=backend)
        code = _FULL_RUN.format(steps=steps, repeat=repeat)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--steps", type=int, default=780)
    ap.add_argument("--skip-full", action="store_true")
    args = ap.parse_args(argv)

    res = bench_kernels(args.repeat)
    names = list(res)
    print(f"{'kernel':<18}" + "".join(f"{n:>14}" for n in names) + "   speedup")
    for k in res[names[0]]:
        cells = "".join(f"{res[n][k] * 1e6:>11.1f} us" for n in names)
        speed = res["numpy"][k] / res["numba"][k] if "numba" in res else float("nan")
        print(f"{k:<18}{cells}   {speed:6.1f}x")
    if not args.skip_full:
        print()
        for row in bench_full(args.repeat, args.steps):
            print(f"full run [{row['backend']:>5}]  {row['seconds']:.3f} s  "
                  f"({args.steps} steps, {row['meas_per_step']:.1f} measurements/step)")


if __name__ == "__main__":
    main()
