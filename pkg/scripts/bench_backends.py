"""Time the hot kernels under the numba and the pure-numpy backend.

Each backend runs in a fresh interpreter because the switch is read at
import time.  Usage: python scripts/bench_backends.py [--repeat N]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, time, warnings
import numpy as np
warnings.simplefilter("ignore")
from ddessm import _accel, chaos, dde, ssm, systems

def best(f, repeat):
    f()                       # warm-up (includes numba compilation)
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter(); f(); ts.append(time.perf_counter() - t0)
    return min(ts)

repeat = int(__import__("sys").argv[1])
mg = systems.build("mackey-glass")
pts = np.random.default_rng(0).standard_normal((3000, 3))
rbf = ssm.RBFMap(np.random.default_rng(1).standard_normal((500, 2)) * 0.1,
                 np.random.default_rng(2).standard_normal((500, 2)) * 1e-3, 0.1)
out = {
    "backend": _accel.BACKEND,
    "simulate_mackey_glass_T100": best(lambda: dde.simulate(mg, dde.HistorySpec.constant([0.5]), 100.0, 0.01), repeat),
    "pair_counts_3000": best(lambda: chaos.pair_counts(pts, np.logspace(-2, 1, 20)), repeat),
    "rbf_orbit_2000": best(lambda: ssm.rbf_orbit(rbf, np.zeros(2), 2000), repeat),
}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env["DDESSM_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':32s} {fast['backend']:>10s} {slow['backend']:>10s} {'speedup':>8s}")
    for k in fast:
        if k == "backend":
            continue
        print(f"{k:32s} {fast[k]:10.4f} {slow[k]:10.4f} {slow[k] / fast[k]:8.1f}x")


if __name__ == "__main__":
    main()
