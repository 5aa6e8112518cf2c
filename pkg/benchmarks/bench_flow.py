"""
Compare the numba and pure-numpy integration backends.

Each backend runs in its own interpreter (the backend is fixed at import
time by ``AACOORDS_NO_JIT``).  Reported times exclude the first call, which
for numba includes compilation.

    python3 benchmarks/bench_flow.py [--repeat 20]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from aacoords import BACKEND, builtin
from aacoords.flows import FlowConfig, integrate_flow, near_returns

repeat = int(sys.argv[1])
cfg = FlowConfig()
out = {"backend": BACKEND}

so3 = builtin("so3_rigid_body")
t0 = time.perf_counter()
integrate_flow(so3, "H", so3.seed, 19.0, cfg)
out["first_call_s"] = time.perf_counter() - t0
t0 = time.perf_counter()
for _ in range(repeat):
    x = integrate_flow(so3, "H", so3.seed, 19.0, cfg)
out["so3_period_flow_s"] = (time.perf_counter() - t0) / repeat
out["so3_endpoint"] = x.tolist()

osc = builtin("oscillator2d")
near_returns(osc, osc.seed, (0.1, 1.0), 8, cfg)
t0 = time.perf_counter()
near_returns(osc, osc.seed, (0.1, 10.0), 32, cfg)
out["oscillator_near_returns_s"] = time.perf_counter() - t0
print(json.dumps(out))
"""


def run(no_jit: bool, repeat: int) -> dict:
    env = dict(os.environ, AACOORDS_NO_JIT="1" if no_jit else "0")
    proc = subprocess.run(
        [sys.executable, "-c", WORKER, str(repeat)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    results = [run(False, args.repeat), run(True, max(1, args.repeat // 10))]
    keys = ["first_call_s", "so3_period_flow_s", "oscillator_near_returns_s"]
    print(f"{'metric':28s}" + "".join(f"{r['backend']:>12s}" for r in results))
    for k in keys:
        print(f"{k:28s}" + "".join(f"{r[k]:12.4g}" for r in results))
    a, b = (results[0]["so3_endpoint"], results[1]["so3_endpoint"])
    print(f"endpoint agreement: {max(abs(u - v) for u, v in zip(a, b)):.2e}")
    print(f"total wall clock: {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
