import json
import os
import subprocess
import sys

import numpy as np

from aacoords.flows import integrate_flow
from aacoords.systems import builtin

PROBE = r"""
import json
import numpy as np
from aacoords import BACKEND
from aacoords.flows import integrate_flow, joint_flow, near_returns
from aacoords.systems import builtin

so3, osc = builtin("so3_rigid_body"), builtin("oscillator2d")
out = {
    "backend": BACKEND,
    "so3": integrate_flow(so3, "H", so3.seed, 7.3).tolist(),
    "osc": joint_flow(osc, (1.1, -2.4), osc.seed).tolist(),
    "returns": [c.times.tolist() for c in near_returns(builtin("unitfreq1d"), (1, 0), (0.1, 3))],
}
print(json.dumps(out))
"""


def probe(no_jit):
    env = dict(os.environ, AACOORDS_NO_JIT="1" if no_jit else "0")
    proc = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True,
                          text=True, check=True, timeout=300)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def test_numpy_fallback_matches_default_backend():
    ref = probe(no_jit=False)
    alt = probe(no_jit=True)
    assert alt["backend"] == "numpy"
    assert ref["backend"] in ("numba", "numpy")
    for key in ("so3", "osc"):
        np.testing.assert_allclose(alt[key], ref[key], rtol=0, atol=1e-12)
    np.testing.assert_allclose(alt["returns"], ref["returns"], atol=1e-12)
    # the in-process backend is one of the two
    so3 = builtin("so3_rigid_body")
    np.testing.assert_allclose(integrate_flow(so3, "H", so3.seed, 7.3), ref["so3"], atol=1e-12)
