"""
Generate plain Python (and optionally numba) evaluators from expressions.

Generated functions take a 1-D float array of coordinates and return a
freshly allocated array.  Identical sources share one compiled object.
"""

import math

import numpy as np

from . import _backend
from .expr import to_source

_CACHE = {}


def _build(src: str, name: str, jitted: bool):
    key = (src, jitted)
    fn = _CACHE.get(key)
    if fn is None:
        ns = {"math": math, "np": np}
        exec(src, ns)
        fn = ns[name]
        if jitted:
            fn = _backend.jit(fn)
        _CACHE[key] = fn
    return fn


def array_function(exprs, shape, name="f", jitted=False):
    """
    Compile a nested list of expressions into ``f(x) -> ndarray``.

    Parameters
    ----------
    exprs : sequence
        Flat sequence of expressions in C order for ``shape``.
    shape : tuple of int
        Output shape.
    jitted : bool
        Request a numba-compiled function (honoured only when the numba
        backend is active).
    """
    shape = tuple(int(k) for k in shape)
    lines = [f"def {name}(x):", f"    out = np.zeros({shape!r})"]
    for flat, e in enumerate(exprs):
        if isinstance(e, type(None)):
            continue
        idx = np.unravel_index(flat, shape) if shape else ()
        src = to_source(e)
        if src == "0.0":
            continue
        lines.append(f"    out[{', '.join(str(int(i)) for i in idx)}] = {src}")
    lines.append("    return out")
    return _build("\n".join(lines) + "\n", name, jitted)
