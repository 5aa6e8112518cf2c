"""
Integrable systems
==================

A :class:`SystemSpec` bundles a Poisson structure with an ordered tuple of
functions ``F = (f_1, ..., f_s)``, the number ``r`` of functions whose
flows generate the torus action, and the declared transverse functions.
This module loads and writes system documents, provides the built-in
fixtures, and checks the (non-)commutative integrability conditions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np
import yaml

from . import _backend, codegen
from .expr import (
    ExprError,
    differentiate,
    evaluate,
    is_zero,
    parse,
    to_string,
)
from .geometry import (
    PoissonStructure,
    hamiltonian_vector_field,
    numerical_rank,
    poisson_bracket,
    polar_subspace,
    span_basis,
    subspace_angle,
    verify_poisson,
)

KINDS = ("commutative", "noncommutative")
INDEPENDENCE_TOL = 1e-8


class SchemaError(ValueError):
    """Malformed system document or violated structural invariant."""


class KindMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """
    Integrable-system candidate on ``R^n``.

    Attributes
    ----------
    structure : PoissonStructure
    function_names : tuple of str
    functions : tuple of Expr
        ``f_1 .. f_s`` over the structure's coordinates.
    rank : int
        ``r``; the first ``r`` functions generate the torus action.
    kind : {"commutative", "noncommutative"}
    transverse : tuple of str
        The ``s - r`` function names used as transverse coordinates.
    lo, hi : tuple of float
        Sampling box.
    seed : tuple of float
        Anchor point of the invariant torus.
    """

    name: str
    structure: PoissonStructure
    function_names: tuple
    functions: tuple
    rank: int
    kind: str
    transverse: tuple
    lo: tuple
    hi: tuple
    seed: tuple

    def __post_init__(self):
        for attr in ("function_names", "functions", "transverse", "lo", "hi", "seed"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "seed", tuple(float(v) for v in self.seed))
        n, s, r = self.n, self.s, self.rank
        if self.kind not in KINDS:
            raise SchemaError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if len(self.functions) != len(self.function_names):
            raise SchemaError("function names and expressions differ in length")
        if len(set(self.function_names)) != s:
            raise SchemaError("duplicate function names")
        if not 1 <= r <= s:
            raise SchemaError(f"rank {r} must lie in [1, {s}]")
        if r + s != n:
            raise SchemaError(f"r + s = {r} + {s} != n = {n}")
        if len(self.transverse) != s - r:
            raise SchemaError(f"expected {s - r} transverse names, got {len(self.transverse)}")
        unknown = set(self.transverse) - set(self.function_names)
        if unknown:
            raise SchemaError(f"transverse names {sorted(unknown)} are not functions")
        if set(self.transverse) & set(self.function_names[:r]):
            raise SchemaError("transverse names overlap the first r functions")
        for label, vec in (("lo", self.lo), ("hi", self.hi), ("seed", self.seed)):
            if len(vec) != n:
                raise SchemaError(f"{label} has length {len(vec)}, expected {n}")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise SchemaError("domain box has lo > hi")
        if any(not a <= x <= b for a, x, b in zip(self.lo, self.seed, self.hi)):
            raise SchemaError("seed lies outside the domain box")

    @property
    def n(self) -> int:
        return self.structure.n

    @property
    def s(self) -> int:
        return len(self.functions)

    @property
    def coords(self) -> tuple:
        return self.structure.coords

    def function(self, name: str):
        try:
            return self.functions[self.function_names.index(name)]
        except ValueError:
            raise KeyError(f"no function named {name!r}") from None

    def base_order(self) -> tuple:
        """
        Function indices ordered as (first r, transverse, remaining).

        Grids over the base use this order: coordinate ``a`` of a base point
        is the value of function ``base_order()[a]``.
        """
        idx = list(range(self.rank))
        idx += [self.function_names.index(t) for t in self.transverse]
        idx += [k for k in range(self.s) if k not in idx]
        return tuple(idx)

    def with_seed(self, seed) -> "SystemSpec":
        seed = tuple(float(v) for v in seed)
        lo = tuple(min(a, x) for a, x in zip(self.lo, seed))
        hi = tuple(max(b, x) for b, x in zip(self.hi, seed))
        return SystemSpec(
            self.name, self.structure, self.function_names, self.functions,
            self.rank, self.kind, self.transverse, lo, hi, seed,
        )

    @cached_property
    def compiled(self) -> "CompiledSystem":
        return CompiledSystem(self)


class CompiledSystem:
    """Numeric evaluators generated from a spec's expressions."""

    def __init__(self, spec: SystemSpec):
        P = spec.structure
        n, s = spec.n, spec.s
        self.fields_expr = [hamiltonian_vector_field(P, f) for f in spec.functions]
        flat = [c for X in self.fields_expr for c in X.components]
        # kernel-facing field matrix; jitted when the numba backend is active
        self.field_matrix = codegen.array_function(
            flat, (s, n), name="fields", jitted=_backend.USE_NUMBA
        )
        self.field_matrix_py = codegen.array_function(flat, (s, n), name="fields")
        self._F = codegen.array_function(list(spec.functions), (s,), name="F")
        grads = [differentiate(f, c) for f in spec.functions for c in spec.coords]
        self._dF = codegen.array_function(grads, (s, n), name="dF")
        brackets = []
        for a in range(s):
            for b in range(s):
                brackets.append(
                    poisson_bracket(P, spec.functions[a], spec.functions[b]) if a < b else None
                )
        self.bracket_exprs = brackets
        self._B = codegen.array_function(brackets, (s, s), name="brackets")
        self.structure = P

    def F(self, x) -> np.ndarray:
        return self._F(np.asarray(x, dtype=float))

    def dF(self, x) -> np.ndarray:
        return self._dF(np.asarray(x, dtype=float))

    def fields(self, x) -> np.ndarray:
        """Rows ``X_{f_j}(x)``."""
        return self.field_matrix_py(np.asarray(x, dtype=float))

    def brackets(self, x) -> np.ndarray:
        """Antisymmetric matrix ``{f_a, f_b}(x)``."""
        B = self._B(np.asarray(x, dtype=float))
        return B - B.T

    def pi(self, x) -> np.ndarray:
        return self.structure.matrix(x)


# ---------------------------------------------------------------------------
# documents


def _index(coords, key, what):
    if isinstance(key, bool):
        raise SchemaError(f"{what}: invalid coordinate reference {key!r}")
    if isinstance(key, int):
        if not 0 <= key < len(coords):
            raise SchemaError(f"{what}: index {key} out of range")
        return key
    if isinstance(key, str) and key in coords:
        return coords.index(key)
    raise SchemaError(f"{what}: unknown coordinate {key!r}")


def _require(doc, key):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    return doc[key]


def _float_list(value, what):
    if not isinstance(value, (list, tuple)):
        raise SchemaError(f"{what} must be a list")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise SchemaError(f"{what} must contain numbers") from None


def _parse_expr(text, coords, where):
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise SchemaError(f"{where}: expression must be a string")
    try:
        return parse(text, coords)
    except ExprError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def from_dict(doc: Mapping[str, Any]) -> SystemSpec:
    """Build a spec from an already-deserialised document."""
    if not isinstance(doc, Mapping):
        raise SchemaError("document must be a mapping")
    coords = _require(doc, "coordinates")
    if not isinstance(coords, list) or not all(isinstance(c, str) for c in coords):
        raise SchemaError("coordinates must be a list of names")
    coords = tuple(coords)
    if len(set(coords)) != len(coords):
        raise SchemaError("duplicate coordinate names")
    dim = _require(doc, "dimension")
    if not isinstance(dim, int) or dim != len(coords):
        raise SchemaError(f"dimension {dim!r} does not match {len(coords)} coordinates")

    upper = {}
    entries = doc.get("poisson", []) or []
    if not isinstance(entries, list):
        raise SchemaError("poisson must be a list")
    for k, item in enumerate(entries):
        where = f"poisson[{k}]"
        if not isinstance(item, Mapping):
            raise SchemaError(f"{where} must be a mapping")
        i = _index(coords, _require(item, "i"), where)
        j = _index(coords, _require(item, "j"), where)
        if i >= j:
            raise SchemaError(f"{where}: entries must have i < j")
        if (i, j) in upper:
            raise SchemaError(f"{where}: duplicate entry")
        upper[(i, j)] = _parse_expr(_require(item, "expr"), coords, where)
    structure = PoissonStructure(coords, upper)

    funcs = _require(doc, "functions")
    if not isinstance(funcs, list) or not funcs:
        raise SchemaError("functions must be a non-empty list")
    names, exprs = [], []
    for k, item in enumerate(funcs):
        where = f"functions[{k}]"
        if not isinstance(item, Mapping):
            raise SchemaError(f"{where} must be a mapping")
        nm = _require(item, "name")
        if not isinstance(nm, str):
            raise SchemaError(f"{where}: name must be a string")
        names.append(nm)
        exprs.append(_parse_expr(_require(item, "expr"), coords, where))

    rank = _require(doc, "rank")
    if not isinstance(rank, int) or isinstance(rank, bool):
        raise SchemaError("rank must be an integer")
    transverse = doc.get("transverse", []) or []
    if not isinstance(transverse, list):
        raise SchemaError("transverse must be a list")
    box = _require(doc, "domain_box")
    if not isinstance(box, Mapping):
        raise SchemaError("domain_box must be a mapping with lo and hi")
    return SystemSpec(
        name=str(doc.get("name", "custom")),
        structure=structure,
        function_names=tuple(names),
        functions=tuple(exprs),
        rank=rank,
        kind=_require(doc, "kind"),
        transverse=tuple(transverse),
        lo=_float_list(_require(box, "lo"), "domain_box.lo"),
        hi=_float_list(_require(box, "hi"), "domain_box.hi"),
        seed=_float_list(_require(doc, "seed"), "seed"),
    )


def load_system(document: str) -> SystemSpec:
    """
    Parse a YAML or JSON system document.

    Raises
    ------
    SchemaError
        On malformed input, bad expressions or violated invariants.
    """
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unreadable document: {exc}") from exc
    return from_dict(doc)


def to_dict(spec: SystemSpec) -> dict:
    coords = spec.coords
    return {
        "name": spec.name,
        "dimension": spec.n,
        "coordinates": list(coords),
        "poisson": [
            {"i": coords[i], "j": coords[j], "expr": to_string(e)}
            for (i, j), e in spec.structure.upper.items()
        ],
        "functions": [
            {"name": nm, "expr": to_string(e)}
            for nm, e in zip(spec.function_names, spec.functions)
        ],
        "rank": spec.rank,
        "kind": spec.kind,
        "transverse": list(spec.transverse),
        "domain_box": {"lo": list(spec.lo), "hi": list(spec.hi)},
        "seed": list(spec.seed),
    }


def serialize(spec: SystemSpec) -> str:
    return json.dumps(to_dict(spec), indent=2)


# ---------------------------------------------------------------------------
# built-ins

_CANONICAL_2 = {("q", "p"): "1"}
_CANONICAL_4 = {("q1", "p1"): "1", ("q2", "p2"): "1"}

_BUILTINS = {
    "harmonic1d": dict(
        coords=("q", "p"),
        poisson=_CANONICAL_2,
        functions=[("H", "(q^2 + p^2)/2")],
        rank=1,
        kind="commutative",
        transverse=(),
        lo=(-2, -2),
        hi=(2, 2),
        seed=(1, 0),
    ),
    "unitfreq1d": dict(
        coords=("q", "p"),
        poisson=_CANONICAL_2,
        functions=[("H", "3.141592653589793*(q^2 + p^2)")],
        rank=1,
        kind="commutative",
        transverse=(),
        lo=(-2, -2),
        hi=(2, 2),
        seed=(1, 0),
    ),
    "oscillator2d": dict(
        coords=("q1", "p1", "q2", "p2"),
        poisson=_CANONICAL_4,
        functions=[("H1", "(q1^2 + p1^2)/2"), ("H2", "(q2^2 + p2^2)/2")],
        rank=2,
        kind="commutative",
        transverse=(),
        lo=(-2,) * 4,
        hi=(2,) * 4,
        seed=(1, 0, 1, 0),
    ),
    "so3_rigid_body": dict(
        coords=("x", "y", "z"),
        poisson={("x", "y"): "z", ("y", "z"): "x", ("z", "x"): "y"},
        functions=[("H", "x^2/2 + y^2/4 + z^2/6"), ("C", "x^2 + y^2 + z^2")],
        rank=1,
        kind="commutative",
        transverse=("C",),
        lo=(-0.5, -0.5, 0.5),
        hi=(0.5, 0.5, 1.5),
        seed=(0.1, 0.1, 1),
    ),
    "cjl_counterexample": dict(
        coords=("f1", "f2", "g1", "g2"),
        poisson={("g1", "f1"): "1", ("g2", "f2"): "g2^2", ("g1", "f2"): "g2"},
        functions=[("f1", "f1"), ("f2", "f2")],
        rank=2,
        kind="commutative",
        transverse=(),
        lo=(-1,) * 4,
        hi=(1,) * 4,
        seed=(0, 0, 0, 0.5),
    ),
    "isotropic2d_nc": dict(
        coords=("q1", "p1", "q2", "p2"),
        poisson=_CANONICAL_4,
        functions=[
            ("H", "(q1^2 + p1^2 + q2^2 + p2^2)/2"),
            ("L", "q1*p2 - q2*p1"),
            ("K", "(q1^2 + p1^2 - q2^2 - p2^2)/2"),
        ],
        rank=1,
        kind="noncommutative",
        transverse=("L", "K"),
        lo=(-1.5,) * 4,
        hi=(1.5,) * 4,
        seed=(1, 0, 0.5, 0),
    ),
}

BUILTIN_NAMES = tuple(_BUILTINS)

# fixtures whose fibers through the seed are compact tori
COMPACT_BUILTINS = ("harmonic1d", "unitfreq1d", "oscillator2d", "so3_rigid_body", "isotropic2d_nc")

_BUILTIN_CACHE: dict = {}


def builtin(name: str) -> SystemSpec:
    """Return a built-in fixture by name."""
    if name not in _BUILTINS:
        raise KeyError(f"unknown built-in {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    spec = _BUILTIN_CACHE.get(name)
    if spec is None:
        d = _BUILTINS[name]
        coords = d["coords"]
        spec = SystemSpec(
            name=name,
            structure=PoissonStructure.from_text(coords, d["poisson"]),
            function_names=tuple(nm for nm, _ in d["functions"]),
            functions=tuple(parse(t, coords) for _, t in d["functions"]),
            rank=d["rank"],
            kind=d["kind"],
            transverse=d["transverse"],
            lo=d["lo"],
            hi=d["hi"],
            seed=d["seed"],
        )
        _BUILTIN_CACHE[name] = spec
    return spec


# ---------------------------------------------------------------------------
# validation


@dataclass
class Verdict:
    name: str
    passed: bool
    residual: float
    witness: Any = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        w = self.witness
        if isinstance(w, np.ndarray) or isinstance(w, tuple):
            w = [float(v) for v in w]
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "residual": float(self.residual),
            "witness": w,
            "detail": _jsonable(self.detail),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class ValidationReport:
    system: str
    kind: str
    verdicts: list

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def __getitem__(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def failures(self) -> list:
        return [v.name for v in self.verdicts if not v.passed]

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "kind": self.kind,
            "passed": self.passed,
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


def sample_points(spec: SystemSpec, n_samples: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(np.array(spec.lo), np.array(spec.hi), size=(n_samples, spec.n))


def _involution_verdict(spec, pairs, points, tol) -> Verdict:
    comp = spec.compiled
    s = spec.s
    symbolic = {}
    worst, witness = 0.0, None
    for a, b in pairs:
        lo_, hi_ = min(a, b), max(a, b)
        e = comp.bracket_exprs[lo_ * s + hi_]
        symbolic[f"{spec.function_names[a]},{spec.function_names[b]}"] = bool(is_zero(e))
    for x in points:
        B = comp.brackets(x)
        for a, b in pairs:
            v = abs(B[a, b])
            if not np.isfinite(v):
                v = np.inf
            if v > worst or witness is None:
                worst, witness = max(v, worst), x
    return Verdict(
        "involution", worst < tol, worst, witness, {"symbolic_zero": symbolic}
    )


def _rank_verdict(name, A, expected, x, tol=INDEPENDENCE_TOL) -> Verdict:
    rank, gap = numerical_rank(A, tol)
    return Verdict(
        name,
        rank == expected,
        float(abs(rank - expected)),
        np.asarray(x, dtype=float),
        {"rank": rank, "expected": expected, "gap": list(gap)},
    )


def validate_commutative(
    spec: SystemSpec, n_samples: int = 100, tol: float = 1e-9, seed: int = 0
) -> ValidationReport:
    """
    Liouville-integrability conditions at the seed and on box samples.

    Checks pairwise involution, independence of ``dF`` at the seed,
    ``rank Pi = 2r`` at the seed, independence of the first ``r``
    Hamiltonian fields at the seed and that transverse functions are
    Casimirs (``|Pi dz| < tol``) on the samples.
    """
    if spec.kind != "commutative":
        raise KindMismatchError(f"{spec.name} is declared {spec.kind}")
    comp = spec.compiled
    pts = sample_points(spec, n_samples, seed)
    m0 = np.array(spec.seed)
    verdicts = [
        _involution_verdict(spec, list(itertools.combinations(range(spec.s), 2)), pts, tol),
        _rank_verdict("independence_dF", comp.dF(m0), spec.s, m0),
        _rank_verdict("rank_pi", comp.pi(m0), 2 * spec.rank, m0, tol=1e-9),
        _rank_verdict("independence_fields", comp.fields(m0)[: spec.rank], spec.rank, m0),
    ]
    worst, witness = 0.0, None
    tidx = [spec.function_names.index(t) for t in spec.transverse]
    if tidx:
        for x in pts:
            v = float(np.max(np.abs(comp.fields(x)[tidx])))
            if v > worst or witness is None:
                worst, witness = v, x
    verdicts.append(Verdict("casimir_transverse", worst < tol, worst, witness,
                            {"names": list(spec.transverse)}))
    return ValidationReport(spec.name, spec.kind, verdicts)


def regular_points(spec: SystemSpec, n_points: int, seed: int = 0, gap: float = 1e-3):
    """
    Box samples where ``dF`` has full rank ``s`` and the first ``r``
    Hamiltonian fields are independent, both with a margin ``gap`` on the
    smallest kept singular value relative to the largest.
    """
    comp = spec.compiled
    rng = np.random.default_rng(seed)
    lo, hi = np.array(spec.lo), np.array(spec.hi)
    out = []
    for _ in range(1000 * max(n_points, 1)):
        if len(out) >= n_points:
            break
        x = rng.uniform(lo, hi)
        ok = True
        for A, k in ((comp.dF(x), spec.s), (comp.fields(x)[: spec.rank], spec.rank)):
            sv = np.linalg.svd(A, compute_uv=False)
            if sv.size < k or sv[k - 1] <= gap * max(sv[0], 1.0):
                ok = False
                break
        if ok:
            out.append(x)
    return np.array(out).reshape(-1, spec.n)


def polarity_residual(spec: SystemSpec, x) -> float:
    """
    Largest principal angle between the polar of ``span{df_1..df_r}`` and
    ``span{df_1..df_s}`` at ``x``.
    """
    comp = spec.compiled
    dF = comp.dF(x)
    polar = polar_subspace(comp.pi(x), dF[: spec.rank])
    return subspace_angle(polar, span_basis(dF))


def validate_noncommutative(
    spec: SystemSpec,
    n_samples: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
    polarity_points: int = 20,
    angle_tol: float = 1e-6,
) -> ValidationReport:
    """
    Non-commutative integrability conditions plus the polarity check.

    ``{f_i, f_j}`` must vanish for ``i <= r`` and every ``j``; ``dF`` has
    rank ``s`` and ``X_{f_1..f_r}`` rank ``r`` at the seed; at regular box
    samples the polar of ``span{df_1..df_r}`` coincides with
    ``span{df_1..df_s}`` up to principal angle ``angle_tol``.
    """
    if spec.kind != "noncommutative":
        raise KindMismatchError(f"{spec.name} is declared {spec.kind}")
    comp = spec.compiled
    pts = sample_points(spec, n_samples, seed)
    m0 = np.array(spec.seed)
    pairs = [(i, j) for i in range(spec.rank) for j in range(spec.s) if i != j]
    verdicts = [
        _rank_verdict("independence_dF", comp.dF(m0), spec.s, m0),
        _involution_verdict(spec, pairs, pts, tol),
        Verdict("dimension", spec.rank + spec.s == spec.n,
                float(abs(spec.rank + spec.s - spec.n)), None,
                {"r": spec.rank, "s": spec.s, "n": spec.n}),
        _rank_verdict("independence_fields", comp.fields(m0)[: spec.rank], spec.rank, m0),
    ]
    reg = regular_points(spec, polarity_points, seed)
    worst, witness = 0.0, None
    for x in reg:
        a = polarity_residual(spec, x)
        if a > worst or witness is None:
            worst, witness = a, x
    ok = len(reg) == polarity_points and worst < angle_tol
    verdicts.append(Verdict("polarity", ok, worst, witness, {"points": len(reg)}))
    return ValidationReport(spec.name, spec.kind, verdicts)


def validate(spec: SystemSpec, n_samples: int = 100, tol: float = 1e-9, seed: int = 0):
    """Jacobi identity plus the kind-appropriate integrability checks."""
    poisson = verify_poisson(spec.structure, spec.lo, spec.hi, n_samples, tol, seed)
    if spec.kind == "commutative":
        report = validate_commutative(spec, n_samples, tol, seed)
    else:
        report = validate_noncommutative(spec, n_samples, tol, seed)
    return poisson, report


# ---------------------------------------------------------------------------
# base brackets


def parse_base(spec: SystemSpec, text: str):
    """Parse an expression whose variables are the function names."""
    return parse(text, spec.function_names) if isinstance(text, str) else text


def _base_gradient(spec, g, c) -> np.ndarray:
    return np.array([evaluate(differentiate(g, nm), c) for nm in spec.function_names])


def pulled_back_bracket(spec: SystemSpec, g, h, x) -> float:
    """``{g o F, h o F}(x)`` by the chain rule through the ``{f_a, f_b}``."""
    g, h = parse_base(spec, g), parse_base(spec, h)
    comp = spec.compiled
    c = comp.F(x)
    return float(_base_gradient(spec, g, c) @ comp.brackets(x) @ _base_gradient(spec, h, c))


def induced_base_bracket(spec: SystemSpec, g, h, fiber_samples) -> tuple:
    """
    Value of the induced base bracket ``{g, h}_B`` along one fiber.

    Returns
    -------
    value : float
        Mean of ``{g o F, h o F}`` over the samples.
    spread : float
        Largest deviation from the mean (zero for a genuine Poisson map).
    """
    pts = np.atleast_2d(np.asarray(fiber_samples, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least two fiber samples")
    g = parse_base(spec, g)
    h = parse_base(spec, h)
    vals = np.array([pulled_back_bracket(spec, g, h, x) for x in pts])
    value = float(np.mean(vals))
    return value, float(np.max(np.abs(vals - value)))


@dataclass
class CasBasicReport:
    passed: bool
    residual: float
    witness: Any
    expansion_residual: float | None
    coefficients: np.ndarray | None

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__)


def is_cas_basic(
    spec: SystemSpec, g, n_samples: int = 50, tol: float = 1e-9, seed: int = 0
) -> CasBasicReport:
    """
    Test whether ``g o F`` commutes with every ``f_j``.

    On success the Hamiltonian field ``X_{g o F}`` is expanded by least
    squares in ``X_{f_1..f_r}`` at the samples; ``coefficients`` holds the
    expansion at the first sample.
    """
    g = parse_base(spec, g)
    comp = spec.compiled
    pts = regular_points(spec, n_samples, seed)
    worst, witness = 0.0, None
    for x in pts:
        dg = _base_gradient(spec, g, comp.F(x))
        v = float(np.max(np.abs(dg @ comp.brackets(x))))
        if v > worst or witness is None:
            worst, witness = v, x
    passed = worst < tol
    exp_res, coefs = None, None
    if passed:
        exp_res = 0.0
        for k, x in enumerate(pts):
            X = comp.fields(x)
            dg = _base_gradient(spec, g, comp.F(x))
            target = dg @ X
            A = X[: spec.rank].T
            psi, *_ = np.linalg.lstsq(A, target, rcond=None)
            exp_res = max(exp_res, float(np.max(np.abs(A @ psi - target))))
            if k == 0:
                coefs = psi
    return CasBasicReport(passed, worst, witness, exp_res, coefs)
