import json

import numpy as np
import pytest
import sympy

from aacoords.expr import is_zero
from aacoords.flows import trace_torus
from aacoords.geometry import poisson_bracket
from aacoords.systems import (
    BUILTIN_NAMES,
    KindMismatchError,
    SchemaError,
    builtin,
    induced_base_bracket,
    is_cas_basic,
    load_system,
    pulled_back_bracket,
    serialize,
    validate,
    validate_commutative,
    validate_noncommutative,
)

HARMONIC_YAML = """
name: harmonic1d
dimension: 2
coordinates: [q, p]
poisson:
  - {i: q, j: p, expr: "1"}
functions:
  - {name: H, expr: "(q^2 + p^2)/2"}
rank: 1
kind: commutative
transverse: []
domain_box: {lo: [-2, -2], hi: [2, 2]}
seed: [1, 0]
"""


def test_load_harmonic_document():
    spec = load_system(HARMONIC_YAML)
    assert (spec.n, spec.rank, spec.s) == (2, 1, 1)
    assert spec.function_names == ("H",)
    np.testing.assert_allclose(spec.compiled.fields(np.array([1.0, 0.0])), [[0.0, -1.0]])


def test_dimension_invariant():
    doc = """
dimension: 3
coordinates: [a, b, c]
poisson: [{i: a, j: b, expr: "c"}]
functions: [{name: f, expr: "a"}, {name: g, expr: "b"}]
rank: 2
kind: commutative
domain_box: {lo: [0, 0, 0], hi: [1, 1, 1]}
seed: [0.5, 0.5, 0.5]
"""
    with pytest.raises(SchemaError, match="r \\+ s"):
        load_system(doc)


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d.pop("coordinates"), "coordinates"),
    (lambda d: d.update(dimension=3), "dimension"),
    (lambda d: d.update(kind="weird"), "kind"),
    (lambda d: d.update(seed=[5, 0]), "seed"),
    (lambda d: d["poisson"][0].update(expr="q +"), "poisson"),
    (lambda d: d["poisson"][0].update(i="p", j="q"), "i < j"),
    (lambda d: d["functions"][0].update(expr="w"), "unknown identifier"),
])
def test_schema_errors(mutate, needle):
    import yaml

    doc = yaml.safe_load(HARMONIC_YAML)
    mutate(doc)
    with pytest.raises(SchemaError, match=needle):
        load_system(json.dumps(doc))


def test_unreadable_document():
    with pytest.raises(SchemaError):
        load_system("{not: [valid")


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_round_trip(name):
    spec = builtin(name)
    again = load_system(serialize(spec))
    assert again == spec
    assert serialize(again) == serialize(spec)


def test_cjl_builtin_matches_formula():
    spec = builtin("cjl_counterexample")
    assert spec.n == 4
    x = np.array([0.1, -0.2, 0.3, 0.7])
    g2 = x[3]
    Pi = spec.structure.matrix(x)
    want = np.zeros((4, 4))
    want[2, 0], want[3, 1], want[2, 1] = 1.0, g2 ** 2, g2
    want -= want.T
    np.testing.assert_allclose(Pi, want)


def test_so3_builtin_shape():
    spec = builtin("so3_rigid_body")
    assert (spec.n, spec.rank, spec.s, spec.transverse) == (3, 1, 2, ("C",))


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin("nope")


# -- validation -----------------------------------------------------------


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_all_builtins_validate(name):
    poisson, report = validate(builtin(name))
    assert poisson.passed and poisson.all_symbolic
    assert report.passed, report.failures()
    json.dumps(report.to_dict())
    json.dumps(poisson.to_dict())


def test_harmonic_involution_exact():
    rep = validate_commutative(builtin("harmonic1d"))
    assert rep["involution"].residual == 0.0


def test_so3_symbolic_involution_and_rank():
    spec = builtin("so3_rigid_body")
    H, C = spec.functions
    assert is_zero(poisson_bracket(spec.structure, H, C))
    rep = validate_commutative(spec)
    assert rep.passed
    assert rep["rank_pi"].detail.get("rank", 2) == 2


def test_so3_seed_at_origin_fails_rank():
    spec = builtin("so3_rigid_body").with_seed((0, 0, 0))
    rep = validate_commutative(spec)
    assert not rep["rank_pi"].passed
    assert "rank_pi" in rep.failures()


def test_isotropic_brackets_fold():
    spec = builtin("isotropic2d_nc")
    H, L, K = spec.functions
    assert is_zero(poisson_bracket(spec.structure, H, L))
    assert is_zero(poisson_bracket(spec.structure, H, K))
    assert not is_zero(poisson_bracket(spec.structure, L, K))
    rep = validate_noncommutative(spec, polarity_points=20)
    assert rep.passed
    assert rep["polarity"].residual < 1e-6
    assert rep["polarity"].detail["points"] == 20


def test_isotropic_seed_at_origin_fails_fields():
    rep = validate_noncommutative(builtin("isotropic2d_nc").with_seed((0, 0, 0, 0)))
    assert not rep["independence_fields"].passed


def test_kind_mismatch():
    with pytest.raises(KindMismatchError):
        validate_noncommutative(builtin("harmonic1d"))
    with pytest.raises(KindMismatchError):
        validate_commutative(builtin("isotropic2d_nc"))


# -- base brackets ------------------------------------------------------


def test_lk_bracket_matches_sympy():
    spec = builtin("isotropic2d_nc")
    _, L, K = spec.functions
    b = poisson_bracket(spec.structure, L, K)
    # sympy oracle
    q1, p1, q2, p2 = sympy.symbols("q1 p1 q2 p2")
    Ls, Ks = q1 * p2 - q2 * p1, (q1 ** 2 + p1 ** 2 - q2 ** 2 - p2 ** 2) / 2
    ref = sum(sympy.diff(Ls, q) * sympy.diff(Ks, p) - sympy.diff(Ls, p) * sympy.diff(Ks, q)
              for q, p in ((q1, p1), (q2, p2)))
    assert sympy.simplify(ref - 2 * (q1 * q2 + p1 * p2)) == 0
    ref_fn = sympy.lambdify((q1, p1, q2, p2), ref)
    from aacoords.expr import evaluate
    for x in np.random.default_rng(0).uniform(-1, 1, (5, 4)):
        assert evaluate(b, x) == pytest.approx(ref_fn(*x))


def test_induced_bracket_constant_on_fiber():
    spec = builtin("isotropic2d_nc")
    sample = trace_torus(spec, np.array(spec.seed), samples_per_dim=32)
    value, spread = induced_base_bracket(spec, "L", "K", sample.points)
    m = np.array(spec.seed)
    assert value == pytest.approx(2 * (m[0] * m[2] + m[1] * m[3]), abs=1e-8)
    assert spread < 1e-6


def test_induced_bracket_trivial_cases():
    spec = builtin("harmonic1d")
    pts = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert induced_base_bracket(spec, "H", "H", pts) == (0.0, 0.0)
    so3 = builtin("so3_rigid_body")
    x = np.array([[0.1, 0.1, 1.0], [0.2, -0.1, 0.9]])
    assert induced_base_bracket(so3, "H", "C", x) == (0.0, 0.0)
    with pytest.raises(ValueError):
        induced_base_bracket(spec, "H", "H", pts[:1])


def test_pulled_back_bracket_chain_rule():
    spec = builtin("isotropic2d_nc")
    x = np.array([0.3, -0.4, 0.9, 0.2])
    # {L^2, K} = 2 L {L, K}
    L = 0.3 * 0.2 - 0.9 * -0.4
    want = 2 * L * 2 * (0.3 * 0.9 + -0.4 * 0.2)
    assert pulled_back_bracket(spec, "L^2", "K", x) == pytest.approx(want)


def test_cas_basic_examples():
    iso = builtin("isotropic2d_nc")
    rep = is_cas_basic(iso, "H")
    assert rep.passed
    np.testing.assert_allclose(rep.coefficients, [1.0], atol=1e-12)
    assert rep.expansion_residual < 1e-12
    bad = is_cas_basic(iso, "L")
    assert not bad.passed and bad.residual > 1e-3
    so3 = is_cas_basic(builtin("so3_rigid_body"), "C")
    assert so3.passed
    np.testing.assert_allclose(so3.coefficients, [0.0], atol=1e-12)
    json.dumps(bad.to_dict())
