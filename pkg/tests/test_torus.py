import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aacoords.systems import builtin
from aacoords.torus import (
    GridSpec,
    LatticeSpanError,
    OutOfGridError,
    PeriodRefinementError,
    cell_index,
    check_torus_action,
    continue_lattice,
    lagrange_gauss,
    lattice_basis,
    lattice_csv,
    multilinear,
    project_to_level,
    reduce_lattice,
    refine_period,
    return_defect,
    seed_lattice,
    uniformized_field,
    uniformized_field_at,
)
from aacoords.geometry import lie_derivative_bivector

TWO_PI = 2 * np.pi
HARM = builtin("harmonic1d")
UNIT = builtin("unitfreq1d")
OSC = builtin("oscillator2d")
SO3 = builtin("so3_rigid_body")


def same_lattice(A, B, tol):
    """Rows of A and B generate the same lattice: A = U B with U unimodular."""
    U = np.asarray(A) @ np.linalg.inv(np.asarray(B))
    R = np.round(U)
    return np.max(np.abs(U - R)) < tol and abs(abs(np.linalg.det(R)) - 1) < 1e-9


# -- period refinement ---------------------------------------------------


def test_refine_harmonic():
    assert refine_period(HARM, (1, 0), 6.2)[0] == pytest.approx(TWO_PI, abs=1e-9)


def test_refine_unitfreq():
    assert refine_period(UNIT, UNIT.seed, 0.98)[0] == pytest.approx(1.0, abs=1e-10)


def test_refine_oscillator():
    L = refine_period(OSC, OSC.seed, (6.2, 0.1))
    np.testing.assert_allclose(L, [TWO_PI, 0.0], atol=1e-8)


def test_refine_reports_history():
    ref = refine_period(HARM, (1, 0), 6.2, full=True)
    assert ref.defect < 1e-9 and ref.iterations == len(ref.history)
    assert ref.history[0] > ref.history[-1]


def test_refine_fails_far_from_a_period():
    with pytest.raises(PeriodRefinementError):
        refine_period(HARM, (1, 0), 3.0, max_iter=3)


# -- lattice reduction ----------------------------------------------------


def test_lattice_basis_harmonic():
    lat = lattice_basis(HARM, (1, 0), [[TWO_PI], [2 * TWO_PI]])
    assert lat.basis[0, 0] == pytest.approx(TWO_PI, abs=1e-12)
    assert lat.defect < 1e-8


def test_lattice_basis_oscillator():
    cands = [[TWO_PI, 0], [0, TWO_PI], [TWO_PI, TWO_PI]]
    lat = lattice_basis(OSC, OSC.seed, cands)
    np.testing.assert_allclose(lat.basis, TWO_PI * np.eye(2), atol=1e-12)


def test_collinear_candidates_rejected():
    with pytest.raises(LatticeSpanError):
        reduce_lattice([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]])


def test_incommensurate_candidates_rejected():
    with pytest.raises(LatticeSpanError):
        reduce_lattice([[1.0], [np.sqrt(2)]])


def test_non_primitive_candidates_reduce_to_generator():
    np.testing.assert_allclose(reduce_lattice([[2.0], [3.0]]), [[1.0]])


unimodular = st.lists(st.integers(-3, 3), min_size=3, max_size=3).map(
    lambda v: np.array([[1, v[0]], [0, 1]]) @ np.array([[1, 0], [v[1], 1]]) @ np.array([[1, v[2]], [0, 1]])
)


@settings(max_examples=60, deadline=None)
@given(unimodular, st.floats(0.5, 3), st.floats(-1, 1), st.floats(0.5, 3))
def test_reduction_is_unimodular_invariant(U, a, b, d):
    B = np.array([[a, 0.0], [b, d]])
    R1 = reduce_lattice(B)
    R2 = reduce_lattice(U @ B)
    assert same_lattice(R1, B, 1e-9)
    assert same_lattice(R2, B, 1e-9)
    # reduced: |mu| <= 1/2 and the first vector is a shortest one
    b1, b2 = lagrange_gauss(R2[0], R2[1])
    assert abs(b1 @ b2) <= 0.5 * (b1 @ b1) + 1e-12
    assert min(np.linalg.norm(R2, axis=1)) == pytest.approx(np.linalg.norm(b1))


# -- grids and interpolation ------------------------------------------


def test_grid_validation_and_helpers():
    with pytest.raises(ValueError):
        GridSpec([np.array([0.0, 0.0, 1.0])])
    g = GridSpec([np.linspace(0, 1, 5), np.array([2.0])])
    assert g.shape == (5, 1) and g.nearest((0.6, 7.0)) == (2, 0)
    assert sorted(g.neighbors((0, 0))) == [(1, 0)]
    assert g.is_interior((2, 0)) and not g.is_interior((4, 0))
    assert g.contains((1.01, 2.0), slack=0.05) and not g.contains((1.1, 2.0), slack=0.05)


def test_multilinear_exact_on_bilinear():
    ax = [np.linspace(0, 1, 4), np.linspace(-1, 1, 5)]
    X, Y = np.meshgrid(*ax, indexing="ij")
    V = (1 + 2 * X - Y + 3 * X * Y)[..., None]
    pts = np.random.default_rng(0).uniform([0, -1], [1, 1], (20, 2))
    want = 1 + 2 * pts[:, 0] - pts[:, 1] + 3 * pts[:, 0] * pts[:, 1]
    np.testing.assert_allclose(multilinear(ax, V, pts)[:, 0], want, atol=1e-14)
    with pytest.raises(OutOfGridError):
        multilinear(ax, V, (2.0, 0.0))


def test_pinned_cell_extrapolates_its_own_piece():
    ax = [np.array([0.0, 1.0, 3.0])]
    V = np.array([[0.0], [1.0], [0.0]])
    assert cell_index(ax, [1.2]) == (1,)
    # just right of the kink, the left cell continues with slope +1
    assert multilinear(ax, V, [1.2], cell=(0,))[0] == pytest.approx(1.2)
    assert multilinear(ax, V, [1.2])[0] == pytest.approx(0.9)


def test_schouten_stencil_near_grid_line(fields):
    f = fields["so3_rigid_body"]
    # a fiber point whose H lies 1e-7 above an interior grid line
    c = f.grid.node((4, 1)) + np.array([1e-7, 0.0])
    m = project_to_level(SO3, f.points[4, 1], c)
    pinned = lie_derivative_bivector(uniformized_field(SO3, f, 0, around=m), SO3.structure, m)
    assert np.max(np.abs(pinned)) < 1e-8
    loose = lie_derivative_bivector(uniformized_field(SO3, f, 0), SO3.structure, m)
    assert np.max(np.abs(loose)) > np.max(np.abs(pinned))


def test_project_to_level():
    x = project_to_level(SO3, SO3.seed, (0.26, 1.1))
    F = SO3.compiled.F(x)
    np.testing.assert_allclose(F, [0.26, 1.1], atol=1e-12)


# -- continuation ---------------------------------------------------------


def test_harmonic_is_isochronous(fields):
    f = fields["harmonic1d"]
    assert not f.failed.any() and f.basis.shape == (11, 1, 1)
    np.testing.assert_allclose(f.basis[:, 0, 0], TWO_PI, atol=1e-8)
    np.testing.assert_allclose(f.grid.axes[0], np.linspace(0.5, 1.5, 11))


def test_so3_period_monotone_and_matches_nodewise(fields):
    f = fields["so3_rigid_body"]
    assert not f.failed.any()
    mid = f.grid.shape[1] // 2
    lam = f.basis[:, mid, 0, 0]
    d = np.diff(lam)
    assert np.all(d > 0) or np.all(d < 0)
    # independent oracle: a fresh near-return search at every node of the row
    for k in range(f.grid.shape[0]):
        p = f.points[k, mid]
        ref = seed_lattice(SO3, p).basis[0, 0]
        assert abs(ref - lam[k]) < 1e-6


def test_single_node_grid_keeps_seed():
    seed = seed_lattice(UNIT)
    g = GridSpec([np.array([seed.base[0]])])
    f = continue_lattice(UNIT, g, seed)
    assert f.basis.shape == (1, 1, 1)
    assert np.array_equal(f.basis[0], seed.basis)
    assert np.array_equal(f.points[0], seed.anchor)


def test_cjl_has_no_seed_lattice():
    from aacoords.flows import NonCompactError

    with pytest.raises(NonCompactError):
        seed_lattice(builtin("cjl_counterexample"))


def test_lattice_closes_at_every_node(fields):
    for name in ("harmonic1d", "oscillator2d", "so3_rigid_body", "isotropic2d_nc"):
        f = fields[name]
        for idx in f.grid.indices():
            for row in f.basis[idx]:
                assert return_defect(f.spec, f.points[idx], row) < 1e-8
        assert f.max_jump() < 0.05 * np.max(np.abs(f.basis))


# -- uniformized fields ----------------------------------------------------


def test_uniformized_field_examples(fields):
    np.testing.assert_allclose(
        uniformized_field_at(HARM, fields["harmonic1d"], (1, 0), 0), [0, -TWO_PI], atol=1e-8)
    f = fields["oscillator2d"]
    m = np.array(OSC.seed)
    Y1 = uniformized_field_at(OSC, f, m, 0)
    np.testing.assert_allclose(Y1[2:], 0.0, atol=1e-12)
    Y2 = uniformized_field_at(OSC, f, m, 1)
    np.testing.assert_allclose(Y2[:2], 0.0, atol=1e-12)


def test_unitfreq_field_is_hamiltonian_field():
    seed = seed_lattice(UNIT)
    g = GridSpec([seed.base[0] + np.linspace(-0.01, 0.01, 3)])
    f = continue_lattice(UNIT, g, seed)
    assert not f.failed.any()
    m = np.array(UNIT.seed)
    X = UNIT.compiled.fields(m)[0]
    np.testing.assert_allclose(uniformized_field_at(UNIT, f, m, 0), X, rtol=1e-10)
    assert check_torus_action(UNIT, f, m).max_period_defect < 1e-9


@pytest.mark.parametrize("name", ["harmonic1d", "oscillator2d"])
def test_torus_action(fields, name):
    f = fields[name]
    rep = check_torus_action(f.spec, f, f.spec.seed)
    assert rep.max_period_defect < 1e-7
    assert rep.max_poisson_residual < 1e-4


def test_lattice_csv(fields):
    f = fields["oscillator2d"]
    rows = list(csv.reader(io.StringIO(lattice_csv(f))))
    assert rows[0] == ["H1", "H2", "lambda1_H1", "lambda1_H2", "lambda2_H1", "lambda2_H2",
                       "defect", "failed"]
    assert len(rows) == 1 + int(np.prod(f.grid.shape))
    first = [float(v) for v in rows[1][:6]]
    np.testing.assert_array_equal(first[2:], f.basis[0, 0].ravel())
