import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aacoords.flows import (
    FlowConfig,
    FlowError,
    NonCompactError,
    commutator_defect,
    conservation_drift,
    flow_combination,
    flow_grid,
    integrate_flow,
    joint_flow,
    near_returns,
    trace_torus,
)
from aacoords.systems import builtin

HARM = builtin("harmonic1d")
UNIT = builtin("unitfreq1d")
OSC = builtin("oscillator2d")
SO3 = builtin("so3_rigid_body")
ISO = builtin("isotropic2d_nc")
CJL = builtin("cjl_counterexample")


def rotate(q, p, t):
    return np.array([q * np.cos(t) + p * np.sin(t), p * np.cos(t) - q * np.sin(t)])


def test_quarter_and_full_rotation():
    np.testing.assert_allclose(integrate_flow(HARM, "H", (1, 0), np.pi / 2), [0, -1], atol=1e-8)
    np.testing.assert_allclose(integrate_flow(HARM, "H", (1, 0), 2 * np.pi), [1, 0], atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-8, 8))
def test_flow_matches_closed_form(q, p, t):
    np.testing.assert_allclose(integrate_flow(HARM, "H", (q, p), t), rotate(q, p, t), atol=1e-8)


@pytest.mark.parametrize("spec", [HARM, OSC, SO3, ISO], ids=lambda s: s.name)
def test_zero_time_returns_start_exactly(spec):
    m = np.array(spec.seed)
    assert np.array_equal(integrate_flow(spec, spec.function_names[0], m, 0.0), m)
    assert np.array_equal(joint_flow(spec, np.zeros(spec.rank), m), m)


def test_joint_flow_examples():
    m = np.array([1.0, 0, 1, 0])
    np.testing.assert_allclose(joint_flow(OSC, (2 * np.pi, 2 * np.pi), m), m, atol=1e-7)
    np.testing.assert_allclose(joint_flow(OSC, (np.pi, 0), m), [-1, 0, 1, 0], atol=1e-7)


def test_joint_flow_rejects_wrong_length():
    with pytest.raises(ValueError):
        joint_flow(OSC, (1.0,), OSC.seed)


def test_joint_flow_is_composition():
    m = np.array([0.3, 1.0, -0.4, 0.8])
    a, b = 0.7, -1.3
    composed = integrate_flow(OSC, "H1", integrate_flow(OSC, "H2", m, b), a)
    np.testing.assert_allclose(joint_flow(OSC, (a, b), m), composed, atol=1e-14)


@pytest.mark.parametrize("spec", [HARM, OSC, SO3, ISO], ids=lambda s: s.name)
def test_functions_conserved(spec):
    m = np.array(spec.seed)
    # every f_j is conserved only along the first r fields in the non-commutative case
    k = spec.s if spec.kind == "commutative" else spec.rank
    W = np.zeros((3, spec.s))
    W[:, :k] = np.random.default_rng(0).normal(size=(3, k))
    pts = [flow_combination(spec, w, m, 3.7) for w in W]
    assert conservation_drift(spec, m, pts) < 1e-8


@pytest.mark.parametrize("spec", [OSC, SO3, ISO], ids=lambda s: s.name)
def test_flows_commute(spec):
    m = np.array(spec.seed)
    for j in range(1, spec.s):
        assert commutator_defect(spec, 0, j, 0.9, 1.4, m) < 1e-6


def test_escape_is_reported():
    with pytest.raises(FlowError):
        integrate_flow(CJL, "f1", CJL.seed, 1e3, FlowConfig(escape_factor=2))


def test_step_budget_is_reported():
    with pytest.raises(FlowError):
        integrate_flow(HARM, "H", (1, 0), 100.0, FlowConfig(max_steps=5))


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(abs_tol=0)
    with pytest.raises(ValueError):
        FlowConfig(max_step=-1.0)


def test_flow_grid_matches_pointwise():
    axes = [np.linspace(0, 3, 4), np.linspace(-2, 2, 3)]
    m = np.array([0.3, 1.0, -0.4, 0.8])
    G = flow_grid(OSC, m, axes)
    assert G.shape == (4, 3, 4)
    for i, a in enumerate(axes[0]):
        for j, b in enumerate(axes[1]):
            np.testing.assert_allclose(G[i, j], joint_flow(OSC, (a, b), m), atol=1e-9)


# -- tracing and near returns --------------------------------------------


def test_harmonic_torus_on_circle():
    sample = trace_torus(HARM, (1, 0), samples_per_dim=64)
    assert len(sample) == 64
    np.testing.assert_allclose(np.linalg.norm(sample.points, axis=1), 1.0, atol=1e-9)
    assert sample.drift < 1e-9
    assert sample.periods[0, 0] == pytest.approx(2 * np.pi, abs=1e-2)


def test_so3_torus_keeps_casimir():
    sample = trace_torus(SO3, SO3.seed, samples_per_dim=64)
    C0 = float(np.sum(np.square(SO3.seed)))
    C = np.sum(sample.points ** 2, axis=1)
    assert np.max(np.abs(C - C0)) < 1e-8
    # the curve closes: the point after one period is the start
    end = joint_flow(SO3, sample.periods[0], SO3.seed)
    assert np.linalg.norm(end - np.array(SO3.seed)) < 1e-2


def test_cjl_is_non_compact():
    with pytest.raises(NonCompactError):
        trace_torus(CJL, CJL.seed)


def test_near_returns_harmonic():
    cands = near_returns(HARM, (1, 0), (0.1, 10))
    assert abs(cands[0].times[0] - 2 * np.pi) < 1e-2


def test_near_returns_unitfreq():
    cands = near_returns(UNIT, UNIT.seed, (0.1, 3))
    times = sorted(float(c.times[0]) for c in cands)
    assert any(abs(t - 1) < 1e-2 for t in times)
    assert any(abs(t - 2) < 1e-2 for t in times)


def test_near_returns_oscillator():
    cands = near_returns(OSC, OSC.seed, (0.1, 10))
    tt = [np.abs(c.times) for c in cands]
    for want in [(2 * np.pi, 0), (0, 2 * np.pi), (2 * np.pi, 2 * np.pi)]:
        assert any(np.linalg.norm(t - want) < 0.2 for t in tt), want
