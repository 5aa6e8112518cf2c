"""
Hamiltonian flows
=================

Adaptive integration of Hamiltonian vector fields, the joint flow of the
first ``r`` fields, torus tracing, and near-return detection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .systems import SystemSpec


class FlowError(RuntimeError):
    """Integration failed; ``status`` is one of the kernel status codes."""

    def __init__(self, status: int, detail: str = ""):
        self.status = status
        msg = kernels.STATUS_TEXT.get(status, f"status {status}")
        super().__init__(f"{msg}{': ' + detail if detail else ''}")


class NonCompactError(RuntimeError):
    """The fiber through the given point does not look compact."""

    def __init__(self, reason: str, point=None):
        self.reason = reason
        self.point = None if point is None else np.asarray(point, dtype=float)
        super().__init__(f"fiber appears non-compact: {reason}")


@dataclass(frozen=True)
class FlowConfig:
    """
    Integration settings.

    ``max_step`` of ``None`` means one hundredth of the integration span.
    Trajectories leaving the ball of radius
    ``escape_factor * max(|m|, 1)`` abort with an escape status.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float | None = None
    max_steps: int = 200_000
    escape_factor: float = 10.0

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step is not None and self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def scaled(self, factor: float) -> "FlowConfig":
        return replace(self, abs_tol=self.abs_tol * factor, rel_tol=self.rel_tol * factor)

    def step_cap(self, span: float) -> float:
        if self.max_step is not None:
            return float(self.max_step)
        return max(abs(span) / 100.0, 1e-12)

    def escape_radius(self, m) -> float:
        return self.escape_factor * max(float(np.linalg.norm(m)), 1.0)


DEFAULT = FlowConfig()


def _coef_for(spec: SystemSpec, weights) -> np.ndarray:
    c = np.asarray(weights, dtype=float)
    if c.shape != (spec.s,):
        raise ValueError(f"need {spec.s} field coefficients, got shape {c.shape}")
    return c


def unit_coef(spec: SystemSpec, j: int) -> np.ndarray:
    c = np.zeros(spec.s)
    c[j] = 1.0
    return c


def flow_combination(spec: SystemSpec, weights, m, t: float, cfg: FlowConfig = DEFAULT):
    """Flow of ``sum_j weights[j] X_{f_j}`` for time ``t`` starting at ``m``."""
    m = np.asarray(m, dtype=float)
    if t == 0.0:
        return m.copy()
    x, status, _ = kernels.integrate(
        spec.compiled.field_matrix,
        _coef_for(spec, weights),
        m,
        float(t),
        cfg.abs_tol,
        cfg.rel_tol,
        cfg.step_cap(t),
        cfg.max_steps,
        cfg.escape_radius(m),
    )
    if status != kernels.OK:
        raise FlowError(status, f"t={t!r} from {m.tolist()}")
    return x


def integrate_flow(spec: SystemSpec, h_name: str, m, t: float, cfg: FlowConfig = DEFAULT):
    """
    Point reached from ``m`` after time ``t`` along ``X_h``.

    Parameters
    ----------
    h_name : str
        Name of one of the system's functions.

    Raises
    ------
    FlowError
        Step budget exhausted, trajectory escaped or became non-finite.
    """
    j = spec.function_names.index(h_name)
    return flow_combination(spec, unit_coef(spec, j), m, t, cfg)


def conservation_drift(spec: SystemSpec, m, points) -> float:
    F0 = spec.compiled.F(m)
    pts = np.atleast_2d(points)
    return float(max(np.max(np.abs(spec.compiled.F(x) - F0)) for x in pts))


def joint_flow(spec: SystemSpec, tvec, m, cfg: FlowConfig = DEFAULT):
    """
    ``Phi^(1)_{t_1} o ... o Phi^(r)_{t_r}(m)``; the last flow acts first.
    """
    tvec = np.atleast_1d(np.asarray(tvec, dtype=float))
    if tvec.shape != (spec.rank,):
        raise ValueError(f"need {spec.rank} times, got {tvec.shape}")
    x = np.asarray(m, dtype=float).copy()
    for i in reversed(range(spec.rank)):
        x = flow_combination(spec, unit_coef(spec, i), x, tvec[i], cfg)
    return x


def lattice_flow(spec: SystemSpec, lattice_rows, u, m, cfg: FlowConfig = DEFAULT):
    """``Phi(sum_i u_i lambda_i, m)`` for lattice rows ``lambda_i``."""
    L = np.asarray(lattice_rows, dtype=float)
    return joint_flow(spec, np.asarray(u, dtype=float) @ L, m, cfg)


def _sample_line(spec, coef, x0, times, cfg, escape, label):
    """States along ``coef . X`` at ``times`` (any signs, any order)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, spec.n))
    span = float(np.max(np.abs(times))) if times.size else 0.0
    for sign in (1.0, -1.0):
        mask = times * sign > 0
        if sign > 0:
            zero = times == 0
            out[zero] = x0
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        order = idx[np.argsort(np.abs(times[idx]))]
        states, status, _ = kernels.sample(
            spec.compiled.field_matrix,
            coef,
            np.asarray(x0, dtype=float),
            times[order],
            cfg.abs_tol,
            cfg.rel_tol,
            cfg.step_cap(span),
            cfg.max_steps,
            escape,
        )
        if status == kernels.ESCAPED:
            raise NonCompactError(
                f"flow of {label} left the ball of radius {escape:.3g}", x0
            )
        if status != kernels.OK:
            raise FlowError(status, f"sampling {label}")
        out[order] = states
    return out


def flow_grid(spec: SystemSpec, m, axes, cfg: FlowConfig = DEFAULT, coefs=None) -> np.ndarray:
    """
    Joint-flow images of ``m`` on the tensor grid ``axes[0] x ... x axes[r-1]``.

    Axis ``i`` flows along ``X_{f_i}``, or along ``coefs[i] . X`` when
    coefficient vectors are given (they must generate commuting fields).

    Returns an array of shape ``(len(axes[0]), ..., len(axes[r-1]), n)``.
    Each row is produced by one dense-output sweep, so the cost is one
    integration per grid line rather than per grid point.
    """
    m = np.asarray(m, dtype=float)
    escape = cfg.escape_radius(m)
    r = spec.rank
    if len(axes) != r:
        raise ValueError("need one time axis per torus direction")
    if coefs is None:
        coefs = [unit_coef(spec, i) for i in range(r)]
        labels = list(spec.function_names[:r])
    else:
        coefs = [_coef_for(spec, c) for c in coefs]
        labels = [f"Y{i + 1}" for i in range(r)]
    # the last flow acts first: expand along axis r-1, then r-2, ...
    pts = m[None, :]
    shape: tuple = ()
    for i in reversed(range(r)):
        ax = np.asarray(axes[i], dtype=float)
        new = np.empty((pts.shape[0], ax.size, spec.n))
        for k, x in enumerate(pts):
            new[k] = _sample_line(spec, coefs[i], x, ax, cfg, escape, labels[i])
        # new index order: (previous..., this) -> store as (this, previous...)
        new = new.reshape(shape + (ax.size, spec.n))
        new = np.moveaxis(new, len(shape), 0)
        shape = (ax.size,) + shape
        pts = new.reshape(-1, spec.n)
    return pts.reshape(shape + (spec.n,))


@dataclass
class NearReturn:
    times: np.ndarray
    distance: float


def _local_minima(D: np.ndarray) -> np.ndarray:
    """Boolean mask of grid points not exceeding any existing neighbour."""
    mask = np.ones(D.shape, dtype=bool)
    r = D.ndim
    for off in itertools.product((-1, 0, 1), repeat=r):
        if not any(off):
            continue
        shifted = np.full(D.shape, np.inf)
        src = tuple(slice(max(-o, 0), D.shape[d] - max(o, 0)) for d, o in enumerate(off))
        dst = tuple(slice(max(o, 0), D.shape[d] - max(-o, 0)) for d, o in enumerate(off))
        shifted[dst] = D[src]
        mask &= D <= shifted
    return mask


def default_grid(r: int) -> int:
    return 2048 if r == 1 else 64 if r == 2 else 16


def near_returns(
    spec: SystemSpec,
    m,
    horizon=(0.1, 10.0),
    grid_per_dim: int | None = None,
    cfg: FlowConfig = DEFAULT,
    threshold: float = 0.05,
    max_candidates: int = 16,
) -> list:
    """
    Candidate return times ``t`` with ``Phi(t, m)`` close to ``m``.

    Parameters
    ----------
    horizon : (float, float)
        ``(radius, T)``.  Times are searched on a grid over ``[0, T]`` in
        the first direction and ``[-T, T]`` in the others (a half-space
        suffices since return times come in ``+-`` pairs); points with
        ``|t| < radius`` are never reported.
    threshold : float
        Candidates must be closer to ``m`` than ``threshold`` times the
        largest distance seen over the grid.

    Returns
    -------
    list of NearReturn
        Local minima of ``|Phi(t, m) - m|`` sorted by distance.

    Raises
    ------
    NonCompactError
        When a flow escapes the ball around ``m``.
    """
    m = np.asarray(m, dtype=float)
    radius, T = float(horizon[0]), float(horizon[1])
    r = spec.rank
    g = grid_per_dim or default_grid(r)
    axes = [np.linspace(0.0, T, g)]
    for _ in range(1, r):
        axes.append(np.linspace(-T, T, 2 * g - 1))
    X = flow_grid(spec, m, axes, cfg)
    D = np.linalg.norm(X - m, axis=-1)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    excluded = np.linalg.norm(mesh, axis=-1) < radius
    scale = float(np.max(D))
    if scale == 0.0:
        raise NonCompactError("all flows are stationary at this point", m)
    mask = _local_minima(D) & ~excluded & (D < threshold * scale)
    idx = np.argwhere(mask)
    found = [NearReturn(mesh[tuple(k)].copy(), float(D[tuple(k)])) for k in idx]
    found.sort(key=lambda c: (c.distance, float(np.linalg.norm(c.times))))
    return found[:max_candidates]


def search_returns(
    spec: SystemSpec,
    m,
    cfg: FlowConfig = DEFAULT,
    start: float = 10.0,
    doublings: int = 4,
    radius: float = 0.1,
    grid_per_dim: int | None = None,
) -> tuple:
    """
    Near returns with a doubling time horizon.

    Returns ``(candidates, T)`` for the first horizon ``T`` at which at
    least ``r`` linearly independent candidates appear.
    """
    T = start
    for _ in range(doublings + 1):
        cands = near_returns(spec, m, (radius, T), grid_per_dim, cfg)
        if cands and np.linalg.matrix_rank(np.array([c.times for c in cands]), tol=1e-6 * T) >= spec.rank:
            return cands, T
        T *= 2.0
    raise NonCompactError(f"no return to the start point within time {T / 2:g}", m)


@dataclass
class TorusSample:
    """Points of one fiber reached from ``anchor`` by the joint flow."""

    base_value: np.ndarray
    anchor: np.ndarray
    times: np.ndarray
    points: np.ndarray
    drift: float
    periods: np.ndarray

    def __len__(self):
        return len(self.points)


def _shortest_independent(cands, r):
    vecs = [c.times for c in sorted(cands, key=lambda c: float(np.linalg.norm(c.times)))]
    basis = []
    for v in vecs:
        trial = np.array(basis + [v])
        if np.linalg.matrix_rank(trial, tol=1e-6 * max(1.0, np.linalg.norm(v))) == len(trial):
            basis.append(v)
        if len(basis) == r:
            break
    return np.array(basis)


def trace_torus(
    spec: SystemSpec,
    m,
    samples_per_dim: int = 64,
    cfg: FlowConfig = DEFAULT,
    periods=None,
) -> TorusSample:
    """
    Sample the invariant torus through ``m``.

    Points are ``Phi(u @ periods, m)`` for ``u`` on a regular grid of
    ``[0, 1)^r``.  Without explicit ``periods`` (rows), the shortest
    independent near-return times are used.

    Raises
    ------
    NonCompactError
        No near return within the time horizon, or a flow escaped.
    """
    m = np.asarray(m, dtype=float)
    r = spec.rank
    if periods is None:
        cands, _ = search_returns(spec, m, cfg)
        periods = _shortest_independent(cands, r)
    periods = np.atleast_2d(np.asarray(periods, dtype=float))
    u = np.arange(samples_per_dim) / samples_per_dim
    grid = np.array(list(itertools.product(u, repeat=r)))
    times = grid @ periods
    if np.allclose(periods, np.diag(np.diag(periods))):
        # axis-aligned periods: use the swept grid
        axes = [u * periods[i, i] for i in range(r)]
        pts = flow_grid(spec, m, axes, cfg).reshape(-1, spec.n)
    else:
        pts = np.array([joint_flow(spec, t, m, cfg) for t in times])
    return TorusSample(
        base_value=spec.compiled.F(m),
        anchor=m.copy(),
        times=times,
        points=pts,
        drift=conservation_drift(spec, m, pts),
        periods=periods,
    )


def commutator_defect(spec: SystemSpec, i: int, j: int, a: float, b: float, m, cfg=DEFAULT):
    """``|Phi^(i)_a Phi^(j)_b m - Phi^(j)_b Phi^(i)_a m|``."""
    ei, ej = unit_coef(spec, i), unit_coef(spec, j)
    x1 = flow_combination(spec, ei, flow_combination(spec, ej, m, b, cfg), a, cfg)
    x2 = flow_combination(spec, ej, flow_combination(spec, ei, m, a, cfg), b, cfg)
    return float(np.linalg.norm(x1 - x2))


def orbit_scale(points) -> float:
    pts = np.atleast_2d(points)
    return float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1))) if len(pts) else 0.0

