"""
Action-angle charts
===================

Actions come from a line integral of the tabulated periods, angles from a
section of the torus fibration plus Newton shooting along the rescaled
fields.  The canonical form of the resulting chart is checked by finite
differences of the numerically defined coordinate functions.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flows import DEFAULT, FlowConfig, flow_combination, flow_grid, joint_flow
from .systems import SystemSpec, _jsonable
from .torus import (
    EDGE_SLACK,
    GridSpec,
    LatticeField,
    OutOfGridError,
    base_names,
    build_lattice_field,
    cell_index,
    multilinear,
    project_to_level,
)


class ChartError(RuntimeError):
    pass


class AngleError(ChartError):
    pass


class StraighteningError(ChartError):
    pass


# ---------------------------------------------------------------------------
# quadrature along grid segments

_GL_CACHE: dict = {}


def _gauss_legendre(k: int):
    if k not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(k)
        _GL_CACHE[k] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[k]


def _breakpoints(axes, a, b) -> np.ndarray:
    """Parameters in (0, 1) where the segment ``a -> b`` crosses grid lines."""
    ts = [0.0, 1.0]
    for ax, u, v in zip(axes, a, b):
        if v == u or ax.size < 2:
            continue
        t = (ax - u) / (v - u)
        ts.extend(t[(t > 0.0) & (t < 1.0)])
    return np.unique(ts)


def segment_integral(axes, values, a, b, weight: Callable | None = None, nodes: int = 32):
    """
    ``int_0^1 w(t) V(a + t (b - a)) dt`` for the multilinear interpolant ``V``.

    The segment is split where it crosses grid lines, so each piece has a
    polynomial integrand; composite Gauss-Legendre with ``nodes`` points
    per piece is compared against twice as many nodes and refined until
    the two agree to 1e-10.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        return np.zeros(values.shape[len(axes):])
    cuts = _breakpoints(axes, a, b)

    def rule(k):
        x, w = _gauss_legendre(k)
        t0, t1 = cuts[:-1, None], cuts[1:, None]
        t = (t0 + (t1 - t0) * x).ravel()
        wt = ((t1 - t0) * w).ravel()
        if weight is not None:
            wt = wt * weight(t)
        f = multilinear(axes, values, a + t[:, None] * (b - a))
        return np.tensordot(wt, f, axes=(0, 0))

    k = nodes
    prev = rule(k)
    while k < 1024:
        k *= 2
        cur = rule(k)
        if np.max(np.abs(cur - prev)) < 1e-10:
            return cur
        prev = cur
    return prev


def _path_integral(field_: LatticeField, c0, c, legs) -> np.ndarray:
    """Integral of ``sum_j lambda_i^j dc_j`` along the polyline ``legs``."""
    r = field_.rank
    total = np.zeros(r)
    for a, b in zip(legs[:-1], legs[1:]):
        d = (b - a)[:r]
        if not np.any(d):
            continue
        B = segment_integral(field_.grid.axes, field_.basis, a, b)
        total += B @ d
    return total


def action_at(field_: LatticeField, c, c0, path: str = "straight") -> np.ndarray:
    """
    Actions ``p_i(c)`` relative to the reference base value ``c0``.

    The path runs in the first ``r`` base coordinates with the transverse
    values held at those of ``c``; ``path="L"`` moves one coordinate at a
    time instead of along the straight segment.
    """
    r = field_.rank
    c = np.asarray(c, dtype=float)
    start = c.copy()
    start[:r] = np.asarray(c0, dtype=float)[:r]
    if path == "straight":
        legs = [start, c]
    elif path == "L":
        legs = [start]
        cur = start.copy()
        for k in range(r):
            cur = cur.copy()
            cur[k] = c[k]
            legs.append(cur)
    else:
        raise ValueError(f"unknown path {path!r}")
    if not field_.grid.contains(start, EDGE_SLACK) or not field_.grid.contains(c, EDGE_SLACK):
        raise OutOfGridError("action path leaves the grid")
    return _path_integral(field_, start, c, legs)


@dataclass
class ActionTable:
    grid: GridSpec
    values: np.ndarray
    reference: tuple

    def at(self, c) -> np.ndarray:
        return multilinear(self.grid.axes, self.values, c)


def action_values(field_: LatticeField, c0=None, path: str = "straight") -> ActionTable:
    """Actions at every grid node; ``c0`` is a node index (seed node by default)."""
    field_.require_complete()
    c0 = field_.seed_index if c0 is None else tuple(c0)
    ref = field_.grid.node(c0)
    vals = np.zeros(field_.grid.shape + (field_.rank,))
    for idx in field_.grid.indices():
        if idx == c0:
            continue
        vals[idx] = action_at(field_, field_.grid.node(idx), ref, path)
    return ActionTable(field_.grid, vals, c0)


# ---------------------------------------------------------------------------
# closedness of the period form


@dataclass
class ClosednessReport:
    max_abs: float
    relative: float
    scale: float
    witness: tuple | None
    interior_nodes: int

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__)


def _fd_along(grid: GridSpec, values, idx, k):
    a = grid.axes[k]
    lo = idx[:k] + (idx[k] - 1,) + idx[k + 1:]
    hi = idx[:k] + (idx[k] + 1,) + idx[k + 1:]
    return (values[hi] - values[lo]) / (a[idx[k] + 1] - a[idx[k] - 1])


def closedness_check(field_: LatticeField) -> ClosednessReport:
    """
    Antisymmetrised central differences ``d_k lambda_i^j - d_j lambda_i^k``.

    Only the first ``r`` base directions enter.  ``relative`` divides by
    the larger of the largest derivative and ``max|lambda|`` over the grid
    extent, so constant period fields give a pure noise ratio.
    """
    grid, r = field_.grid, field_.rank
    dims = [k for k in range(r) if grid.shape[k] > 2]
    worst, witness, biggest, count = 0.0, None, 0.0, 0
    for idx in grid.indices():
        if not grid.is_interior(idx, dims) or any(
            field_.failed[nb] for nb in grid.neighbors(idx)
        ) or field_.failed[idx]:
            continue
        count += 1
        D = {k: _fd_along(grid, field_.basis, idx, k) for k in dims}
        for k in dims:
            biggest = max(biggest, float(np.max(np.abs(D[k]))))
        for j, k in itertools.combinations(dims, 2):
            v = float(np.max(np.abs(D[k][:, j] - D[j][:, k])))
            if v > worst or witness is None:
                worst, witness = max(worst, v), idx
    extent = max((grid.axes[k][-1] - grid.axes[k][0] for k in dims), default=1.0)
    scale = max(biggest, float(np.nanmax(np.abs(field_.basis))) / max(extent, 1e-300))
    return ClosednessReport(worst, worst / scale if scale else 0.0, scale, witness, count)


@dataclass
class PathReport:
    max_difference: float
    allowed: float
    passed: bool

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__)


def path_independence(field_: LatticeField, closed: ClosednessReport | None = None) -> PathReport:
    """
    Straight versus axis-by-axis action paths at every node.

    Two paths bound a region whose flux is at most the curl residual times
    its area; the allowance is ten times that bound plus a rounding floor.
    """
    closed = closed or closedness_check(field_)
    grid, r = field_.grid, field_.rank
    ref = grid.node(field_.seed_index)
    worst = 0.0
    for idx in grid.indices():
        c = grid.node(idx)
        d = np.max(np.abs(action_at(field_, c, ref) - action_at(field_, c, ref, "L")))
        worst = max(worst, float(d))
    area = float(np.prod([grid.axes[k][-1] - grid.axes[k][0] for k in range(r)]))
    lam = float(np.nanmax(np.abs(field_.basis)))
    ext = max(grid.axes[k][-1] - grid.axes[k][0] for k in range(r))
    allowed = 10.0 * closed.max_abs * area + 1e-12 * lam * max(ext, 1e-300)
    return PathReport(worst, allowed, worst <= allowed)


# ---------------------------------------------------------------------------
# sections and angles


@dataclass
class Section:
    """
    Fiber points over the grid, extended to arbitrary base values.

    ``point(c)`` projects the anchor node's point onto the level ``c`` and
    then moves it by the joint flow for the times ``offset(c)`` (if set).
    """

    spec: SystemSpec
    grid: GridSpec
    base_points: np.ndarray
    offset: Callable | None = None

    @property
    def points(self) -> np.ndarray:
        if self.offset is None:
            return self.base_points
        out = np.array(self.base_points)
        for idx in self.grid.indices():
            out[idx] = self.point(self.grid.node(idx), idx)
        return out

    def point(self, c, anchor=None, cfg: FlowConfig = DEFAULT) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        anchor = self.grid.nearest(c) if anchor is None else tuple(anchor)
        x = project_to_level(self.spec, self.base_points[anchor], c)
        if x is None:
            raise ChartError(f"no section point over {c.tolist()}")
        if self.offset is not None:
            x = joint_flow(self.spec, self.offset(c), x, cfg)
        return x

    def max_level_error(self) -> float:
        order = list(self.spec.base_order())
        pts = self.points
        return float(max(
            np.max(np.abs(self.spec.compiled.F(pts[idx])[order] - self.grid.node(idx)))
            for idx in self.grid.indices()
        ))


def build_section(spec: SystemSpec, field_: LatticeField, cfg: FlowConfig = DEFAULT) -> Section:
    """Section through the continued fiber points; seed node holds the seed point."""
    field_.require_complete()
    sec = Section(spec, field_.grid, np.array(field_.points))
    err = sec.max_level_error()
    if err >= 1e-9:
        raise ChartError(f"section misses its level sets by {err:.3e}")
    return sec


@dataclass
class Chart:
    """
    Section, actions and periods on one grid, plus an optional angle shift
    ``theta_i -> theta_i + gamma_i(c)`` produced by straightening.
    """

    spec: SystemSpec
    field: LatticeField
    section: Section
    actions: ActionTable
    cfg: FlowConfig = DEFAULT
    angle_shift: Callable | None = None
    notes: list = field(default_factory=list)

    @property
    def grid(self) -> GridSpec:
        return self.field.grid

    @property
    def transverse(self) -> tuple:
        return self.spec.transverse

    @property
    def reference(self) -> np.ndarray:
        return self.grid.node(self.actions.reference)

    def base_of(self, x) -> np.ndarray:
        return self.field.base_of(x)

    def action(self, x) -> np.ndarray:
        return action_at(self.field, self.base_of(x), self.reference)

    def transverse_values(self, x) -> np.ndarray:
        F = self.spec.compiled.F(x)
        return np.array([F[self.spec.function_names.index(t)] for t in self.transverse])


def _wrap(u):
    return np.mod(u, 1.0)


def _centered(u):
    """Representative of ``u`` mod 1 in ``[-0.5, 0.5)``."""
    return u - np.floor(u + 0.5)


def _shoot(spec, lam, s, m, u0, cfg, tol, max_iter=30):
    """Newton on ``u -> Phi(u @ lam, s) - m``."""
    r = spec.rank
    u = np.asarray(u0, dtype=float).copy()
    coef = np.zeros(spec.s)
    best_u, best = u.copy(), np.inf
    prev = np.inf
    for _ in range(max_iter):
        coef[:r] = u @ lam
        x = flow_combination(spec, coef, s, 1.0, cfg)
        R = x - m
        res = float(np.linalg.norm(R))
        if res < best:
            best_u, best = u.copy(), res
        # converged, or stalled at the integration noise floor
        if res < tol or res > 0.5 * prev:
            break
        J = (lam @ spec.compiled.fields(x)[:r]).T
        du, *_ = np.linalg.lstsq(J, -R, rcond=None)
        if not np.all(np.isfinite(du)) or np.max(np.abs(du)) > 0.5:
            break
        u = u + du
        prev = res
    return best_u, best


def angle_of(
    spec: SystemSpec,
    chart: Chart,
    m,
    cfg: FlowConfig | None = None,
    anchor=None,
    guess=None,
    tol: float = 1e-12,
    raw: bool = False,
    cell=None,
) -> np.ndarray:
    """
    Angles ``theta in [0, 1)^r`` of ``m``.

    Solves ``Phi(theta @ Lambda(c), s(c)) = m`` with ``c`` the base value of
    ``m``: a 16^r grid search (skipped when ``guess`` is given) followed by
    Newton.  ``anchor`` fixes the section's projection node and ``cell``
    the interpolation cell of the periods (see ``multilinear``).

    Raises
    ------
    AngleError
        The point is not reached from the section (other fiber component).
    """
    cfg = cfg or chart.cfg
    m = np.asarray(m, dtype=float)
    r = spec.rank
    c = chart.base_of(m)
    s = chart.section.point(c, anchor, cfg)
    lam = chart.field.lattice_at(c, cell)
    scale = max(1.0, float(np.linalg.norm(m)))
    if guess is None:
        u = np.arange(16) / 16.0
        coefs = []
        for i in range(r):
            cf = np.zeros(spec.s)
            cf[:r] = lam[i]
            coefs.append(cf)
        X = flow_grid(spec, s, [u] * r, cfg, coefs=coefs)
        D = np.linalg.norm(X - m, axis=-1)
        k = np.unravel_index(int(np.argmin(D)), D.shape)
        guess = np.array([u[j] for j in k])
    else:
        guess = np.asarray(guess, dtype=float)
        if chart.angle_shift is not None:
            guess = guess - chart.angle_shift(c)
    theta, res = _shoot(spec, lam, s, m, guess, cfg, tol * scale)
    if res > max(1e-7, 1e4 * cfg.abs_tol) * scale:
        raise AngleError(f"no angle reaches the point (residual {res:.3e})")
    if chart.angle_shift is not None:
        theta = theta + chart.angle_shift(c)
    return theta if raw else _wrap(theta)


def torus_point(spec: SystemSpec, chart: Chart, c, theta, cfg=None, anchor=None) -> np.ndarray:
    """``Phi(theta @ Lambda(c), s(c))`` (without angle shift)."""
    cfg = cfg or chart.cfg
    s = chart.section.point(c, anchor, cfg)
    coef = np.zeros(spec.s)
    coef[: spec.rank] = np.asarray(theta, dtype=float) @ chart.field.lattice_at(c)
    return flow_combination(spec, coef, s, 1.0, cfg)


# ---------------------------------------------------------------------------
# brackets of the chart functions


def _fd_steps(m, h_step):
    return h_step * np.maximum(1.0, np.abs(m))


def _chart_gradients(spec, chart, m, anchor, theta0, h_step, cfg):
    """Finite-difference gradients of theta (unwrapped), p and exact grads of z."""
    n, r = spec.n, spec.rank
    h = _fd_steps(m, h_step)
    gt = np.zeros((r, n))
    gp = np.zeros((r, n))
    # one interpolation cell for the whole stencil: no kinks inside it
    cell = cell_index(chart.grid.axes, chart.base_of(m))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h[k]
        tp = angle_of(spec, chart, m + e, cfg, anchor, guess=theta0, raw=True, cell=cell)
        tm = angle_of(spec, chart, m - e, cfg, anchor, guess=theta0, raw=True, cell=cell)
        gt[:, k] = _centered(tp - tm) / (2 * h[k])
        gp[:, k] = (chart.action(m + e) - chart.action(m - e)) / (2 * h[k])
    dF = spec.compiled.dF(m)
    gz = np.array([dF[spec.function_names.index(t)] for t in spec.transverse]).reshape(-1, n)
    return gt, gp, gz


def _pair(P, a, b) -> float:
    """``sum_{i<j} P_ij (a_i b_j - a_j b_i)``; exactly antisymmetric."""
    n = len(a)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if P[i, j] != 0.0:
                total += P[i, j] * (a[i] * b[j] - a[j] * b[i])
    return total


def chart_brackets(spec, chart, m, anchor=None, theta0=None, h_step=1e-5, cfg=None):
    """
    All pairwise brackets of ``(theta, p, z)`` at ``m``.

    Returns ``(names, B)`` with ``B`` antisymmetric.
    """
    cfg = cfg or chart.cfg
    m = np.asarray(m, dtype=float)
    c = chart.base_of(m)
    anchor = chart.grid.nearest(c) if anchor is None else anchor
    if theta0 is None:
        theta0 = angle_of(spec, chart, m, cfg, anchor, raw=True)
    gt, gp, gz = _chart_gradients(spec, chart, m, anchor, theta0, h_step, cfg)
    r = spec.rank
    names = [f"theta{i + 1}" for i in range(r)] + [f"p{i + 1}" for i in range(r)]
    names += list(spec.transverse)
    G = np.vstack([gt, gp, gz])
    P = spec.compiled.pi(m)
    k = G.shape[0]
    B = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            B[a, b] = _pair(P, G[a], G[b])
            B[b, a] = -B[a, b]
    return names, B


@dataclass
class Residual:
    value: float = 0.0
    witness: np.ndarray | None = None

    def update(self, v, x):
        if v > self.value or self.witness is None:
            self.value = max(self.value, float(v))
            self.witness = np.asarray(x, dtype=float).copy()


@dataclass
class CanonicalReport:
    system: str
    kind: str
    samples: int
    residuals: dict
    diagnostics: dict

    def value(self, key: str) -> float:
        if key in self.residuals:
            return self.residuals[key].value
        return self.diagnostics[key].value

    def passed(self, thresholds: dict) -> bool:
        return all(self.value(k) < v for k, v in thresholds.items())

    def to_dict(self, thresholds: dict | None = None) -> dict:
        def dump(d):
            return {
                k: {"max": v.value, "witness": None if v.witness is None else v.witness.tolist()}
                for k, v in d.items()
            }

        out = {
            "system": self.system,
            "kind": self.kind,
            "samples": self.samples,
            "residuals": dump(self.residuals),
            "diagnostics": dump(self.diagnostics),
            "certificate": "measured finite-difference residuals; no symbolic proof",
        }
        if thresholds is not None:
            out["thresholds"] = dict(thresholds)
            out["passed"] = self.passed(thresholds)
        return out


DEFAULT_THRESHOLDS = {
    "theta_p": 1e-5,
    "p_p": 1e-8,
    "p_z": 1e-6,
}


def default_thresholds(spec: SystemSpec) -> dict:
    t = dict(DEFAULT_THRESHOLDS)
    if spec.kind == "commutative" and spec.transverse:
        t["theta_z"] = 1e-6
        t["z_z"] = 1e-6
    if spec.kind == "noncommutative" and len(spec.transverse) > 1:
        t["z_z_spread"] = 1e-6
    return t


def chart_samples(chart: Chart, n_samples: int, seed: int = 0, margin: float = 0.2):
    """
    Random ``(c, theta, anchor)`` with ``c`` in the inner part of the grid.

    ``margin`` is the fraction of each axis kept clear at both ends so the
    finite-difference stencils stay inside the grid.
    """
    rng = np.random.default_rng(seed)
    grid = chart.grid
    out = []
    for _ in range(n_samples):
        c = np.array([
            a[0] if a.size == 1 else rng.uniform(
                a[0] + margin * (a[-1] - a[0]), a[-1] - margin * (a[-1] - a[0])
            )
            for a in grid.axes
        ])
        out.append((c, rng.uniform(0.0, 1.0, chart.spec.rank), grid.nearest(c)))
    return out


def verify_canonical(
    spec: SystemSpec,
    chart: Chart,
    n_samples: int = 50,
    cfg: FlowConfig | None = None,
    seed: int = 0,
    h_step: float = 1e-5,
    fiber_points: int = 8,
) -> CanonicalReport:
    """
    Finite-difference certification of the canonical bracket relations.

    Residual keys: ``theta_p`` (``|{theta_i, p_j} - delta_ij|``), ``p_p``,
    ``p_z``, ``theta_theta`` and, for commutative charts with transverse
    functions, ``theta_z`` and ``z_z``.  Non-commutative charts report the
    fiber spread of ``{z_k, z_l}`` as ``z_z_spread`` and keep
    ``theta_z`` among the diagnostics.
    """
    cfg = cfg or chart.cfg
    r, q = spec.rank, len(spec.transverse)
    res = {k: Residual() for k in ("theta_p", "p_p", "p_z", "theta_theta")}
    diag = {}
    if spec.kind == "commutative":
        if q:
            res["theta_z"] = Residual()
            res["z_z"] = Residual()
    else:
        diag["theta_z"] = Residual()
        if q > 1:
            res["z_z_spread"] = Residual()
    T = slice(0, r)
    Pp = slice(r, 2 * r)
    Z = slice(2 * r, 2 * r + q)
    for c, u, anchor in chart_samples(chart, n_samples, seed):
        m = torus_point(spec, chart, c, u, cfg, anchor)
        theta0 = angle_of(spec, chart, m, cfg, anchor, guess=u + (
            chart.angle_shift(c) if chart.angle_shift is not None else 0.0), raw=True)
        _, B = chart_brackets(spec, chart, m, anchor, theta0, h_step, cfg)
        res["theta_p"].update(np.max(np.abs(B[T, Pp] - np.eye(r))), m)
        res["p_p"].update(np.max(np.abs(B[Pp, Pp])), m)
        res["theta_theta"].update(np.max(np.abs(B[T, T])), m)
        if q:
            res["p_z"].update(np.max(np.abs(B[Pp, Z])), m)
            if spec.kind == "commutative":
                res["theta_z"].update(np.max(np.abs(B[T, Z])), m)
                res["z_z"].update(np.max(np.abs(B[Z, Z])), m)
            else:
                diag["theta_z"].update(np.max(np.abs(B[T, Z])), m)
                if q > 1:
                    pts = [
                        torus_point(spec, chart, c, v, cfg, anchor)
                        for v in (np.arange(fiber_points)[:, None] / fiber_points + u) % 1.0
                    ]
                    spread = 0.0
                    for a, b in itertools.combinations(spec.transverse, 2):
                        vals = [_z_bracket(spec, a, b, x) for x in pts]
                        spread = max(spread, max(vals) - min(vals))
                    res["z_z_spread"].update(spread, m)
    return CanonicalReport(spec.name, spec.kind, n_samples, res, diag)


def _z_bracket(spec, a: str, b: str, x) -> float:
    B = spec.compiled.brackets(x)
    return float(B[spec.function_names.index(a), spec.function_names.index(b)])


# ---------------------------------------------------------------------------
# straightening


def measure_theta_brackets(spec, chart, h_step=1e-5, cfg=None) -> np.ndarray:
    """``{theta_i, theta_j}`` at every node's section point (grid + (r, r))."""
    cfg = cfg or chart.cfg
    r = spec.rank
    grid = chart.grid
    pts = chart.section.points
    W = np.zeros(grid.shape + (r, r))
    for idx in grid.indices():
        m = pts[idx]
        c = grid.node(idx)
        theta0 = np.zeros(r) + (chart.angle_shift(c) if chart.angle_shift is not None else 0.0)
        _, B = chart_brackets(spec, chart, m, idx, theta0, h_step, cfg)
        W[idx] = B[:r, :r]
    return W


def _two_form_closedness(grid: GridSpec, Omega: np.ndarray, r: int) -> float:
    """Largest ``|d Omega|`` component by central differences (zero for r <= 2)."""
    if r < 3:
        return 0.0
    dims = [k for k in range(r) if grid.shape[k] > 2]
    worst = 0.0
    for idx in grid.indices():
        if not grid.is_interior(idx, dims):
            continue
        D = {k: _fd_along(grid, Omega, idx, k) for k in dims}
        for a, b, c in itertools.combinations(dims, 3):
            v = D[a][b, c] + D[b][c, a] + D[c][a, b]
            worst = max(worst, abs(float(v)))
    return worst


@dataclass
class Straightening:
    """Angle shift ``gamma(c)`` from the homotopy primitive of the theta-bracket form."""

    field: LatticeField
    omega_c: np.ndarray
    reference: np.ndarray

    def __call__(self, c) -> np.ndarray:
        r = self.field.rank
        c = np.asarray(c, dtype=float)
        start = c.copy()
        start[:r] = self.reference[:r]
        d = (c - start)[:r]
        if not np.any(d):
            return np.zeros(r)
        # g_a = -int t sum_b Omega_ba(c(t)) d_b dt
        I = segment_integral(self.field.grid.axes, self.omega_c, start, c, weight=lambda t: t)
        g = -(I.T @ d)
        lam = self.field.lattice_at(c)
        return np.linalg.solve(lam.T, g)


def straighten_section(
    spec: SystemSpec,
    chart: Chart,
    cfg: FlowConfig | None = None,
    closed_tol: float = 1e-3,
    h_step: float = 1e-5,
) -> Chart:
    """
    Remove ``{theta_i, theta_j}`` by an F-basic angle shift.

    With ``omega_ij = {theta_i, theta_j}`` measured on the grid and
    ``Lambda[i, a] = lambda_i^a``, the shift ``gamma = Lambda^{-T} g`` where
    ``g`` is the radial-homotopy primitive of ``-Lambda^T omega Lambda``
    in base coordinates.  Charts with ``r = 1`` are returned unchanged.

    Raises
    ------
    StraighteningError
        If the measured form is not closed to ``closed_tol`` (relative).
    """
    r = spec.rank
    if r == 1:
        return chart
    cfg = cfg or chart.cfg
    W = measure_theta_brackets(spec, chart, h_step, cfg)
    L = chart.field.basis
    Omega = np.einsum("...ia,...ij,...jb->...ab", L, W, L)
    scale = max(float(np.max(np.abs(Omega))), 1e-300)
    closed = _two_form_closedness(chart.grid, Omega, r)
    if closed > closed_tol * scale / max(
        min(chart.grid.axes[k][-1] - chart.grid.axes[k][0] for k in range(r)), 1e-300
    ):
        raise StraighteningError(f"theta-bracket form is not closed (residual {closed:.3e})")
    shift = Straightening(chart.field, Omega, chart.reference)
    prev = chart.angle_shift

    def combined(c, _prev=prev, _shift=shift):
        base = _prev(c) if _prev is not None else 0.0
        return base + _shift(c)

    notes = list(chart.notes)
    notes.append(f"straightened: max |{{theta_i, theta_j}}| on grid before = {float(np.max(np.abs(W))):.3e}")
    return Chart(spec, chart.field, chart.section, chart.actions, cfg, combined, notes)


# ---------------------------------------------------------------------------
# assembly and export


def build_chart(
    spec: SystemSpec,
    field_: LatticeField | None = None,
    cfg: FlowConfig = DEFAULT,
    straighten: bool = False,
    **grid_kw,
) -> Chart:
    """Lattice field (if not given), section, actions and optional straightening."""
    if field_ is None:
        field_ = build_lattice_field(spec, cfg=cfg, **grid_kw)
    field_.require_complete()
    section = build_section(spec, field_, cfg)
    actions = action_values(field_)
    chart = Chart(spec, field_, section, actions, cfg)
    if straighten:
        chart = straighten_section(spec, chart, cfg)
    return chart


def chart_csv(chart: Chart) -> str:
    """One row per node: base values, actions, section point."""
    spec = chart.spec
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        base_names(spec)
        + [f"p{i + 1}" for i in range(spec.rank)]
        + [f"s_{c}" for c in spec.coords]
    )
    pts = chart.section.points
    for idx in chart.grid.indices():
        row = [f"{v:.17g}" for v in chart.grid.node(idx)]
        row += [f"{v:.17g}" for v in chart.actions.values[idx]]
        row += [f"{v:.17g}" for v in pts[idx]]
        w.writerow(row)
    return buf.getvalue()
