"""
Period lattices
===============

Refine near-return times into exact return vectors, reduce them to a basis
of the period lattice, continue the basis over a grid of base values and
evaluate the rescaled period-1 fields ``Y_i = sum_j lambda_i^j X_{f_j}``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .flows import (
    DEFAULT,
    FlowConfig,
    FlowError,
    NonCompactError,
    flow_combination,
    joint_flow,
    search_returns,
)
from .geometry import lie_derivative_bivector
from .systems import SystemSpec


class PeriodRefinementError(RuntimeError):
    pass


class LatticeSpanError(ValueError):
    pass


class OutOfGridError(ValueError):
    pass


class ContinuationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# single-point refinement


@dataclass
class Refinement:
    times: np.ndarray
    defect: float
    iterations: int
    history: list


def refine_period(
    spec: SystemSpec,
    m,
    L0,
    cfg: FlowConfig = DEFAULT,
    tol: float = 1e-9,
    max_iter: int = 25,
    full: bool = False,
):
    """
    Newton refinement of a return vector ``L`` with ``Phi(L, m) = m``.

    The Jacobian of ``L -> Phi(L, m)`` has columns ``X_{f_j}(Phi(L, m))``
    because the flows commute; each step solves the overdetermined
    ``n x r`` system in the least-squares sense.

    Raises
    ------
    PeriodRefinementError
        No iterate reached ``|Phi(L, m) - m| < tol`` within ``max_iter``
        iterations, or the Jacobian is singular.
    """
    m = np.asarray(m, dtype=float)
    L = np.atleast_1d(np.asarray(L0, dtype=float)).copy()
    r = spec.rank
    best_L, best_res = L.copy(), np.inf
    history = []
    prev = np.inf
    for it in range(max_iter):
        try:
            x = joint_flow(spec, L, m, cfg)
        except (FlowError, NonCompactError) as exc:
            raise PeriodRefinementError(f"flow failed during refinement: {exc}") from exc
        R = x - m
        res = float(np.linalg.norm(R))
        history.append(res)
        if res < best_res:
            best_L, best_res = L.copy(), res
        # stop at the integration noise floor once below tolerance
        if res < tol and (res < 1e-3 * tol or res > 0.5 * prev):
            break
        J = spec.compiled.fields(x)[:r].T
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
            raise PeriodRefinementError("singular return Jacobian")
        dL, *_ = np.linalg.lstsq(J, -R, rcond=None)
        if not np.all(np.isfinite(dL)) or np.linalg.norm(dL) > 0.5 * max(np.linalg.norm(L), 1.0):
            raise PeriodRefinementError(f"Newton step diverged at iteration {it}")
        L = L + dL
        prev = res
    if best_res >= tol:
        raise PeriodRefinementError(
            f"defect {best_res:.3e} above tolerance {tol:.1e} after {len(history)} iterations"
        )
    if full:
        return Refinement(best_L, best_res, len(history), history)
    return best_L


def return_defect(spec: SystemSpec, m, L, cfg: FlowConfig = DEFAULT) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.linalg.norm(joint_flow(spec, L, m, cfg) - m))


# ---------------------------------------------------------------------------
# lattice reduction


def _integer_row_basis(M: np.ndarray) -> np.ndarray:
    """Basis of the integer row lattice of ``M`` by Euclidean elimination."""
    rows = [list(map(int, row)) for row in M if any(int(v) for v in row)]
    if not rows:
        return np.zeros((0, M.shape[1]), dtype=object)
    ncol = len(rows[0])
    basis = []
    col = 0
    while rows and col < ncol:
        active = [row for row in rows if row[col] != 0]
        rest = [row for row in rows if row[col] == 0]
        while len(active) > 1:
            active.sort(key=lambda row: abs(row[col]))
            pivot = active[0]
            reduced = [pivot]
            for row in active[1:]:
                q = row[col] // pivot[col]
                new = [a - q * b for a, b in zip(row, pivot)]
                (reduced if new[col] != 0 else rest).append(new)
            active = reduced
        if active:
            basis.append(active[0])
        rows = [row for row in rest if any(row)]
        col += 1
    return np.array(basis, dtype=object)


def lagrange_gauss(b1, b2):
    """Lagrange-Gauss reduction of a 2-D basis; returns ``(b1, b2)`` with ``|b1| <= |b2|``."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if b1 @ b1 > b2 @ b2:
        b1, b2 = b2, b1
    for _ in range(1000):
        mu = round(float(b1 @ b2) / float(b1 @ b1))
        b2 = b2 - mu * b1
        if b2 @ b2 >= b1 @ b1:
            break
        b1, b2 = b2, b1
    return b1, b2


def greedy_reduce(B: np.ndarray) -> np.ndarray:
    """
    Pairwise size reduction until no row shortens (heuristic for ``r >= 3``).
    """
    B = np.array(B, dtype=float)
    r = B.shape[0]
    for _ in range(100):
        changed = False
        order = np.argsort(np.einsum("ij,ij->i", B, B))
        B = B[order]
        for i, j in itertools.permutations(range(r), 2):
            mu = round(float(B[i] @ B[j]) / float(B[j] @ B[j]))
            if mu:
                cand = B[i] - mu * B[j]
                if cand @ cand < B[i] @ B[i] - 1e-12 * (B[i] @ B[i]):
                    B[i] = cand
                    changed = True
        if not changed:
            break
    return B


def _orient(B: np.ndarray) -> np.ndarray:
    """Order rows to make the diagonal dominant and its entries positive."""
    r = B.shape[0]
    best, best_score = None, -1.0
    for perm in itertools.permutations(range(r)):
        score = float(np.prod([abs(B[perm[i], i]) for i in range(r)]))
        if score > best_score + 1e-12 * max(best_score, 1.0):
            best, best_score = perm, score
    B = B[list(best)].copy()
    for i in range(r):
        if B[i, i] < 0 or (B[i, i] == 0 and B[i][np.nonzero(B[i])[0][0]] < 0):
            B[i] = -B[i]
    return B


def reduce_lattice(candidates, max_denominator: int = 64, rel_tol: float = 1e-6) -> np.ndarray:
    """
    Reduced basis (rows) of the lattice generated by the candidate vectors.

    Candidates are expressed in the coordinates of their shortest
    independent subset; those coordinates are rationalised (denominators up
    to ``max_denominator``) and the integer row lattice is computed
    exactly, so redundant and non-primitive candidates are handled.

    Raises
    ------
    LatticeSpanError
        If the candidates do not span ``R^r`` or are not commensurate.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    r = C.shape[1]
    order = np.argsort(np.linalg.norm(C, axis=1))
    base = []
    for k in order:
        trial = np.array(base + [C[k]])
        if np.linalg.matrix_rank(trial, tol=rel_tol * np.max(np.abs(trial))) == len(trial):
            base.append(C[k])
        if len(base) == r:
            break
    if len(base) < r:
        raise LatticeSpanError(f"candidates span only {len(base)} of {r} directions")
    B0 = np.array(base)
    K = C @ np.linalg.inv(B0)
    fracs = [[Fraction(float(v)).limit_denominator(max_denominator) for v in row] for row in K]
    approx = np.array([[float(f) for f in row] for row in fracs])
    if np.max(np.abs(approx - K)) > 1e-4:
        raise LatticeSpanError("candidates are not commensurate with a common lattice")
    den = 1
    for row in fracs:
        for f in row:
            den = den * f.denominator // math.gcd(den, f.denominator)
    ints = np.array([[int(f * den) for f in row] for row in fracs], dtype=object)
    H = _integer_row_basis(ints)
    if H.shape[0] != r:
        raise LatticeSpanError("integer lattice is degenerate")
    B = np.array(H, dtype=float) / den @ B0
    if r == 1:
        B = np.abs(B)
    elif r == 2:
        B = np.array(lagrange_gauss(B[0], B[1]))
    else:
        B = greedy_reduce(B)
    return _orient(B)


@dataclass
class PeriodLattice:
    """Reduced basis (rows ``lambda_i``) of the period lattice over ``base``."""

    base: np.ndarray
    basis: np.ndarray
    defect: float
    anchor: np.ndarray
    notes: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    def to_dict(self) -> dict:
        return {
            "base": self.base.tolist(),
            "basis": self.basis.tolist(),
            "defect": self.defect,
            "anchor": self.anchor.tolist(),
            "notes": list(self.notes),
        }


def lattice_basis(spec: SystemSpec, m, candidates, cfg: FlowConfig = DEFAULT) -> PeriodLattice:
    """
    Reduced lattice basis from refined return vectors at ``m``.

    ``r = 1``: the positive generator; ``r = 2``: Lagrange-Gauss reduced;
    ``r >= 3``: greedy pairwise reduction (heuristic).
    """
    m = np.asarray(m, dtype=float)
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if C.shape[1] != spec.rank:
        C = C.reshape(-1, spec.rank)
    B = reduce_lattice(C)
    defect = max(return_defect(spec, m, b, cfg) for b in B)
    notes = []
    if len(C) < spec.rank + 1:
        notes.append(
            "basis taken from the shortest detected returns; a finer sublattice "
            "would only be visible through shorter returns"
        )
    return PeriodLattice(spec.compiled.F(m)[list(spec.base_order())], B, defect, m.copy(), notes)


def seed_lattice(
    spec: SystemSpec,
    m=None,
    cfg: FlowConfig = DEFAULT,
    search_cfg: FlowConfig | None = None,
    radius: float = 0.1,
    tol: float = 1e-9,
) -> PeriodLattice:
    """
    Near-return search, refinement and reduction at one point.

    Raises
    ------
    NonCompactError
        No near returns within the time horizon.
    """
    m = np.asarray(spec.seed if m is None else m, dtype=float)
    search_cfg = search_cfg or FlowConfig(abs_tol=1e-9, rel_tol=1e-9)
    cands, _ = search_returns(spec, m, search_cfg, radius=radius)
    refined = []
    for c in cands:
        try:
            L = refine_period(spec, m, c.times, cfg, tol=tol)
        except PeriodRefinementError:
            continue
        if np.linalg.norm(L) < radius:
            continue
        refined.append(L)
    if not refined:
        raise NonCompactError("near returns did not refine to exact returns", m)
    return lattice_basis(spec, m, refined, cfg)


# ---------------------------------------------------------------------------
# grids


@dataclass
class GridSpec:
    """
    Rectangular grid over base values ordered as ``spec.base_order()``.

    The first ``r`` axes carry the actions; the remaining axes (transverse
    values) usually hold a handful of nodes for finite-difference stencils.
    """

    axes: list

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        for a in self.axes:
            if a.ndim != 1 or a.size < 1 or np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be strictly increasing 1-D arrays")

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def node(self, idx) -> np.ndarray:
        return np.array([a[k] for a, k in zip(self.axes, idx)])

    def indices(self):
        return itertools.product(*(range(k) for k in self.shape))

    def nearest(self, c) -> tuple:
        return tuple(int(np.argmin(np.abs(a - v))) for a, v in zip(self.axes, c))

    def neighbors(self, idx):
        for d in range(self.dim):
            for step in (-1, 1):
                k = idx[d] + step
                if 0 <= k < self.shape[d]:
                    yield idx[:d] + (k,) + idx[d + 1:]

    def is_interior(self, idx, dims=None) -> bool:
        dims = range(self.dim) if dims is None else dims
        return all(0 < idx[d] < self.shape[d] - 1 for d in dims if self.shape[d] > 1)

    def contains(self, c, slack: float = 0.0) -> bool:
        """Membership with ``slack`` end-cell widths of tolerance."""
        for a, v in zip(self.axes, c):
            if a.size == 1:
                continue
            if v < a[0] - slack * (a[1] - a[0]) or v > a[-1] + slack * (a[-1] - a[-2]):
                return False
        return True

    @classmethod
    def around(
        cls,
        spec: SystemSpec,
        center=None,
        nodes: int = 11,
        half_width=None,
        transverse_nodes: int = 3,
        rel_width: float = 0.02,
    ) -> "GridSpec":
        """
        Grid centred on the base value of the seed (or ``center``).

        ``half_width`` defaults to ``rel_width * max(|c|, 1e-3)`` along every
        axis; it may be a scalar or a per-axis sequence.
        """
        if center is None:
            center = spec.compiled.F(spec.seed)[list(spec.base_order())]
        center = np.asarray(center, dtype=float)
        if half_width is None:
            half_width = rel_width * max(float(np.max(np.abs(center))), 1e-3)
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
        axes = []
        for k, (c, w) in enumerate(zip(center, hw)):
            count = nodes if k < spec.rank else transverse_nodes
            if count <= 1:
                axes.append(np.array([c]))
            else:
                axes.append(c + w * np.linspace(-1.0, 1.0, count))
        return cls(axes)


EDGE_SLACK = 0.05


def cell_index(axes, c) -> tuple:
    """Lower-corner node index of the grid cell containing ``c``."""
    return tuple(
        0 if a.size == 1 else int(np.clip(np.searchsorted(a, v) - 1, 0, a.size - 2))
        for a, v in zip(axes, c)
    )


def multilinear(axes, values: np.ndarray, c, slack: float = EDGE_SLACK, cell=None) -> np.ndarray:
    """
    Multilinear interpolation of ``values[grid..., ...]`` at ``c``.

    ``c`` may be one base value or a stack of them (last axis).  Singleton
    axes are held constant.  Within ``slack`` end-cell widths beyond the
    grid the end cells are extrapolated linearly, which keeps
    finite-difference stencils at boundary nodes usable.

    ``cell`` (from :func:`cell_index`) pins the polynomial piece used, so
    points slightly outside that cell are extrapolated from it instead of
    switching pieces; difference quotients then see a smooth function.

    Raises
    ------
    OutOfGridError
        If ``c`` lies further outside the grid.
    """
    c = np.asarray(c, dtype=float)
    single = c.ndim == 1
    C = np.atleast_2d(c)
    npts = C.shape[0]
    lows, weights, active = [], [], []
    for d, a in enumerate(axes):
        v = C[:, d]
        if a.size == 1:
            lows.append(np.zeros(npts, dtype=int))
            weights.append(None)
            continue
        if np.any(v < a[0] - slack * (a[1] - a[0])) or np.any(v > a[-1] + slack * (a[-1] - a[-2])):
            bad = v[(v < a[0]) | (v > a[-1])][0]
            raise OutOfGridError(f"base value {bad!r} outside [{a[0]!r}, {a[-1]!r}]")
        if cell is None:
            k = np.clip(np.searchsorted(a, v) - 1, 0, a.size - 2)
        else:
            k = np.full(npts, cell[d], dtype=int)
        lows.append(k)
        weights.append((v - a[k]) / (a[k + 1] - a[k]))
        active.append(d)
    tail = values.shape[len(axes):]
    out = np.zeros((npts,) + tail)
    expand = (slice(None),) + (None,) * len(tail)
    for corner in itertools.product((0, 1), repeat=len(active)):
        idx = list(lows)
        w = np.ones(npts)
        for d, bit in zip(active, corner):
            idx[d] = lows[d] + bit
            w = w * (weights[d] if bit else 1.0 - weights[d])
        out += w[expand] * values[tuple(idx)]
    return out[0] if single else out


def project_to_level(
    spec: SystemSpec, x0, c, tol: float = 1e-12, max_iter: int = 50, max_move: float | None = None
):
    """
    Gauss-Newton solve of ``F(x) = c`` from ``x0`` (base-ordered ``c``).

    Steps are minimum-norm, hence along the row space of ``dF``.  Returns
    the point or ``None`` when the iteration fails or moves further than
    ``max_move`` from ``x0``.
    """
    order = list(spec.base_order())
    comp = spec.compiled
    c = np.asarray(c, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    scale = max(1.0, float(np.max(np.abs(c))))
    for _ in range(max_iter):
        R = comp.F(x)[order] - c
        if np.max(np.abs(R)) < tol * scale:
            if max_move is not None and np.linalg.norm(x - x0) > max_move:
                return None
            return x
        J = comp.dF(x)[order]
        dx, *_ = np.linalg.lstsq(J, -R, rcond=None)
        if not np.all(np.isfinite(dx)):
            return None
        x = x + dx
    R = comp.F(x)[order] - c
    if np.max(np.abs(R)) < 1e3 * tol * scale:
        return x
    return None


def _bfs_order(grid: GridSpec, start, ok=None):
    """Breadth-first node order from ``start`` with each node's parent."""
    seen = {start: None}
    queue = deque([start])
    order = []
    while queue:
        idx = queue.popleft()
        order.append((idx, seen[idx]))
        for nb in grid.neighbors(idx):
            if nb not in seen and (ok is None or ok(nb)):
                seen[nb] = idx
                queue.append(nb)
    return order


@dataclass
class LatticeField:
    """
    Period-lattice bases tabulated over a base grid.

    Attributes
    ----------
    grid : GridSpec
    points : ndarray, shape grid + (n,)
        One fiber point per node (the section), continued from the seed.
    basis : ndarray, shape grid + (r, r)
        ``basis[node][i, j] = lambda_i^j`` (component ``j`` of ``lambda_i``).
    defects : ndarray, shape grid
    failed : ndarray of bool, shape grid
    seed_index : tuple
    """

    spec: SystemSpec
    grid: GridSpec
    points: np.ndarray
    basis: np.ndarray
    defects: np.ndarray
    failed: np.ndarray
    seed_index: tuple
    notes: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.spec.rank

    def frontier(self) -> list:
        """Failed nodes adjacent to a converged node."""
        out = []
        for idx in zip(*np.nonzero(self.failed)):
            idx = tuple(int(k) for k in idx)
            if any(not self.failed[nb] for nb in self.grid.neighbors(idx)):
                out.append(idx)
        return out

    def require_complete(self) -> None:
        if self.failed.any():
            raise ContinuationError(
                f"{int(self.failed.sum())} grid nodes failed; frontier {self.frontier()[:8]}"
            )

    def base_of(self, m) -> np.ndarray:
        return self.spec.compiled.F(m)[list(self.spec.base_order())]

    def lattice_at(self, c, cell=None) -> np.ndarray:
        """Interpolated basis (rows ``lambda_i``) at base value ``c``."""
        return multilinear(self.grid.axes, self.basis, c, cell=cell)

    def coefficients(self, c, i: int, cell=None) -> np.ndarray:
        """Length-``s`` field coefficients of ``Y_i`` at base value ``c``."""
        coef = np.zeros(self.spec.s)
        coef[: self.rank] = self.lattice_at(c, cell)[i]
        return coef

    def max_jump(self) -> float:
        """Largest change of any ``lambda_i`` between adjacent converged nodes."""
        worst = 0.0
        for idx in self.grid.indices():
            if self.failed[idx]:
                continue
            for nb in self.grid.neighbors(idx):
                if not self.failed[nb]:
                    worst = max(worst, float(np.max(np.abs(self.basis[idx] - self.basis[nb]))))
        return worst


def continue_lattice(
    spec: SystemSpec,
    grid: GridSpec,
    seed: PeriodLattice,
    cfg: FlowConfig = DEFAULT,
    tol: float = 1e-9,
    jump: float = 0.05,
) -> LatticeField:
    """
    Breadth-first continuation of the seed lattice over the grid.

    Each node first receives a fiber point by a Gauss-Newton projection
    from its parent's point, then each ``lambda_i`` is refined starting
    from the parent's value, so labels carry over continuously.  Nodes
    whose refinement fails, or whose basis jumps by more than ``jump``
    (relative) from the parent, are marked failed together with the part
    of the grid reached only through them.
    """
    n, r = spec.n, spec.rank
    shape = grid.shape
    points = np.full(shape + (n,), np.nan)
    basis = np.full(shape + (r, r), np.nan)
    defects = np.full(shape, np.nan)
    failed = np.ones(shape, dtype=bool)
    start = grid.nearest(seed.base)
    anchor = np.asarray(seed.anchor, dtype=float)
    c0 = grid.node(start)
    if np.allclose(c0, seed.base, rtol=0, atol=1e-14 * max(1.0, np.max(np.abs(c0)))):
        p0 = anchor.copy()
        seed_basis, seed_defect = seed.basis, seed.defect
    else:
        p0 = project_to_level(spec, anchor, c0)
        if p0 is None:
            raise ContinuationError("cannot place the seed node on its fiber")
        seed_basis = np.array([refine_period(spec, p0, b, cfg, tol=tol) for b in seed.basis])
        seed_defect = max(return_defect(spec, p0, b, cfg) for b in seed_basis)
    scale = float(np.linalg.norm(anchor)) + 1.0

    # section points first: cheap, and it finds where the fibers exist
    points[start] = p0
    placed = {start}
    for idx, parent in _bfs_order(grid, start)[1:]:
        if parent not in placed:
            continue
        x = project_to_level(spec, points[parent], grid.node(idx), max_move=0.5 * scale)
        if x is not None:
            points[idx] = x
            placed.add(idx)

    basis[start] = seed_basis
    defects[start] = seed_defect
    failed[start] = False
    notes = list(seed.notes)
    for idx, parent in _bfs_order(grid, start, ok=lambda k: k in placed)[1:]:
        if failed[parent]:
            continue
        rows = []
        worst = 0.0
        try:
            for i in range(r):
                ref = refine_period(spec, points[idx], basis[parent][i], cfg, tol=tol, full=True)
                rows.append(ref.times)
                worst = max(worst, ref.defect)
        except PeriodRefinementError as exc:
            notes.append(f"node {idx}: {exc}")
            continue
        B = np.array(rows)
        rel = np.max(np.abs(B - basis[parent])) / max(np.max(np.abs(basis[parent])), 1e-300)
        if rel > jump:
            notes.append(f"node {idx}: basis jumped by {rel:.3g} relative to its parent")
            continue
        basis[idx] = B
        defects[idx] = worst
        failed[idx] = False
    return LatticeField(spec, grid, points, basis, defects, failed, start, notes)


def build_lattice_field(
    spec: SystemSpec,
    grid: GridSpec | None = None,
    cfg: FlowConfig = DEFAULT,
    nodes: int = 11,
    transverse_nodes: int = 3,
    halvings: int = 4,
    tol: float = 1e-9,
) -> LatticeField:
    """
    Seed lattice plus continuation, shrinking the default grid on failure.

    With an explicit ``grid`` no shrinking takes place.
    """
    seed = seed_lattice(spec, cfg=cfg, tol=tol)
    if grid is not None:
        return continue_lattice(spec, grid, seed, cfg, tol=tol)
    center = seed.base
    hw = 0.02 * max(float(np.max(np.abs(center))), 1e-3)
    last = None
    for _ in range(halvings + 1):
        g = GridSpec.around(spec, center, nodes, hw, transverse_nodes)
        field_ = continue_lattice(spec, g, seed, cfg, tol=tol)
        if not field_.failed.any():
            return field_
        last = field_
        hw *= 0.5
    return last


def uniformized_field_at(spec: SystemSpec, field_: LatticeField, m, i: int, cell=None) -> np.ndarray:
    """``Y_i(m) = sum_j lambda_i^j(F(m)) X_{f_j}(m)``."""
    m = np.asarray(m, dtype=float)
    coef = field_.coefficients(field_.base_of(m), i, cell)
    return coef @ spec.compiled.fields(m)


def uniformized_field(spec: SystemSpec, field_: LatticeField, i: int, around=None):
    """
    Callable ``x -> Y_i(x)``.

    With ``around`` set, the coefficients come from the grid cell holding
    ``F(around)`` for every ``x``; use this for difference stencils at
    ``around``, which would otherwise straddle the interpolant's kinks.
    """
    cell = None
    if around is not None:
        cell = cell_index(field_.grid.axes, field_.base_of(np.asarray(around, dtype=float)))
    return lambda x: uniformized_field_at(spec, field_, x, i, cell)


def periods_at(
    spec: SystemSpec, field_: LatticeField, m, cfg: FlowConfig = DEFAULT, tol: float = 1e-9
) -> np.ndarray:
    """
    Lattice basis of the fiber through ``m`` (rows ``lambda_i``).

    The interpolated basis at ``F(m)`` labels the rows; each is then
    refined to an exact return at ``m``.
    """
    m = np.asarray(m, dtype=float)
    guess = field_.lattice_at(field_.base_of(m))
    return np.array([refine_period(spec, m, row, cfg, tol=tol) for row in guess])


@dataclass
class TorusActionReport:
    point: np.ndarray
    period_defects: list
    poisson_residuals: list
    interpolation_gap: float = 0.0

    @property
    def max_period_defect(self) -> float:
        return max(self.period_defects)

    @property
    def max_poisson_residual(self) -> float:
        return max(self.poisson_residuals)

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "period_defects": list(self.period_defects),
            "poisson_residuals": list(self.poisson_residuals),
            "interpolation_gap": self.interpolation_gap,
        }


def check_torus_action(
    spec: SystemSpec, field_: LatticeField, m, cfg: FlowConfig = DEFAULT, tol: float = 1e-9
) -> TorusActionReport:
    """
    Period-1 and Poisson checks of the fields ``Y_i`` at ``m``.

    Each ``Y_i`` is integrated for unit time with the periods of the fiber
    through ``m`` (see :func:`periods_at`); ``interpolation_gap`` records
    how far the tabulated basis is from them.  The Schouten residual
    ``[Y_i, Pi](m)`` is computed by central differences of the tabulated
    field.
    """
    m = np.asarray(m, dtype=float)
    lam = periods_at(spec, field_, m, cfg, tol)
    gap = float(np.max(np.abs(lam - field_.lattice_at(field_.base_of(m)))))
    defects, residuals = [], []
    coef = np.zeros(spec.s)
    for i in range(spec.rank):
        coef[: spec.rank] = lam[i]
        x = flow_combination(spec, coef, m, 1.0, cfg)
        defects.append(float(np.linalg.norm(x - m)))
        L = lie_derivative_bivector(uniformized_field(spec, field_, i, m), spec.structure, m)
        residuals.append(float(np.max(np.abs(L))))
    return TorusActionReport(m, defects, residuals, gap)


def base_names(spec: SystemSpec) -> list:
    return [spec.function_names[k] for k in spec.base_order()]


def lattice_csv(field_: LatticeField) -> str:
    """One row per node: base values, ``lambda_i^j``, defect, failed flag."""
    spec = field_.spec
    r = spec.rank
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = base_names(spec)
    header += [f"lambda{i + 1}_{spec.function_names[j]}" for i in range(r) for j in range(r)]
    header += ["defect", "failed"]
    w.writerow(header)
    for idx in field_.grid.indices():
        row = [f"{v:.17g}" for v in field_.grid.node(idx)]
        row += [f"{v:.17g}" for v in field_.basis[idx].ravel()]
        row += [f"{field_.defects[idx]:.17g}", str(int(field_.failed[idx]))]
        w.writerow(row)
    return buf.getvalue()
