"""
Poisson-algebra core
====================

Brackets, Hamiltonian vector fields, Jacobi-identity certification,
pointwise rank, the coordinate Schouten bracket ``[Y, Pi]`` by finite
differences, and polar subspaces of covector spaces.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

from . import codegen
from .expr import (
    ZERO,
    Binary,
    Const,
    Expr,
    Unary,
    Var,
    canonical_zero,
    differentiate,
    evaluate,
    free_variables,
    is_zero,
    parse,
    simplify,
    to_string,
)


class CoordinateMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PoissonStructure:
    """
    Bivector ``Pi`` on ``R^n`` given by its upper-triangular entries.

    ``upper`` maps ``(i, j)`` with ``i < j`` to the expression ``Pi^{ij}``;
    omitted entries are zero.  Antisymmetry holds by construction.
    """

    coords: tuple
    upper: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        clean = {}
        for (i, j), e in dict(self.upper).items():
            if not 0 <= i < j < len(self.coords):
                raise ValueError(f"entry ({i}, {j}) is not strictly upper-triangular")
            _check_coords(self, e)
            if not is_zero(e):
                clean[(i, j)] = e
        object.__setattr__(self, "upper", dict(sorted(clean.items())))

    @classmethod
    def from_text(cls, coords: Sequence[str], entries: Mapping) -> "PoissonStructure":
        """
        Build from ``{(name_a, name_b): "expr"}``; pairs in either order
        (a reversed pair stores the negated expression).
        """
        coords = tuple(coords)
        index = {c: k for k, c in enumerate(coords)}
        upper = {}
        for (a, b), text in entries.items():
            i, j = index[a], index[b]
            e = parse(text, coords) if isinstance(text, str) else text
            if i > j:
                i, j = j, i
                e = Unary("neg", e)
            if (i, j) in upper:
                raise ValueError(f"duplicate entry for ({coords[i]}, {coords[j]})")
            upper[(i, j)] = e
        return cls(coords, upper)

    @property
    def n(self) -> int:
        return len(self.coords)

    def entry(self, i: int, j: int) -> Expr:
        if i == j:
            return ZERO
        if i < j:
            return self.upper.get((i, j), ZERO)
        e = self.upper.get((j, i), ZERO)
        return ZERO if is_zero(e) else simplify(Unary("neg", e))

    def var(self, k: int) -> Var:
        return Var(self.coords[k], k)

    @cached_property
    def _matrix_fn(self):
        n = self.n
        exprs = [self.entry(i, j) if i < j else None for i in range(n) for j in range(n)]
        return codegen.array_function(exprs, (n, n), name="pi_upper")

    def matrix(self, x) -> np.ndarray:
        """Antisymmetric matrix ``Pi(x)``."""
        A = self._matrix_fn(np.asarray(x, dtype=float))
        return A - A.T

    @cached_property
    def _derivative_fn(self):
        n = self.n
        exprs = []
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    exprs.append(
                        differentiate(self.entry(i, j), self.coords[k]) if i < j else None
                    )
        return codegen.array_function(exprs, (n, n, n), name="dpi_upper")

    def matrix_derivative(self, x) -> np.ndarray:
        """Array ``D[i, j, k] = d Pi^{ij} / d x_k``."""
        D = self._derivative_fn(np.asarray(x, dtype=float))
        return D - D.transpose(1, 0, 2)


def _check_coords(P: PoissonStructure, e: Expr) -> None:
    for name, k in free_variables(e):
        if k >= len(P.coords) or P.coords[k] != name:
            raise CoordinateMismatchError(
                f"{name!r} (index {k}) is not a coordinate of {P.coords}"
            )


def gradient(P: PoissonStructure, f: Expr) -> list:
    _check_coords(P, f)
    return [differentiate(f, c) for c in P.coords]


def _bracket_from_gradients(P, df, dg) -> Expr:
    total = ZERO
    for (i, j), pij in P.upper.items():
        inner = simplify(
            Binary("-", Binary("*", df[i], dg[j]), Binary("*", df[j], dg[i]))
        )
        if is_zero(inner):
            continue
        total = Binary("+", total, Binary("*", pij, inner))
    return canonical_zero(total)


def poisson_bracket(P: PoissonStructure, f: Expr, g: Expr) -> Expr:
    """
    ``{f, g} = sum_{i<j} Pi^{ij} (d_i f d_j g - d_j f d_i g)``, simplified.

    Identically-zero polynomial results are returned as the zero node.
    """
    return _bracket_from_gradients(P, gradient(P, f), gradient(P, g))


@dataclass(frozen=True)
class VectorFieldExpr:
    components: tuple

    def __len__(self):
        return len(self.components)

    def at(self, x) -> np.ndarray:
        return np.array([evaluate(c, x) for c in self.components])


def hamiltonian_vector_field(P: PoissonStructure, h: Expr) -> VectorFieldExpr:
    """Components ``X_h[x_i] = {x_i, h}``."""
    dh = gradient(P, h)
    comps = []
    for i in range(P.n):
        dxi = [Const(1.0) if k == i else ZERO for k in range(P.n)]
        comps.append(_bracket_from_gradients(P, dxi, dh))
    return VectorFieldExpr(tuple(comps))


def jacobiator(P: PoissonStructure, f: Expr, g: Expr, h: Expr) -> Expr:
    """``{f,{g,h}} + {g,{h,f}} + {h,{f,g}}``, simplified."""
    terms = [
        poisson_bracket(P, f, poisson_bracket(P, g, h)),
        poisson_bracket(P, g, poisson_bracket(P, h, f)),
        poisson_bracket(P, h, poisson_bracket(P, f, g)),
    ]
    return canonical_zero(Binary("+", Binary("+", terms[0], terms[1]), terms[2]))


@dataclass
class TripleResult:
    triple: tuple
    symbolic_zero: bool
    max_abs: float
    witness: np.ndarray | None
    expression: str


@dataclass
class PoissonReport:
    passed: bool
    tol: float
    max_residual: float
    witness: np.ndarray | None
    triples: list

    @property
    def all_symbolic(self) -> bool:
        return all(t.symbolic_zero for t in self.triples)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "max_residual": self.max_residual,
            "witness": None if self.witness is None else list(map(float, self.witness)),
            "all_symbolic_zero": self.all_symbolic,
            "triples": [
                {
                    "triple": list(t.triple),
                    "symbolic_zero": t.symbolic_zero,
                    "max_abs": t.max_abs,
                    "expression": t.expression,
                }
                for t in self.triples
            ],
        }


def verify_poisson(
    P: PoissonStructure, lo, hi, n_samples: int = 100, tol: float = 1e-9, seed: int = 0
) -> PoissonReport:
    """
    Jacobi identity on all coordinate triples ``i < j < k``.

    By the Leibniz rule the coordinate triples suffice.  Each jacobiator is
    built symbolically (and flagged when it folds to zero) and evaluated at
    ``n_samples`` uniform points of the box ``[lo, hi]``.
    """
    rng = np.random.default_rng(seed)
    points = rng.uniform(np.asarray(lo, float), np.asarray(hi, float), size=(n_samples, P.n))
    results = []
    worst, witness = 0.0, None
    for i, j, k in itertools.combinations(range(P.n), 3):
        J = jacobiator(P, P.var(i), P.var(j), P.var(k))
        sym = is_zero(J)
        tmax, twit = 0.0, None
        if not sym:
            fn = codegen.array_function([J], (1,), name="jac")
            for x in points:
                v = abs(fn(x)[0])
                if not np.isfinite(v) or v > tmax:
                    tmax, twit = (np.inf if not np.isfinite(v) else v), x
        results.append(TripleResult((i, j, k), sym, tmax, twit, to_string(J)))
        if tmax > worst or witness is None and twit is not None:
            worst, witness = tmax, twit
    return PoissonReport(bool(worst < tol), tol, float(worst), witness, results)


def singular_values(A) -> np.ndarray:
    return np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)


def numerical_rank(A, tol: float) -> tuple:
    """
    Rank with relative threshold ``tol * max(s_max, 1)`` and the gap
    ``(smallest kept, largest dropped)`` singular values.
    """
    s = singular_values(A)
    if s.size == 0:
        return 0, (np.inf, 0.0)
    thresh = tol * max(s[0], 1.0)
    rank = int(np.sum(s > thresh))
    kept = s[rank - 1] if rank > 0 else np.inf
    dropped = s[rank] if rank < s.size else 0.0
    return rank, (float(kept), float(dropped))


def rank_at(P: PoissonStructure, m, tol: float = 1e-9) -> int:
    """Numerical rank of ``Pi(m)``; always even."""
    rank, _ = numerical_rank(P.matrix(m), tol)
    assert rank % 2 == 0, f"odd rank {rank} for an antisymmetric matrix"
    return rank


def rank_with_gap(P: PoissonStructure, m, tol: float = 1e-9) -> tuple:
    return numerical_rank(P.matrix(m), tol)


def antisymmetrize(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - A.T)


def jacobian_fd(Y: Callable, m, h_step: float = 1e-5) -> np.ndarray:
    """Central differences ``J[i, k] = d Y^i / d x_k`` with step ``h_step * max(1, |m_k|)``."""
    m = np.asarray(m, dtype=float)
    cols = []
    for k in range(m.size):
        h = h_step * max(1.0, abs(m[k]))
        e = np.zeros_like(m)
        e[k] = h
        cols.append((np.asarray(Y(m + e)) - np.asarray(Y(m - e))) / (2 * h))
    return np.array(cols).T


def lie_derivative_bivector(
    Y: Callable, P: PoissonStructure, m, h_step: float = 1e-5
) -> np.ndarray:
    """
    Pointwise Schouten bracket ``[Y, Pi]`` at ``m``.

    ``[Y,Pi]^{ij} = sum_k Y^k d_k Pi^{ij} - Pi^{kj} d_k Y^i - Pi^{ik} d_k Y^j``
    with ``d_k Pi`` exact and ``d_k Y`` central-differenced.
    """
    m = np.asarray(m, dtype=float)
    Ym = np.asarray(Y(m), dtype=float)
    dY = jacobian_fd(Y, m, h_step)
    A = P.matrix(m)
    D = P.matrix_derivative(m)
    L = D @ Ym - dY @ A - A @ dY.T
    return antisymmetrize(L)


def null_space(M, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the null space, relative tolerance."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    u, s, vt = np.linalg.svd(M)
    thresh = tol * max(s[0] if s.size else 0.0, 1.0)
    rank = int(np.sum(s > thresh))
    return vt[rank:].T.copy()


def polar_subspace(B, covectors, tol: float = 1e-10) -> np.ndarray:
    """
    Orthonormal basis of ``{xi : B(xi, sigma) = 0 for sigma in span(covectors)}``.

    ``B`` is the antisymmetric matrix of the bivector at a point and
    ``covectors`` an iterable of length-``n`` vectors spanning the subspace.
    """
    B = np.asarray(B, dtype=float)
    S = np.atleast_2d(np.asarray(covectors, dtype=float))
    if S.shape[1] != B.shape[0]:
        S = S.T
    # xi^T B sigma_l = 0 for all l  <=>  (B S^T)^T xi = 0
    M = (B @ S.T).T
    return null_space(M, tol)


def span_basis(vectors, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the given vectors (rows)."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    u, s, vt = np.linalg.svd(V, full_matrices=False)
    thresh = tol * max(s[0] if s.size else 0.0, 1.0)
    rank = int(np.sum(s > thresh))
    return vt[:rank].T.copy()


def subspace_angle(A, B) -> float:
    """Largest principal angle between the column spans of ``A`` and ``B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] != B.shape[1]:
        return float(np.pi / 2)
    if A.shape[1] == 0:
        return 0.0
    return float(np.max(scipy.linalg.subspace_angles(A, B)))
