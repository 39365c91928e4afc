"""Froelicher-Nijenhuis operators and the compatibility bracket of two flows.

Brackets, torsions and the Haantjes tensor are available in two flavours:

* ``*_on(..., X, Y)`` evaluates the defining formula on genuine vector fields
  and returns a :class:`~fnhydro.calculus.VectorField`;
* the plain functions return a :class:`Bilinear12`, a pointwise evaluator on
  tangent vectors that uses constant-coefficient extensions of the vectors.
  That shortcut is only legitimate because these objects are tensorial, which
  the test-suite checks against the ``*_on`` forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import jet as J
from .calculus import (
    OneForm,
    ScalarField,
    Tensor11,
    TwoForm,
    VectorField,
    as_points,
    bracket_jet,
    compose11,
    exterior_d,
    grad,
    identity,
    insert11,
    pullback,
)
from .errors import CommutationError, DegenerateSpanError, DimensionError, TorsionError
from .jet import Jet2
from .sampling import DEFAULT_TOL, scale_of

__all__ = [
    "Bilinear12",
    "d_N",
    "fn_bracket",
    "fn_bracket_on",
    "fn_bracket_scaled_expansion",
    "nijenhuis_torsion",
    "torsion_on",
    "torsion_components",
    "haantjes",
    "haantjes_on",
    "t_m1_explicit",
    "compat_bracket",
    "recursion_tensors",
    "lemma_recursion_check",
    "structured_torsion_check",
    "structured_form_fit",
    "bidiff_anticommute_check",
    "require_torsion_free",
]


class Bilinear12:
    """A (1,2)-tensor evaluated pointwise: ``B(points, u, v) -> vectors``.

    ``u`` and ``v`` are either one vector per point, shape ``(P, n)``, or a
    single vector of shape ``(n,)`` used at every point.
    """

    def __init__(self, dim: int, evaluator: Callable, recipe: str):
        self.dim = dim
        self._evaluator = evaluator
        self.recipe = recipe

    def __repr__(self):
        return f"Bilinear12(dim={self.dim}, {self.recipe!r})"

    def __call__(self, points, u, v) -> np.ndarray:
        single = np.ndim(points) == 1
        pts = as_points(points, self.dim)
        P = pts.shape[0]
        U = np.broadcast_to(np.asarray(u, dtype=float), (P, self.dim))
        V = np.broadcast_to(np.asarray(v, dtype=float), (P, self.dim))
        out = self._evaluator(pts, U, V)
        return out[0] if single else out

    def components(self, points) -> np.ndarray:
        """``C[p, mu, a, b] = B(e_a, e_b)^mu`` at each point."""
        pts = as_points(points, self.dim)
        n = self.dim
        out = np.empty((pts.shape[0], n, n, n))
        eye = np.eye(n)
        for a in range(n):
            for b in range(n):
                out[:, :, a, b] = self(pts, eye[a], eye[b])
        return out

    def max_abs(self, points) -> float:
        return float(np.max(np.abs(self.components(points))))

    def _combine(self, other: "Bilinear12", sign: float, op: str) -> "Bilinear12":
        if other.dim != self.dim:
            raise DimensionError("dimension mismatch")
        a, b = self, other
        return Bilinear12(
            self.dim,
            lambda p, u, v: a._evaluator(p, u, v) + sign * b._evaluator(p, u, v),
            f"({a.recipe} {op} {b.recipe})",
        )

    def __add__(self, other):
        return self._combine(other, 1.0, "+")

    def __sub__(self, other):
        return self._combine(other, -1.0, "-")


# -- jet-level building blocks ---------------------------------------------


def _app(N: Jet2, X: Jet2) -> Jet2:
    return J.bilinear(N, X, "ij,j->i")


def _mat(A: Jet2, B: Jet2) -> Jet2:
    return J.bilinear(A, B, "ij,jk->ik")


def _br(X: Jet2, Y: Jet2) -> Jet2:
    return bracket_jet(X, Y)


def _const_vec(U: np.ndarray, n: int) -> Jet2:
    return J.constant(U, n, order=1)


def _fn_bracket_jet(N1: Jet2, N2: Jet2, X: Jet2, Y: Jet2) -> Jet2:
    """The five-term definition; all operand jets of order >= 1."""
    N1v, N2v = N1.truncate(N1.order - 1), N2.truncate(N2.order - 1)
    sym = _mat(N1v, N2v) + _mat(N2v, N1v)
    out = _app(sym, _br(X, Y))
    out = out + _br(_app(N1, X), _app(N2, Y)) + _br(_app(N2, X), _app(N1, Y))
    out = out - _app(N1v, _br(_app(N2, X), Y) + _br(X, _app(N2, Y)))
    out = out - _app(N2v, _br(_app(N1, X), Y) + _br(X, _app(N1, Y)))
    return out


def _torsion_jet(N: Jet2, X: Jet2, Y: Jet2) -> Jet2:
    """[NX,NY] + N(N[X,Y] - [NX,Y] - [X,NY])."""
    Nv = N.truncate(N.order - 1)
    NX, NY = _app(N, X), _app(N, Y)
    inner = _app(Nv, _br(X, Y)) - _br(NX, Y) - _br(X, NY)
    return _br(NX, NY) + _app(Nv, inner)


def _compat_jet(A: Jet2, B: Jet2, X: Jet2) -> Jet2:
    """[AX,BX] - A[X,BX] + B[X,AX]."""
    Av, Bv = A.truncate(A.order - 1), B.truncate(B.order - 1)
    AX, BX = _app(A, X), _app(B, X)
    return _br(AX, BX) - _app(Av, _br(X, BX)) + _app(Bv, _br(X, AX))


def _check(*fields):
    dims = {f.dim for f in fields}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


# -- d_N -------------------------------------------------------------------


def d_N(N: Tensor11, omega):
    """The degree-one derivation d_N = [N _|, d] on functions and 1-forms.

    ``d_N f = N^* df`` and ``d_N a = N _| da - d(N^* a)``.
    """
    _check(N, omega)
    if isinstance(omega, ScalarField):
        return pullback(N, grad(omega))
    if isinstance(omega, OneForm):
        return insert11(N, exterior_d(omega)) - exterior_d(pullback(N, omega))
    raise TypeError(f"d_N is implemented for functions and 1-forms, not {type(omega).__name__}")


# -- brackets and torsion --------------------------------------------------


def fn_bracket_on(N1: Tensor11, N2: Tensor11, X: VectorField, Y: VectorField) -> VectorField:
    n = _check(N1, N2, X, Y)
    return VectorField(
        n,
        lambda p, o: _fn_bracket_jet(N1.jet(p, o + 1), N2.jet(p, o + 1), X.jet(p, o + 1), Y.jet(p, o + 1)),
        max_order=min(N1.max_order, N2.max_order, X.max_order, Y.max_order) - 1,
        recipe=f"[{N1.recipe}, {N2.recipe}]_FN({X.recipe}, {Y.recipe})",
    )


def fn_bracket(N1: Tensor11, N2: Tensor11) -> Bilinear12:
    """Froelicher-Nijenhuis bracket [N1, N2]_FN as a pointwise (1,2)-tensor."""
    n = _check(N1, N2)

    def evaluate(p, U, V):
        out = _fn_bracket_jet(N1.jet(p, 1), N2.jet(p, 1), _const_vec(U, n), _const_vec(V, n))
        return out.value

    return Bilinear12(n, evaluate, f"[{N1.recipe}, {N2.recipe}]_FN")


def torsion_on(N: Tensor11, X: VectorField, Y: VectorField) -> VectorField:
    n = _check(N, X, Y)
    return VectorField(
        n,
        lambda p, o: _torsion_jet(N.jet(p, o + 1), X.jet(p, o + 1), Y.jet(p, o + 1)),
        max_order=min(N.max_order, X.max_order, Y.max_order) - 1,
        recipe=f"T({N.recipe})({X.recipe}, {Y.recipe})",
    )


def torsion_components(N: Tensor11, points) -> np.ndarray:
    """Index formula ``T[p, mu, nu, la] = T^mu_{nu la}``.

    T^mu_{nu la} = N^s_nu d_s N^mu_la - N^s_la d_s N^mu_nu
                   - N^mu_s (d_nu N^s_la - d_la N^s_nu)

    Kept independent of the bracket machinery; it serves as the oracle for
    :func:`nijenhuis_torsion`.
    """
    j = N.jet(points, 1)
    Nv, dN = j.value, j.grad  # dN[p, mu, nu, s] = d_s N^mu_nu
    t1 = np.einsum("psn,pmls->pmnl", Nv, dN)
    t2 = np.einsum("psl,pmns->pmnl", Nv, dN)
    # curl[p, s, nu, la] = d_nu N^s_la - d_la N^s_nu
    curl = np.einsum("psln->psnl", dN) - dN
    t3 = np.einsum("pms,psnl->pmnl", Nv, curl)
    return t1 - t2 - t3


def nijenhuis_torsion(N: Tensor11, method: str = "bracket") -> Bilinear12:
    """T(N)(u, v) = [NX,NY] + N(N[X,Y] - [NX,Y] - [X,NY]) at X=u, Y=v.

    ``method="coordinates"`` switches to the index formula of
    :func:`torsion_components`.
    """
    n = N.dim
    if method == "bracket":
        def evaluate(p, U, V):
            return _torsion_jet(N.jet(p, 1), _const_vec(U, n), _const_vec(V, n)).value

        return Bilinear12(n, evaluate, f"T({N.recipe})")
    if method == "coordinates":
        def evaluate(p, U, V):
            return np.einsum("pmnl,pn,pl->pm", torsion_components(N, p), U, V)

        return Bilinear12(n, evaluate, f"T({N.recipe})[coords]")
    raise ValueError(f"unknown method {method!r}")


def haantjes(M: Tensor11, torsion: Bilinear12 | None = None) -> Bilinear12:
    """H(M)(u,v) = M^2 T(u,v) + T(Mu,Mv) - M(T(Mu,v) + T(u,Mv)), T = T(M)."""
    n = M.dim
    T = torsion or nijenhuis_torsion(M)

    def evaluate(p, U, V):
        Mv = M.jet(p, 0).value
        MU = np.einsum("pij,pj->pi", Mv, U)
        MV = np.einsum("pij,pj->pi", Mv, V)
        t = T._evaluator
        inner = t(p, MU, V) + t(p, U, MV)
        out = np.einsum("pij,pj->pi", Mv, np.einsum("pij,pj->pi", Mv, t(p, U, V)))
        return out + t(p, MU, MV) - np.einsum("pij,pj->pi", Mv, inner)

    return Bilinear12(n, evaluate, f"H({M.recipe})")


def haantjes_on(M: Tensor11, X: VectorField, Y: VectorField) -> VectorField:
    M2 = compose11(M, M)
    MX, MY = M @ X, M @ Y
    return (M2 @ torsion_on(M, X, Y) + torsion_on(M, MX, MY)
            - M @ (torsion_on(M, MX, Y) + torsion_on(M, X, MY)))


def t_m1_explicit(N: Tensor11, a0: ScalarField) -> Bilinear12:
    """Closed form of T(N - a0 I) = -[N, a0 I]_FN for torsion-free N.

    T(u, v) = da0(Nv) u - da0(Nu) v - da0(v) Nu + da0(u) Nv
    """
    n = _check(N, a0)
    da0 = grad(a0)

    def evaluate(p, U, V):
        Nv = N.jet(p, 0).value
        d = da0.jet(p, 0).value
        NU = np.einsum("pij,pj->pi", Nv, U)
        NV = np.einsum("pij,pj->pi", Nv, V)

        def f(w):
            return np.einsum("pi,pi->p", d, w)[:, None]

        return f(NV) * U - f(NU) * V - f(V) * NU + f(U) * NV

    return Bilinear12(n, evaluate, f"T_explicit({N.recipe} - {a0.recipe} I)")


def fn_bracket_scaled_expansion(f1: ScalarField, N1: Tensor11, f2: ScalarField, N2: Tensor11) -> Bilinear12:
    """Right-hand side of the expansion of [f1 N1, f2 N2]_FN."""
    n = _check(f1, N1, f2, N2)
    base = fn_bracket(N1, N2)
    df1, df2 = grad(f1), grad(f2)

    def evaluate(p, U, V):
        a1, a2 = N1.jet(p, 0).value, N2.jet(p, 0).value
        v1, v2 = f1.jet(p, 0).value[:, None], f2.jet(p, 0).value[:, None]
        g1, g2 = df1.jet(p, 0).value, df2.jet(p, 0).value

        def ap(A, w):
            return np.einsum("pij,pj->pi", A, w)

        def ev(g, w):
            return np.einsum("pi,pi->p", g, w)[:, None]

        A12, A21 = a1 @ a2, a2 @ a1
        term1 = ev(g2, ap(a1, U)) * ap(a2, V) - ev(g2, U) * ap(A12, V) \
            - ev(g2, ap(a1, V)) * ap(a2, U) + ev(g2, V) * ap(A12, U)
        term2 = ev(g1, ap(a2, U)) * ap(a1, V) - ev(g1, U) * ap(A21, V) \
            - ev(g1, ap(a2, V)) * ap(a1, U) + ev(g1, V) * ap(A21, U)
        return v1 * v2 * base._evaluator(p, U, V) + v1 * term1 + v2 * term2

    return Bilinear12(n, evaluate, f"expansion[{f1.recipe} {N1.recipe}, {f2.recipe} {N2.recipe}]_FN")


def compat_bracket(A: Tensor11, B: Tensor11, X: VectorField) -> VectorField:
    """[A,B]_X = [AX,BX] - A[X,BX] + B[X,AX] (not tensorial in X)."""
    n = _check(A, B, X)
    return VectorField(
        n,
        lambda p, o: _compat_jet(A.jet(p, o + 1), B.jet(p, o + 1), X.jet(p, o + 1)),
        max_order=min(A.max_order, B.max_order, X.max_order) - 1,
        recipe=f"[{A.recipe}, {B.recipe}]_{X.recipe}",
    )


def require_torsion_free(N: Tensor11, points, tol: float = DEFAULT_TOL) -> float:
    """Raise :class:`TorsionError` unless T(N) vanishes on ``points``."""
    comps = torsion_components(N, points)
    res = float(np.max(np.abs(comps))) / scale_of(N.values(points))
    if res > tol:
        raise TorsionError("operator has non-vanishing Nijenhuis torsion", res)
    return res


# -- checks ----------------------------------------------------------------


def recursion_tensors(N: Tensor11, A_list: Sequence[Tensor11]) -> list:
    """M_0 = I, M_{k+1} = N M_k + A_k."""
    M = [identity(N.dim)]
    for A in A_list:
        M.append(compose11(N, M[-1]) + A)
    return M


def lemma_recursion_check(N, A_list, M_list, X: VectorField, i: int, j: int, points,
                          tol: float | None = DEFAULT_TOL) -> float:
    """Relative residual of the bracket recursion for M_{k+1} = N M_k + A_k.

    LHS [M_{i+1}, M_{j+1}]_X against
    -N^2 [M_i,M_j]_X + N([M_{i+1},M_j]_X - [M_{j+1},M_i]_X - [A_i,M_j]_X + [A_j,M_i]_X)
    + [M_{i+1},A_j]_X - [M_{j+1},A_i]_X - [A_i,A_j]_X.
    """
    pts = as_points(points, N.dim)
    if tol is not None:
        require_torsion_free(N, pts, tol)
    if len(M_list) < max(i, j) + 2 or len(A_list) < max(i, j) + 1:
        raise ValueError("not enough tensors in the recursion for these indices")
    Nj = N.jet(pts, 0).value
    Xj = X.jet(pts, 1)
    jets = {}

    def tj(T):
        key = id(T)
        if key not in jets:
            jets[key] = T.jet(pts, 1)
        return jets[key]

    def cb(A, B):
        return _compat_jet(tj(A), tj(B), Xj).value

    Mi, Mj, Mi1, Mj1 = M_list[i], M_list[j], M_list[i + 1], M_list[j + 1]
    Ai, Aj = A_list[i], A_list[j]
    lhs = cb(Mi1, Mj1)
    inner = cb(Mi1, Mj) - cb(Mj1, Mi) - cb(Ai, Mj) + cb(Aj, Mi)
    t_n2 = -np.einsum("pij,pjk,pk->pi", Nj, Nj, cb(Mi, Mj))
    t_n = np.einsum("pij,pj->pi", Nj, inner)
    rest = cb(Mi1, Aj) - cb(Mj1, Ai) - cb(Ai, Aj)
    rhs = t_n2 + t_n + rest
    return float(np.max(np.abs(lhs - rhs))) / scale_of(lhs, t_n2, t_n, rest)


@dataclass
class SpanReport:
    in_span: bool
    residual: float
    resampled: int
    points: int


def _powers_at(Nv: np.ndarray, m: int) -> list:
    out = [np.eye(Nv.shape[0])]
    for _ in range(m):
        out.append(Nv @ out[-1])
    return out


def _require_commuting(M: Tensor11, N: Tensor11, pts, tol):
    Mv, Nv = M.values(pts), N.values(pts)
    comm = Mv @ Nv - Nv @ Mv
    res = float(np.max(np.abs(comm))) / scale_of(Mv @ Nv)
    if res > tol:
        raise CommutationError(f"M and N do not commute (residual {res:.3e})")


def structured_torsion_check(M: Tensor11, N: Tensor11, m: int, points, rng=None,
                             tol: float = DEFAULT_TOL, max_resample: int = 20) -> SpanReport:
    """Does T(M)(u, v) lie in span{N^i u, N^i v : i <= m} for random u, v?

    Uses column-pivoted QR; columns whose pivot falls below ``1e-10`` of the
    largest are dropped.  A retained pivot below ``1e-6`` of the largest marks
    the draw as span-degenerate and the vectors are redrawn.
    """
    n = _check(M, N)
    pts = as_points(points, n)
    rng = rng if rng is not None else np.random.default_rng(0)
    _require_commuting(M, N, pts, tol)
    Nv = N.values(pts)
    resampled = 0
    U = np.empty((pts.shape[0], n))
    V = np.empty_like(U)
    bases = []
    for k in range(pts.shape[0]):
        powers = _powers_at(Nv[k], m)
        for attempt in range(max_resample + 1):
            u, v = rng.standard_normal(n), rng.standard_normal(n)
            cols = np.column_stack([Pk @ w for Pk in powers for w in (u, v)])
            Q, R, _ = scipy.linalg.qr(cols, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            if diag[0] == 0:
                break
            keep = diag > 1e-10 * diag[0]
            if np.all(diag[keep] > 1e-6 * diag[0]):
                break
            resampled += 1
        else:
            raise DegenerateSpanError(f"span degenerate at sample point {k}")
        r = int(np.sum(diag > 1e-10 * diag[0])) if diag[0] != 0 else 0
        U[k], V[k] = u, v
        bases.append(Q[:, :r])
    T = nijenhuis_torsion(M)(pts, U, V)  # one batched evaluation
    perp = np.array([np.linalg.norm(t - B @ (B.T @ t)) for t, B in zip(T, bases)])
    worst = float(np.max(perp)) / max(1.0, float(np.max(np.linalg.norm(T, axis=1))))
    return SpanReport(in_span=worst <= tol, residual=worst, resampled=resampled, points=len(pts))


def structured_form_fit(M: Tensor11, N: Tensor11, m: int, points, tol: float = DEFAULT_TOL) -> float:
    """Fit T(M)(X,Y) = sum_i phi_i(Y) N^i X - phi_i(X) N^i Y with covectors phi_i.

    Stronger than the span test: the coefficient of N^i X must be one linear
    functional of Y, the same one (with opposite sign) that multiplies N^i Y.
    Returns the worst relative least-squares residual over the points.
    """
    n = _check(M, N)
    pts = as_points(points, n)
    _require_commuting(M, N, pts, tol)
    C = nijenhuis_torsion(M).components(pts)  # C[p, mu, a, b] = T(e_a, e_b)^mu
    Nv = N.values(pts)
    eye = np.eye(n)
    worst = 0.0
    for k in range(pts.shape[0]):
        powers = _powers_at(Nv[k], m)
        rows, rhs = [], []
        for a in range(n):
            for b in range(a + 1, n):
                # unknowns phi[i, c]; T(e_a,e_b) = sum_i phi_i[b] N^i e_a - phi_i[a] N^i e_b
                block = np.zeros((n, (m + 1) * n))
                for i, Pk in enumerate(powers):
                    block[:, i * n + b] += Pk @ eye[a]
                    block[:, i * n + a] -= Pk @ eye[b]
                rows.append(block)
                rhs.append(C[k, :, a, b])
        A = np.vstack(rows)
        y = np.concatenate(rhs)
        sol, *_ = np.linalg.lstsq(A, y, rcond=None)
        res = np.linalg.norm(A @ sol - y) / max(1.0, np.linalg.norm(y))
        worst = max(worst, float(res))
    return worst


def bidiff_anticommute_check(N1: Tensor11, N2: Tensor11, f: ScalarField, points) -> float:
    """Relative size of d_{N1} d_{N2} f + d_{N2} d_{N1} f."""
    pts = as_points(points, _check(N1, N2, f))
    a = d_N(N1, d_N(N2, f)).values(pts)
    b = d_N(N2, d_N(N1, f)).values(pts)
    return float(np.max(np.abs(a + b))) / scale_of(a, b)
