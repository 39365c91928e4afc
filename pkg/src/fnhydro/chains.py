"""Lenard chains and Lorenzoni-Magri chains of conservation laws.

Both chains produce scalars ``a_k`` whose differentials are known in closed
form (``(N^*)^k da_0`` for Lenard, ``M_k^* da_0`` for Lorenzoni-Magri), while
the values themselves are potentials that must be integrated.  Values are
computed along the straight segment from the basepoint; derivatives always
come from the attached exact 1-forms, never from the quadrature.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.integrate import quad_vec

from .calculus import (
    OneForm,
    ScalarField,
    Tensor11,
    as_points,
    compose11,
    exterior_d,
    grad,
    identity,
    pullback,
    wedge,
)
from .errors import (
    ChainInconsistencyError,
    NotClosedError,
    QuadratureError,
    SeedConditionError,
)
from .exprdsl import Expr, parse
from .fntheory import d_N, require_torsion_free
from .ode import dopri5
from .sampling import DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, Domain, scale_of

__all__ = [
    "BiclosedReport",
    "ChainState",
    "is_biclosed",
    "closedness_residual",
    "potential",
    "lenard_chain",
    "lm_chain",
    "eval_chain_at",
    "covariant_dN",
    "covariant_dN_check",
    "conservation_pair",
    "export_chain",
    "MAX_DEPTH",
]

MAX_DEPTH = 12
QUAD_TOL = 1e-10
ODE_TOL = 1e-10
CLOSED_FORM_TOL = 1e-7


@dataclass(frozen=True)
class BiclosedReport:
    closed: bool
    n_closed: bool
    closed_residual: float
    n_closed_residual: float

    @property
    def biclosed(self) -> bool:
        return self.closed and self.n_closed


def closedness_residual(rho: OneForm, points) -> float:
    """max |d rho| relative to the size of the first derivatives of rho."""
    pts = as_points(points, rho.dim)
    j = rho.jet(pts, 1)
    d = exterior_d(rho).values(pts)
    return float(np.max(np.abs(d))) / scale_of(j.grad)


def is_biclosed(rho: OneForm, N: Tensor11, points, tol: float = DEFAULT_TOL) -> BiclosedReport:
    """Check d rho = 0 and d_N rho = 0 on sample points."""
    pts = as_points(points, rho.dim)
    d = exterior_d(rho).values(pts)
    dn = d_N(N, rho).values(pts)
    scale = scale_of(rho.jet(pts, 1).grad, pullback(N, rho).jet(pts, 1).grad)
    r1 = float(np.max(np.abs(d))) / scale
    r2 = float(np.max(np.abs(dn))) / scale
    return BiclosedReport(r1 <= tol, r2 <= tol, r1, r2)


def _segment_integral(rho: OneForm, basepoint: np.ndarray, pts: np.ndarray, tol: float) -> np.ndarray:
    D = pts - basepoint

    def integrand(s):
        q = basepoint + s * D
        return np.einsum("pi,pi->p", rho.values(q), D)

    res, err, info = quad_vec(integrand, 0.0, 1.0, epsabs=tol, epsrel=1e-14, norm="max",
                              full_output=True)
    if not info.success:
        raise QuadratureError(f"segment quadrature did not converge (error estimate {err:.3e})")
    return np.asarray(res, dtype=float)


def potential(rho: OneForm, basepoint, domain: Domain | None = None, *,
              tol_closed: float = DEFAULT_TOL, samples: int = DEFAULT_SAMPLES,
              seed: int = DEFAULT_SEED, quad_tol: float = QUAD_TOL, check: bool = True,
              recipe: str | None = None) -> ScalarField:
    """Integral-backed potential ``a`` of a closed 1-form with ``a(basepoint) = 0``.

    ``a(p)`` is the integral of ``rho`` along the straight segment from the
    basepoint to ``p`` (adaptive quadrature).  Requires a domain star-shaped
    about the basepoint.  The returned field's gradient is ``rho`` itself.
    """
    b = np.asarray(basepoint, dtype=float)
    if b.shape != (rho.dim,):
        raise ValueError("basepoint has the wrong dimension")
    domain = domain or Domain.default(rho.dim)
    if check:
        res = closedness_residual(rho, domain.sample(samples, seed))
        if res > tol_closed:
            raise NotClosedError("1-form is not closed; no potential exists", res)

    def value(pts):
        return _segment_integral(rho, b, pts, quad_tol)

    return ScalarField.integral(rho.dim, value, rho, recipe=recipe or f"int {rho.recipe}")


class _Sweeper:
    """Solves the triangular ray ODE for a_1..a_K of a Lorenzoni-Magri chain.

    Along gamma(s) = b + s (p - b):  d a_k / ds = <M_k^* da_0, gamma'>, with
    M_k assembled from N and the a_j (j < k) carried in the state.
    """

    def __init__(self, N: Tensor11, a0: ScalarField, K: int, basepoint: np.ndarray, tol: float):
        self.N, self.a0, self.K, self.b, self.tol = N, a0, K, basepoint, tol
        self.da0 = grad(a0)
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.evaluations = 0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        key = (pts.shape, pts.tobytes())
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        out = self._solve(pts)
        with self._lock:
            self._cache[key] = out
            while len(self._cache) > 16:
                self._cache.popitem(last=False)
        return out

    def _solve(self, pts: np.ndarray) -> np.ndarray:
        P, n = pts.shape
        D = pts - self.b
        eye = np.eye(n)
        K = self.K

        def rhs(s, A):
            q = self.b + s * D
            Nv = self.N.values(q)
            a0v = self.a0.values(q)
            g0 = self.da0.values(q)
            out = np.empty_like(A)
            M = np.broadcast_to(eye, (P, n, n))
            prev = a0v
            for k in range(1, K + 1):
                M = Nv @ M - prev[:, None, None] * eye
                out[:, k - 1] = np.einsum("pi,pij,pj->p", g0, M, D)
                prev = A[:, k - 1]
            return out

        self.evaluations += 1
        values = np.empty((P, K + 1))
        values[:, 0] = self.a0.values(pts)
        if K:
            A, _ = dopri5(rhs, np.zeros((P, K)), 0.0, 1.0, rtol=self.tol, atol=self.tol)
            values[:, 1:] = A
        return values


@dataclass(frozen=True)
class ChainState:
    """a_0..a_K (and M_0..M_K for Lorenzoni-Magri) with their provenance."""

    kind: str  # "lenard" | "lorenzoni-magri"
    N: Tensor11
    a: tuple
    M: tuple | None
    basepoint: np.ndarray
    K: int
    domain: Domain
    provenance: tuple
    certificates: dict = field(default_factory=dict)
    sweeper: object = None

    @property
    def rho(self) -> tuple:
        """The exact differentials da_0..da_K."""
        return tuple(grad(a) for a in self.a)

    def values(self, points) -> np.ndarray:
        """a_0..a_K at a batch of points, shape ``(P, K+1)``."""
        pts = as_points(points, self.N.dim)
        if self.sweeper is not None and all(p.startswith("ray-ode") for p in self.provenance[1:]):
            return self.sweeper(pts)
        return np.column_stack([a.values(pts) for a in self.a])


def _check_depth(K: int, max_depth: int):
    if K < 0:
        raise ValueError("depth must be non-negative")
    if K > max_depth:
        raise ValueError(f"depth {K} exceeds the cap {max_depth}")


def lenard_chain(N: Tensor11, a0: ScalarField, K: int, basepoint=None, domain: Domain | None = None, *,
                 samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED, tol: float = DEFAULT_TOL,
                 tol_closed: float = DEFAULT_TOL, quad_tol: float = QUAD_TOL,
                 max_depth: int = MAX_DEPTH) -> ChainState:
    """da_{k+1} = d_N a_k, i.e. da_k = (N^*)^k da_0, with a_k(basepoint) = 0 for k >= 1."""
    _check_depth(K, max_depth)
    n = N.dim
    domain = domain or Domain.default(n)
    b = np.asarray(domain.basepoint if basepoint is None else basepoint, dtype=float)
    pts = domain.sample(samples, seed)
    torsion = require_torsion_free(N, pts, tol)
    rho = grad(a0)
    seed_res = closedness_residual(pullback(N, rho), pts)
    if seed_res > tol_closed:
        raise SeedConditionError("seed violates d d_N a_0 = 0", seed_res)
    a = [a0]
    provenance = ["expression" if a0.backing == "expression" else a0.backing]
    reports = []
    for k in range(1, K + 1):
        rho = pullback(N, rho)
        a.append(potential(rho, b, domain, check=False, quad_tol=quad_tol, recipe=f"a_{k}"))
        provenance.append("segment-quadrature")
        reports.append(is_biclosed(rho, N, pts, tol_closed))
    bad = [k + 1 for k, r in enumerate(reports) if not r.biclosed]
    if bad:
        worst = max(max(r.closed_residual, r.n_closed_residual) for r in reports)
        raise ChainInconsistencyError(f"Lenard 1-forms rho_{bad} are not bi-closed", worst)
    certs = {
        "torsion": torsion,
        "seed": seed_res,
        "biclosed": [max(r.closed_residual, r.n_closed_residual) for r in reports],
    }
    return ChainState("lenard", N, tuple(a), None, b, K, domain, tuple(provenance), certs)


def lm_chain(N: Tensor11, a0: ScalarField, K: int, basepoint=None, domain: Domain | None = None, *,
             samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED, tol: float = DEFAULT_TOL,
             tol_closed: float = DEFAULT_TOL, ode_tol: float = ODE_TOL,
             closed_forms: Mapping[int, str | Expr] | None = None,
             max_depth: int = MAX_DEPTH) -> ChainState:
    """M_0 = I, M_{k+1} = N M_k - a_k I, da_k = M_k^* da_0, a_k(basepoint) = 0.

    ``closed_forms`` optionally maps ``k`` to an expression for ``a_k``.  Each
    is checked against the ray-ODE values at the sample points (relative
    ``1e-7``) and then replaces the integral-backed field, a fast path for
    repeated evaluation (e.g. inside a PDE solver).
    """
    _check_depth(K, max_depth)
    n = N.dim
    domain = domain or Domain.default(n)
    b = np.asarray(domain.basepoint if basepoint is None else basepoint, dtype=float)
    pts = domain.sample(samples, seed)
    torsion = require_torsion_free(N, pts, tol)
    sweeper = _Sweeper(N, a0, K, b, ode_tol)
    da0 = grad(a0)
    eye = identity(n)
    a = [a0]
    M = [eye]
    provenance = ["expression" if a0.backing == "expression" else a0.backing]
    closed = []
    for k in range(1, K + 1):
        M.append(compose11(N, M[-1]) - a[-1] * eye)
        rho = pullback(M[-1], da0)
        res = closedness_residual(rho, pts)
        closed.append(res)
        if res > tol_closed:
            cls = SeedConditionError if k == 1 else ChainInconsistencyError
            raise cls(f"M_{k}^* da_0 is not closed", res)
        a.append(ScalarField.integral(n, lambda p, k=k: sweeper(p)[:, k], rho, recipe=f"a_{k}"))
        provenance.append("ray-ode")

    checks = {}
    if closed_forms:
        ref = sweeper(pts)
        exprs = {}
        for k, src in closed_forms.items():
            k = int(k)
            if not 1 <= k <= K:
                raise ValueError(f"closed form for a_{k} outside 1..{K}")
            e = src if isinstance(src, Expr) else parse(str(src), n)
            got = e(pts)
            dev = float(np.max(np.abs(got - ref[:, k]))) / scale_of(ref[:, k])
            if dev > CLOSED_FORM_TOL:
                raise ChainInconsistencyError(f"closed form for a_{k} disagrees with the ray ODE", dev)
            checks[k] = dev
            exprs[k] = e
        a = [a0]
        M = [eye]
        for k in range(1, K + 1):
            M.append(compose11(N, M[-1]) - a[-1] * eye)
            if k in exprs:
                a.append(ScalarField.from_expr(exprs[k]))
                provenance[k] = "closed-form (checked against ray-ode)"
            else:
                a.append(ScalarField.integral(n, lambda p, k=k: sweeper(p)[:, k],
                                              pullback(M[-1], da0), recipe=f"a_{k}"))
    certs = {"torsion": torsion, "closed": closed, "closed_form_deviation": checks}
    return ChainState("lorenzoni-magri", N, tuple(a), tuple(M), b, K, domain,
                      tuple(provenance), certs, sweeper)


def eval_chain_at(chain: ChainState, p) -> np.ndarray:
    """a_0(p), ..., a_K(p) in one sweep along the segment from the basepoint."""
    p = np.asarray(p, dtype=float)
    return chain.values(p[None, :])[0]


def covariant_dN(chain: ChainState, omega):
    """D_N = d_N - da_0 ^ on functions and 1-forms."""
    da0 = grad(chain.a[0])
    if isinstance(omega, ScalarField):
        return d_N(chain.N, omega) - omega * da0
    if isinstance(omega, OneForm):
        return d_N(chain.N, omega) - wedge(da0, omega)
    raise TypeError("D_N acts on functions and 1-forms")


def covariant_dN_check(chain: ChainState, points) -> tuple:
    """(max_k |da_{k+1} - D_N a_k|, max_k |D_N D_N a_k|), both relative, k < K."""
    if chain.kind != "lorenzoni-magri":
        raise ValueError("covariant chain relation applies to Lorenzoni-Magri chains")
    pts = as_points(points, chain.N.dim)
    step = flat = 0.0
    for k in range(chain.K):
        lhs = grad(chain.a[k + 1]).values(pts)
        Da = covariant_dN(chain, chain.a[k])
        rhs = Da.values(pts)
        step = max(step, float(np.max(np.abs(lhs - rhs))) / scale_of(lhs, rhs))
        DD = covariant_dN(chain, Da).values(pts)
        flat = max(flat, float(np.max(np.abs(DD))) / scale_of(Da.jet(pts, 1).grad))
    return step, flat


def conservation_pair(chain: ChainState, k: int, points) -> tuple:
    """(f, h, certificate) with f = a_0, h = a_k and certificate |M_k^* da_0 - da_k|."""
    if chain.kind != "lorenzoni-magri":
        raise ValueError("conservation pairs come from Lorenzoni-Magri chains")
    if not 0 <= k <= chain.K:
        raise ValueError(f"k must lie in 0..{chain.K}")
    pts = as_points(points, chain.N.dim)
    lhs = pullback(chain.M[k], grad(chain.a[0])).values(pts)
    rhs = grad(chain.a[k]).values(pts)
    cert = float(np.max(np.abs(lhs - rhs))) / scale_of(lhs, rhs)
    return chain.a[0], chain.a[k], cert


def lattice(domain: Domain, counts) -> np.ndarray:
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(domain.box, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def export_chain(chain: ChainState, counts=None, points=None) -> dict:
    """Plot-ready JSON document with a_k sampled on a lattice."""
    n = chain.N.dim
    if points is None:
        counts = counts or [5] * n
        points = lattice(chain.domain, counts)
    pts = as_points(points, n)
    vals = chain.values(pts)
    doc = {
        "kind": chain.kind,
        "K": chain.K,
        "basepoint": chain.basepoint.tolist(),
        "provenance": list(chain.provenance),
        "lattice": {"counts": list(counts) if counts else None, "points": pts.tolist()},
        "a": {str(k): vals[:, k].tolist() for k in range(chain.K + 1)},
        "certificates": _jsonable(chain.certificates),
    }
    if chain.kind == "lorenzoni-magri":
        doc["certificates"]["conservation"] = [
            conservation_pair(chain, k, pts)[2] for k in range(1, chain.K + 1)
        ]
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
