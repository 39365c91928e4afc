"""Named numerical checks: module invariants and the acceptance criteria.

Every ``check_*`` function in this module is registered under its name minus
the prefix; ``fnhydro verify`` runs them and prints a pass/fail table.  Each
returns a :class:`CheckResult` made of labelled parts, each part a measured
value compared against a bound.
"""

from __future__ import annotations

import functools
import json
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .calculus import (
    ScalarField,
    Tensor11,
    VectorField,
    compose11,
    exterior_d,
    grad,
    identity,
    insert11,
    lie_bracket,
    pullback,
    wedge,
)
from .chains import (
    conservation_pair,
    covariant_dN_check,
    eval_chain_at,
    is_biclosed,
    lenard_chain,
    lm_chain,
)
from .exprdsl import parse
from .fntheory import (
    bidiff_anticommute_check,
    compat_bracket,
    d_N,
    fn_bracket,
    fn_bracket_on,
    haantjes,
    lemma_recursion_check,
    nijenhuis_torsion,
    recursion_tensors,
    structured_form_fit,
    structured_torsion_check,
    torsion_components,
    torsion_on,
)
from .hydro import (
    FlowSpec,
    chain_flow,
    commutation_experiment,
    compat_test_fields,
    conservation_residual,
    hopf_characteristics,
    l2_norm,
    pointwise_compatibility,
    refinement_ratios,
    simulate,
    step,
)
from .sampling import (
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    DEFAULT_TOL,
    Domain,
    random_polynomial,
    random_tensor_sources,
    scale_of,
)


@dataclass(frozen=True)
class CheckContext:
    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    tol: float = DEFAULT_TOL

    def points(self, dim: int, count: int | None = None, offset: int = 0) -> np.ndarray:
        return Domain.default(dim).sample(count or self.samples, self.seed + offset)

    def rng(self, offset: int = 0) -> np.random.Generator:
        return np.random.default_rng(self.seed + 7919 * offset)


@dataclass(frozen=True)
class Part:
    label: str
    value: float
    op: str  # "<=", ">=", "<", "in"
    bound: object

    @property
    def passed(self) -> bool:
        v = self.value
        if not np.isfinite(v):
            return False
        if self.op == "<=":
            return v <= self.bound
        if self.op == "<":
            return v < self.bound
        if self.op == ">=":
            return v >= self.bound
        lo, hi = self.bound
        return lo <= v <= hi

    def describe(self) -> str:
        b = f"[{self.bound[0]:g}, {self.bound[1]:g}]" if self.op == "in" else f"{self.bound:.0e}"
        return f"{self.label}={self.value:.3e} {self.op} {b}"

    def to_json(self) -> dict:
        return {"label": self.label, "value": self.value, "op": self.op,
                "bound": list(self.bound) if self.op == "in" else self.bound, "passed": self.passed}


@dataclass
class CheckResult:
    name: str
    parts: list
    seconds: float = 0.0
    error: str | None = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.error is None and all(p.passed for p in self.parts)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = self.error if self.error else "; ".join(p.describe() for p in self.parts)
        return f"{status} {self.name}: {body}"

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "seconds": round(self.seconds, 3),
                "error": self.error, "parts": [p.to_json() for p in self.parts], "detail": self.detail}


@dataclass(frozen=True)
class Check:
    name: str
    group: str
    func: Callable

    @property
    def doc(self) -> str:
        return (self.func.__doc__ or "").strip().splitlines()[0] if self.func.__doc__ else ""


REGISTRY: dict = {}


def register(group: str):
    def deco(func):
        name = func.__name__.removeprefix("check_")
        if name in REGISTRY:
            raise ValueError(f"duplicate check {name}")
        REGISTRY[name] = Check(name, group, func)
        return func

    return deco


def run_check(name: str, ctx: CheckContext | None = None) -> CheckResult:
    ctx = ctx or CheckContext()
    chk = REGISTRY[name]
    t0 = time.perf_counter()
    try:
        out = chk.func(ctx)
        parts, detail = (out if isinstance(out, tuple) else (out, {}))
        res = CheckResult(name, list(parts), detail=detail)
    except Exception as exc:  # reported as a failed check, not a crash
        res = CheckResult(name, [], error=f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def run_checks(names=None, ctx: CheckContext | None = None, group: str | None = None) -> list:
    names = names or [n for n, c in REGISTRY.items() if group is None or c.group == group]
    return [run_check(n, ctx) for n in names]


def format_table(results) -> str:
    width = max((len(r.name) for r in results), default=10)
    lines = [f"{'check':<{width}}  status  seconds"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'pass' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}")
    ok = sum(r.passed for r in results)
    lines.append(f"{ok}/{len(results)} checks passed")
    return "\n".join(lines)


# -- shared fixtures ---------------------------------------------------------

DIAG2 = ("x1", "x2")
NONDIAG2 = (("x2", "x1"), ("0", "x2"))
ADVECTION_INIT = ("sin(2*pi*y)", "cos(2*pi*y)")
HOPF_INIT = ("0.5 + 0.2*sin(2*pi*y)", "-0.3 + 0.15*cos(2*pi*y)")
SMOOTH_INIT_3 = ("0.3 + 0.1*sin(2*pi*y)", "0.6 + 0.1*cos(2*pi*y)", "1.0 + 0.1*sin(4*pi*y)")
TRACE3_CLOSED = {1: "-(x1*x2 + x1*x3 + x2*x3)", 2: "x1*x2*x3", 3: "0"}


@functools.lru_cache(maxsize=None)
def diag_tensor(dim: int = 2) -> Tensor11:
    return Tensor11.diag([f"x{i + 1}" for i in range(dim)])


@functools.lru_cache(maxsize=None)
def nondiag_tensor() -> Tensor11:
    return Tensor11.from_components([list(r) for r in NONDIAG2])


@functools.lru_cache(maxsize=None)
def trace_chain_2d(K: int = 4, closed: bool = False):
    cf = {1: "-x1*x2", **{k: "0" for k in range(2, K + 1)}} if closed else None
    return lm_chain(diag_tensor(2), ScalarField.from_expr("x1 + x2", 2), K, closed_forms=cf)


@functools.lru_cache(maxsize=None)
def nondegenerate_chain(K: int = 4):
    """N = diag(x1, x2) with a_0 = x1^2 + x2: M_k != 0 for every k <= 4."""
    return lm_chain(diag_tensor(2), ScalarField.from_expr("x1^2 + x2", 2), K)


@functools.lru_cache(maxsize=None)
def nondiag_chain(K: int = 4):
    """N = [[x2, x1], [0, x2]] (torsion-free, not diagonalisable) with a_0 = x1 + x2^2."""
    return lm_chain(nondiag_tensor(), ScalarField.from_expr("x1 + x2^2", 2), K)


@functools.lru_cache(maxsize=None)
def trace_chain_3d(closed: bool = True):
    cf = TRACE3_CLOSED if closed else None
    return lm_chain(diag_tensor(3), ScalarField.from_expr("x1 + x2 + x3", 3), 3, closed_forms=cf)


@functools.lru_cache(maxsize=None)
def chain_4d(K: int = 3):
    return lm_chain(diag_tensor(4), ScalarField.from_expr("x1^2 + x2 + x3 - x4", 4), K)


def _rel(diff, *ref) -> float:
    diff = np.asarray(diff)
    return float(np.max(np.abs(diff))) / scale_of(*ref) if diff.size else 0.0


def _rand_tensor(dim: int, rng, degree: int = 2) -> Tensor11:
    return Tensor11.from_components(random_tensor_sources(dim, degree, rng))


def _rand_scalar(dim: int, rng, degree: int = 3) -> ScalarField:
    return ScalarField.from_expr(random_polynomial(dim, degree, rng), dim)


def _rand_vector(dim: int, rng, degree: int = 2) -> VectorField:
    return VectorField.from_components([random_polynomial(dim, degree, rng, terms=3) for _ in range(dim)], dim)


def haantjes_relative(M: Tensor11, pts, U, V) -> tuple:
    """max |H(M)(u,v)| over the scale |M|^2 |T(M)| of its terms, and max |T(M)(u,v)|."""
    H = haantjes(M)(pts, U, V)
    T = nijenhuis_torsion(M)(pts, U, V)
    Mn = np.max(np.abs(M.values(pts)))
    scale = max(1.0, Mn * Mn * float(np.max(np.abs(T))), float(np.max(np.abs(T))))
    return float(np.max(np.abs(H))) / scale, float(np.max(np.linalg.norm(T, axis=1)))


# -- exprdsl ---------------------------------------------------------------


@register("exprdsl")
def check_jet_vs_finite_differences(ctx):
    """Gradient and Hessian of random polynomials agree with central differences (h=1e-5)."""
    rng = ctx.rng(1)
    worst_g = worst_h = 0.0
    h = 1e-5
    for trial in range(10):
        dim = 2 + trial % 2
        e = parse(random_polynomial(dim, 4, rng, terms=5), dim)
        pts = Domain.default(dim).sample(20, ctx.seed + trial)
        jet = e.jet(pts, 2)
        eye = np.eye(dim)
        fd_g = np.stack([(e(pts + h * eye[i]) - e(pts - h * eye[i])) / (2 * h) for i in range(dim)], axis=1)
        gj = e.jet
        fd_h = np.stack([(gj(pts + h * eye[i], 1).grad - gj(pts - h * eye[i], 1).grad) / (2 * h)
                         for i in range(dim)], axis=2)
        worst_g = max(worst_g, _rel(jet.grad - fd_g, jet.grad))
        worst_h = max(worst_h, _rel(jet.hess - fd_h, jet.hess))
    return [Part("gradient", worst_g, "<=", 1e-6), Part("hessian", worst_h, "<=", 1e-6)]


@register("exprdsl")
def check_parse_print_roundtrip(ctx):
    """parse -> to_source -> parse evaluates identically on 100 random points."""
    rng = ctx.rng(2)
    worst = 0.0
    pts = ctx.points(3, 100)
    sources = [random_polynomial(3, 4, rng) for _ in range(10)]
    sources += ["-x1^2^2/(1+x2^2)", "exp(-x1)*sin(x2 - 2*x3)", "sqrt(4 + x1^2) - log(5 + x2)", "(-2)*x1 - -x3"]
    for src in sources:
        e = parse(src, 3)
        e2 = parse(e.to_source(), 3)
        worst = max(worst, float(np.max(np.abs(e(pts) - e2(pts)))))
    return [Part("max difference", worst, "<=", 0.0)]


# -- calculus --------------------------------------------------------------


@register("calculus")
def check_d_of_d_vanishes(ctx):
    """d(df) = 0 for random scalar fields."""
    rng = ctx.rng(3)
    worst = 0.0
    for dim in (2, 3):
        pts = ctx.points(dim)
        for _ in range(5):
            f = _rand_scalar(dim, rng, 4)
            worst = max(worst, _rel(exterior_d(grad(f)).values(pts), f.jet(pts, 2).hess))
    return [Part("d(df)", worst, "<=", 1e-9)]


@register("calculus")
def check_lie_bracket_bilinear_antisymmetric(ctx):
    """[X,Y] = -[Y,X] and bilinearity over constants."""
    rng = ctx.rng(4)
    pts = ctx.points(3)
    X, Y, Z = (_rand_vector(3, rng) for _ in range(3))
    a, b = 1.7, -0.4
    xy, yx = lie_bracket(X, Y).values(pts), lie_bracket(Y, X).values(pts)
    lin = lie_bracket(X * a + Z * b, Y).values(pts)
    ref = a * xy + b * lie_bracket(Z, Y).values(pts)
    return [Part("antisymmetry", _rel(xy + yx, xy), "<=", 1e-12),
            Part("bilinearity", _rel(lin - ref, ref), "<=", 1e-12)]


@register("calculus")
def check_pullback_composition(ctx):
    """(N1 N2)^* a = N2^* (N1^* a) pointwise."""
    rng = ctx.rng(5)
    pts = ctx.points(3)
    N1, N2 = _rand_tensor(3, rng), _rand_tensor(3, rng)
    alpha = grad(_rand_scalar(3, rng))
    lhs = pullback(compose11(N1, N2), alpha).values(pts)
    rhs = pullback(N2, pullback(N1, alpha)).values(pts)
    return [Part("composition", _rel(lhs - rhs, lhs), "<=", 1e-12)]


@register("calculus")
def check_insert11_derivation(ctx):
    """N _| (a ^ b) = (N^* a) ^ b + a ^ (N^* b)."""
    rng = ctx.rng(6)
    pts = ctx.points(3)
    N = _rand_tensor(3, rng)
    a, b = grad(_rand_scalar(3, rng)), grad(_rand_scalar(3, rng))
    lhs = insert11(N, wedge(a, b)).values(pts)
    rhs = (wedge(pullback(N, a), b) + wedge(a, pullback(N, b))).values(pts)
    return [Part("derivation rule", _rel(lhs - rhs, lhs), "<=", 1e-12)]


# -- fntheory --------------------------------------------------------------


@register("fntheory")
def check_torsion_haantjes_antisymmetry(ctx):
    """T(N)(u,v) = -T(N)(v,u) and H(M)(u,v) = -H(M)(v,u)."""
    rng = ctx.rng(7)
    pts = ctx.points(3)
    N = _rand_tensor(3, rng)
    U, V = rng.standard_normal((2, len(pts), 3))
    T, H = nijenhuis_torsion(N), haantjes(N)
    t1, t2 = T(pts, U, V), T(pts, V, U)
    h1, h2 = H(pts, U, V), H(pts, V, U)
    return [Part("torsion", _rel(t1 + t2, t1), "<=", 1e-12), Part("haantjes", _rel(h1 + h2, h1), "<=", 1e-12)]


@register("fntheory")
def check_tensoriality(ctx):
    """Torsion on fields fX, gY equals f g times torsion on X, Y."""
    rng = ctx.rng(8)
    pts = ctx.points(2)
    N = _rand_tensor(2, rng)
    X, Y = _rand_vector(2, rng), _rand_vector(2, rng)
    f, g = _rand_scalar(2, rng, 2), _rand_scalar(2, rng, 2)
    base = torsion_on(N, X, Y).values(pts)
    scaled = torsion_on(N, X * f, Y * g).values(pts)
    ref = (f.values(pts) * g.values(pts))[:, None] * base
    via_fn = 0.5 * fn_bracket_on(N, N, X * f, Y * g).values(pts)
    return [Part("torsion(fX, gY)", _rel(scaled - ref, ref), "<=", 1e-8),
            Part("half FN bracket", _rel(via_fn - ref, ref), "<=", 1e-8)]


@register("fntheory")
def check_torsion_oracle_equivalence(ctx):
    """Bracket-definition torsion equals the coordinate index formula."""
    rng = ctx.rng(9)
    worst = 0.0
    for dim in (2, 3):
        pts = ctx.points(dim)
        for _ in range(3):
            N = _rand_tensor(dim, rng, 3)
            a = nijenhuis_torsion(N).components(pts)
            b = torsion_components(N, pts)
            worst = max(worst, _rel(a - b, b))
    return [Part("relative", worst, "<=", 1e-9)]


@register("fntheory")
def check_fn_bracket_symmetry_bilinearity(ctx):
    """[N1,N2]_FN = [N2,N1]_FN, and the bracket is bilinear in (u, v)."""
    rng = ctx.rng(10)
    pts = ctx.points(2)
    N1, N2 = _rand_tensor(2, rng), _rand_tensor(2, rng)
    U, V, W = rng.standard_normal((3, len(pts), 2))
    B12, B21 = fn_bracket(N1, N2), fn_bracket(N2, N1)
    s = B12(pts, U, V)
    lin = B12(pts, 2.0 * U - 3.0 * W, V)
    ref = 2.0 * s - 3.0 * B12(pts, W, V)
    return [Part("symmetry", _rel(s - B21(pts, U, V), s), "<=", 1e-12),
            Part("bilinearity", _rel(lin - ref, ref), "<=", 1e-10)]


@register("fntheory")
def check_torsion_of_powers(ctx):
    """T(N) = 0 implies T(N^k) = 0, k <= 4, for the diagonal and a non-diagonal N."""
    pts = ctx.points(2)
    worst = 0.0
    for N in (diag_tensor(2), nondiag_tensor()):
        for k in range(1, 5):
            Nk = N.power(k)
            worst = max(worst, _rel(torsion_components(Nk, pts), Nk.values(pts)))
    return [Part("max T(N^k)", worst, "<=", 1e-9)]


@register("fntheory")
def check_haantjes_lm_chain(ctx):
    """H(M_k) = 0 for chain-consistent a_k and for arbitrary a_k."""
    rng = ctx.rng(11)
    pts = ctx.points(2)
    U, V = rng.standard_normal((2, len(pts), 2))
    chain = nondegenerate_chain()
    worst_chain = max(haantjes_relative(chain.M[k], pts, U, V)[0] for k in range(1, 5))
    N = nondiag_tensor()
    arb = [_rand_scalar(2, rng, 2) for _ in range(3)]
    M = recursion_tensors(N, [-(a * identity(2)) for a in arb])
    worst_arb = max(haantjes_relative(M[k], pts, U, V)[0] for k in range(1, 4))
    return [Part("chain a_k", worst_chain, "<=", ctx.tol), Part("arbitrary a_k", worst_arb, "<=", ctx.tol)]


@register("fntheory")
def check_dm1_squared_identity(ctx):
    """d_{M1} d_{M1} f = da_0 ^ d_N f - d_N a_0 ^ df with M_1 = N - a_0 I."""
    rng = ctx.rng(12)
    pts = ctx.points(2)
    worst = 0.0
    for N, a0 in ((diag_tensor(2), "x1^2 + x2"), (nondiag_tensor(), "x1*x2 + x2^3"), (diag_tensor(2), "exp(x1 - x2)")):
        a0 = ScalarField.from_expr(a0, 2)
        M1 = N - a0 * identity(2)
        f = _rand_scalar(2, rng, 3)
        lhs = d_N(M1, d_N(M1, f)).values(pts)
        rhs = (wedge(grad(a0), d_N(N, f)) - wedge(d_N(N, a0), grad(f))).values(pts)
        worst = max(worst, _rel(lhs - rhs, lhs, rhs))
    return [Part("relative", worst, "<=", ctx.tol)]


# -- chains ----------------------------------------------------------------


@register("chains")
def check_lenard_biclosed(ctx):
    """Every rho_k of a Lenard chain is closed and N-closed."""
    worst = 0.0
    for N, a0 in ((diag_tensor(2), "x1 + x2"), (nondiag_tensor(), "x1 + x2^2")):
        ch = lenard_chain(N, ScalarField.from_expr(a0, 2), 3, samples=ctx.samples, seed=ctx.seed)
        pts = ctx.points(2, offset=1)
        for rho in ch.rho:
            r = is_biclosed(rho, N, pts, ctx.tol)
            worst = max(worst, r.closed_residual, r.n_closed_residual)
    return [Part("max residual", worst, "<=", ctx.tol)]


@register("chains")
def check_pullback_commutativity(ctx):
    """M_i^* M_j^* da_0 = M_j^* M_i^* da_0 for i, j <= 4."""
    pts = ctx.points(2)
    worst = 0.0
    for chain in (nondegenerate_chain(), nondiag_chain()):
        da0 = grad(chain.a[0])
        for i in range(1, 5):
            for j in range(i + 1, 5):
                a = pullback(chain.M[i], pullback(chain.M[j], da0)).values(pts)
                b = pullback(chain.M[j], pullback(chain.M[i], da0)).values(pts)
                worst = max(worst, _rel(a - b, a, b))
    return [Part("relative", worst, "<=", 1e-9)]


@register("chains")
def check_eval_chain_matches_closed_form(ctx):
    """Ray-ODE values of the diagonal trace chain match a_1 = -x1 x2, a_k = 0 (k >= 2)."""
    chain = trace_chain_2d(4)
    pts = ctx.points(2, 20, offset=2)
    vals = np.array([eval_chain_at(chain, p) for p in pts])
    exact = np.zeros_like(vals)
    exact[:, 0] = pts.sum(axis=1)
    exact[:, 1] = -pts[:, 0] * pts[:, 1]
    return [Part("abs", float(np.max(np.abs(vals - exact))), "<=", 1e-8)]


@register("chains")
def check_chain_seed_independence(ctx):
    """Rebuilding a chain with another verification seed leaves its values unchanged."""
    N = diag_tensor(2)
    a0 = ScalarField.from_expr("x1^2 + x2", 2)
    pts = ctx.points(2, 10, offset=3)
    a = lm_chain(N, a0, 3, seed=ctx.seed).values(pts)
    b = lm_chain(N, a0, 3, seed=ctx.seed + 1).values(pts)
    la = lenard_chain(N, ScalarField.from_expr("x1 + x2", 2), 2, seed=ctx.seed).values(pts)
    lb = lenard_chain(N, ScalarField.from_expr("x1 + x2", 2), 2, seed=ctx.seed + 1).values(pts)
    return [Part("max change", float(max(np.max(np.abs(a - b)), np.max(np.abs(la - lb)))), "<=", 0.0)]


# -- hydro -----------------------------------------------------------------


@register("hydro")
def check_simulation_determinism(ctx):
    """Identical inputs give bit-identical grid solutions."""
    flow = chain_flow(trace_chain_3d(), 2)
    a = simulate(flow, list(SMOOTH_INIT_3), 64, 1.0, 0.05)
    b = simulate(flow, list(SMOOTH_INIT_3), 64, 1.0, 0.05)
    same = np.array_equal(a.frames, b.frames) and np.array_equal(a.times, b.times)
    return [Part("differences", 0.0 if same else 1.0, "<=", 0.0)]


@register("hydro")
def check_mass_conservation(ctx):
    """For M = c I the grid mean of each component is conserved to 1e-12 per step."""
    flow = FlowSpec(Tensor11.diag(["0.8", "0.8"]))
    x = np.column_stack([np.sin(2 * np.pi * np.arange(128) / 128) + 0.3, np.cos(6 * np.pi * np.arange(128) / 128)])
    worst = 0.0
    for _ in range(50):
        nx = step(flow, x, 0.002, 1.0 / 128)
        worst = max(worst, float(np.max(np.abs(nx.mean(axis=0) - x.mean(axis=0)))))
        x = nx
    return [Part("per-step drift", worst, "<=", 1e-12)]


@register("hydro")
def check_shock_monitor_monotone(ctx):
    """max |D_y x| is non-decreasing (within 5%) for the Hopf flow before the shock."""
    sol = simulate(FlowSpec(diag_tensor(2)), list(HOPF_INIT), 200, 1.0, 0.7)
    g = sol.grad_max
    worst = float(np.max(g[:-1] / np.maximum.accumulate(g)[:-1] - 1.0, initial=0.0))
    drops = float(np.max(1.0 - g[1:] / np.maximum.accumulate(g)[:-1], initial=0.0))
    return [Part("largest drop", drops, "<=", 0.05)], {"growth": worst}


@register("hydro")
def check_compat_swap_symmetry(ctx):
    """[A,B]_X = -[B,A]_X, so compatibility residuals are swap-invariant."""
    pts = ctx.points(2)
    A, B = diag_tensor(2), Tensor11.diag(["x2", "x1"])
    worst = 0.0
    for X in compat_test_fields(2):
        ab = compat_bracket(A, B, X).values(pts)
        ba = compat_bracket(B, A, X).values(pts)
        worst = max(worst, _rel(ab + ba, ab))
    r1, r2 = pointwise_compatibility(A, B, pts), pointwise_compatibility(B, A, pts)
    return [Part("antisymmetry", worst, "<=", 1e-12),
            Part("report difference", abs(r1.bracket - r2.bracket), "<=", 1e-12)]


# -- cli -------------------------------------------------------------------


@register("cli")
def check_report_reproducible(ctx):
    """Two runs of the torsion subcommand on the same manifest write identical reports."""
    from .manifest import emit_examples

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        emit_examples(tmp / "m")
        docs = []
        for run in ("a", "b"):
            out = tmp / run
            cmd = [sys.executable, "-m", "fnhydro.cli", "torsion", str(tmp / "m" / "identity.json"),
                   "--out", str(out), "--seed", str(ctx.seed)]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RuntimeError(proc.stderr.strip() or proc.stdout.strip())
            doc = json.loads((out / "torsion-report.json").read_text())
            doc.pop("elapsed_seconds", None)
            docs.append(doc)
        keys = {"seed", "tolerances", "version"} - set(docs[0])
    return [Part("differences", 0.0 if docs[0] == docs[1] else 1.0, "<=", 0.0),
            Part("missing keys", float(len(keys)), "<=", 0.0)]


# -- acceptance criteria ---------------------------------------------------


@register("acceptance")
def check_acceptance_01_torsion_oracle(ctx):
    """Bracket torsion equals the index formula, 10 random tensors in dims 2 and 3."""
    rng = np.random.default_rng(101)
    worst = {}
    for dim in (2, 3):
        pts = Domain.default(dim).sample(100, 1000 + dim)
        w = 0.0
        for _ in range(10):
            N = _rand_tensor(dim, rng, 3)
            a = nijenhuis_torsion(N).components(pts)
            b = torsion_components(N, pts)
            w = max(w, _rel(a - b, b))
        worst[dim] = w
    return [Part(f"dim {d}", w, "<=", 1e-9) for d, w in worst.items()]


@register("acceptance")
def check_acceptance_02_nijenhuis_examples(ctx):
    """T(diag(x1,x2)) = 0, T(N^k) = 0 for k <= 4, and the diag(x2,x1) control is nonzero."""
    pts = Domain.default(2).sample(100, 2002)
    N = diag_tensor(2)
    t0 = float(np.max(np.abs(torsion_components(N, pts))))
    tk = max(float(np.max(np.abs(torsion_components(N.power(k), pts)))) for k in range(2, 5))
    C = nijenhuis_torsion(Tensor11.diag(["x2", "x1"])).components(pts)
    ctrl = float(np.max(np.linalg.norm(C.reshape(len(pts), -1), axis=1)))
    return [Part("T(N)", t0, "<=", 1e-9), Part("T(N^k) k<=4", tk, "<=", 1e-9), Part("control", ctrl, ">=", 0.1)]


@register("acceptance")
def check_acceptance_03_chain_values(ctx):
    """LM a_1 = -x1 x2 and Lenard a_1 = (x1^2+x2^2)/2; certificate |M_k^* da_0 - da_k| for k <= 4."""
    pts = Domain.default(2).sample(20, 3003)
    lm = trace_chain_2d(4)
    lm_err = float(np.max(np.abs(lm.values(pts)[:, 1] + pts[:, 0] * pts[:, 1])))
    len_chain = lenard_chain(diag_tensor(2), ScalarField.from_expr("x1 + x2", 2), 1)
    len_err = float(np.max(np.abs(len_chain.values(pts)[:, 1] - 0.5 * (pts ** 2).sum(axis=1))))
    # certificate against symbolic da_k of the closed forms, with M_k rebuilt from them
    closed = trace_chain_2d(4, closed=True)
    cpts = Domain.default(2).sample(100, 3004)
    da0 = grad(closed.a[0])
    cert = 0.0
    for k in range(1, 5):
        lhs = pullback(closed.M[k], da0).values(cpts)
        rhs = grad(ScalarField.from_expr(closed.a[k].expr, 2)).values(cpts)
        cert = max(cert, float(np.max(np.abs(lhs - rhs))))
    return [Part("LM a_1", lm_err, "<=", 1e-8), Part("Lenard a_1", len_err, "<=", 1e-8),
            Part("certificate k<=4", cert, "<=", 1e-9)]


@register("acceptance")
def check_acceptance_04_hierarchy(ctx):
    """[M_i, M_j]_X = 0 for i, j <= 3 over the test fields; the bracket recursion for general A_k."""
    pts2 = Domain.default(2).sample(100, 4004)
    pts3 = Domain.default(3).sample(100, 4005)
    worst = 0.0
    for chain, pts in ((nondegenerate_chain(), pts2), (nondiag_chain(), pts2), (trace_chain_3d(), pts3)):
        for i in range(4):
            for j in range(4):
                r = pointwise_compatibility(chain.M[i], chain.M[j], pts)
                worst = max(worst, r.bracket, r.commutator)
    rng = np.random.default_rng(404)
    lemma = 0.0
    for N in (diag_tensor(2), nondiag_tensor()):
        chain = nondegenerate_chain() if N is diag_tensor(2) else nondiag_chain()
        families = {
            "zero": [0.0 * identity(2)] * 3,
            "chain": [-(a * identity(2)) for a in chain.a[:3]],
            "random": [_rand_tensor(2, rng, 2) for _ in range(3)],
        }
        for A in families.values():
            M = recursion_tensors(N, A)
            for X in compat_test_fields(2) + [_rand_vector(2, rng)]:
                for i in range(2):
                    for j in range(i + 1, 3):
                        if max(i, j) + 1 < len(M):
                            lemma = max(lemma, lemma_recursion_check(N, A, M, X, i, j, pts2[:40]))
    return [Part("[M_i,M_j]_X", worst, "<=", 1e-8), Part("recursion identity", lemma, "<=", 1e-8)]


@register("acceptance")
def check_acceptance_05_haantjes(ctx):
    """H(M_k) = 0 for k = 1..4 while T(M_k) != 0; shift invariance; span test with m = k-1.

    H is measured relative to max(1, |M|^2 |T|), the size of its individual
    terms; the absolute value is kept in the detail.  In 2D the span test is
    vacuous (u, v already span the plane), so a 4D form fit with m = 2k-1 is
    added as the discriminating part.
    """
    rng = np.random.default_rng(505)
    pts = Domain.default(2).sample(100, 5005)
    U, V = rng.standard_normal((2, 100, 2))
    h = t = h_abs = 0.0
    for chain in (nondegenerate_chain(), nondiag_chain()):
        for k in range(1, 5):
            hk, tk = haantjes_relative(chain.M[k], pts, U, V)
            h, t = max(h, hk), max(t, tk)
            h_abs = max(h_abs, float(np.max(np.linalg.norm(haantjes(chain.M[k])(pts, U, V), axis=1))))
    shift = 0.0
    for _ in range(3):
        M = _rand_tensor(2, rng, 2)
        f = _rand_scalar(2, rng, 2)
        a = haantjes(M + f * identity(2))(pts, U, V)
        b = haantjes(M)(pts, U, V)
        shift = max(shift, _rel(a - b, a, b))
    span = 0.0
    chain = nondegenerate_chain()
    for k in range(1, 5):
        rep = structured_torsion_check(chain.M[k], diag_tensor(2), k - 1, pts, rng=np.random.default_rng(k))
        span = max(span, rep.residual)
    chain4 = chain_4d()
    pts4 = Domain.default(4).sample(30, 5006)
    fit = max(structured_form_fit(chain4.M[k], diag_tensor(4), 2 * k - 1, pts4) for k in range(1, 4))
    return ([Part("H(M_k) k=1..4", h, "<=", 1e-8), Part("max |T(M_k)|", t, ">=", 0.05),
             Part("shift invariance", shift, "<=", 1e-8), Part("span residual", span, "<=", 1e-8),
             Part("4D form fit m=2k-1", fit, "<=", 1e-8)],
            {"absolute_H_max": h_abs})


@register("acceptance")
def check_acceptance_06_calculus_identities(ctx):
    """d d_N = -d_N d, d_N^2 = 0, d_N d_{N^2} = -d_{N^2} d_N, the d_{M1}^2 identity, (N^*)^k rho bi-closed."""
    rng = np.random.default_rng(606)
    pts = Domain.default(2).sample(100, 6006)
    I = identity(2)
    r_ddn = r_dn2 = r_mix = r_m1 = 0.0
    for N in (diag_tensor(2), nondiag_tensor()):
        N2 = N.power(2)
        for _ in range(3):
            f = _rand_scalar(2, rng, 4)
            r_ddn = max(r_ddn, bidiff_anticommute_check(I, N, f, pts))
            dn2 = d_N(N, d_N(N, f)).values(pts)
            r_dn2 = max(r_dn2, _rel(dn2, d_N(N, f).jet(pts, 1).grad))
            r_mix = max(r_mix, bidiff_anticommute_check(N, N2, f, pts))
        for a0 in ("x1^2 + x2", "x1*x2 - x2^3"):
            a0 = ScalarField.from_expr(a0, 2)
            f = _rand_scalar(2, rng, 3)
            M1 = N - a0 * I
            lhs = d_N(M1, d_N(M1, f)).values(pts)
            rhs = (wedge(grad(a0), d_N(N, f)) - wedge(d_N(N, a0), grad(f))).values(pts)
            r_m1 = max(r_m1, _rel(lhs - rhs, lhs, rhs))
    biclosed = 0.0
    for N, a0 in ((diag_tensor(2), "x1 + x2"), (diag_tensor(2), "sin(x1) + x2^3"), (nondiag_tensor(), "x1 + x2^2")):
        rho = grad(ScalarField.from_expr(a0, 2))
        for k in range(1, 4):
            rho = pullback(N, rho)
            r = is_biclosed(rho, N, pts)
            biclosed = max(biclosed, r.closed_residual, r.n_closed_residual)
    return [Part("d d_N + d_N d", r_ddn, "<=", 1e-8), Part("d_N^2", r_dn2, "<=", 1e-8),
            Part("d_N d_N2 + d_N2 d_N", r_mix, "<=", 1e-8), Part("d_M1^2 identity", r_m1, "<=", 1e-8),
            Part("(N^*)^k rho bi-closed k<=3", biclosed, "<=", 1e-8)]


@register("acceptance")
def check_acceptance_07_covariant_chain(ctx):
    """da_{k+1} = D_N a_k and D_N^2 a_k = 0 for k <= 3."""
    pts = Domain.default(2).sample(100, 7007)
    step_r = flat_r = 0.0
    for chain in (nondegenerate_chain(), nondiag_chain(), trace_chain_2d(4)):
        s, f = covariant_dN_check(chain, pts)
        step_r, flat_r = max(step_r, s), max(flat_r, f)
    return [Part("da_{k+1} - D_N a_k", step_r, "<=", 1e-8), Part("D_N^2 a_k", flat_r, "<=", 1e-8)]


def advection_errors(levels=(50, 100, 200, 400), T=0.5, c=0.7) -> list:
    flow = FlowSpec(Tensor11.diag([repr(c), repr(c)]), "advection")
    errs = []
    for Ny in levels:
        sol = simulate(flow, list(ADVECTION_INIT), Ny, 1.0, T)
        y = sol.y - c * T
        exact = np.column_stack([np.sin(2 * np.pi * y), np.cos(2 * np.pi * y)])
        errs.append(l2_norm(sol.final - exact, sol.dy))
    return errs


def hopf_errors(levels=(100, 200, 400, 800), fraction=0.5) -> list:
    x0 = [lambda y: 0.5 + 0.2 * np.sin(2 * np.pi * y), lambda y: -0.3 + 0.15 * np.cos(2 * np.pi * y)]
    tstar = 1.0 / (0.2 * 2 * np.pi)
    T = fraction * tstar
    errs = []
    for Ny in levels:
        sol = simulate(FlowSpec(diag_tensor(2), "hopf"), list(HOPF_INIT), Ny, 1.0, T)
        exact = np.column_stack([hopf_characteristics(f, T, sol.y, 1.0) for f in x0])
        errs.append(l2_norm(sol.final - exact, sol.dy))
    return errs


@register("acceptance")
def check_acceptance_08_simulator_convergence(ctx):
    """Advection and pre-shock Hopf error ratios per spatial doubling."""
    ra = refinement_ratios(advection_errors())
    rh = refinement_ratios(hopf_errors())
    parts = [Part(f"advection ratio {i + 1}", r, "in", (3.5, 4.5)) for i, r in enumerate(ra)]
    parts += [Part(f"hopf ratio {i + 1}", r, "in", (3.5, 4.5)) for i, r in enumerate(rh)]
    return parts


def commutation_series(A: FlowSpec, B: FlowSpec, initial, levels=(50, 100, 200), s=0.05, t=0.05) -> list:
    return [commutation_experiment(A, B, list(initial), Ny, 1.0, s, t).discrepancy for Ny in levels]


@register("acceptance")
def check_acceptance_09_flow_commutation(ctx):
    """(M_1, M_2) discrepancy shrinks about 4x per refinement; the control pair stalls."""
    chain = trace_chain_3d()
    d = commutation_series(chain_flow(chain, 1), chain_flow(chain, 2), SMOOTH_INIT_3)
    ctrl = commutation_series(FlowSpec(diag_tensor(2)), FlowSpec(Tensor11.diag(["x2", "x1"])), SMOOTH_INIT_3[:2])
    parts = [Part(f"M1/M2 ratio {i + 1}", r, "in", (3.0, 5.0)) for i, r in enumerate(refinement_ratios(d))]
    change = max(abs(c / ctrl[0] - 1.0) for c in ctrl)
    parts.append(Part("control relative change", change, "<", 0.2))
    return parts, {"discrepancy": d, "control": ctrl}


def conservation_series(chain, k: int, initial, levels=(50, 100, 200), T=0.1, pair=None) -> list:
    pts = Domain.default(chain.N.dim).sample(50, 99)
    f, h, cert = pair if pair is not None else conservation_pair(chain, k, pts)
    out = []
    for Ny in levels:
        sol = simulate(chain_flow(chain, k), list(initial), Ny, 1.0, T)
        out.append(float(np.max(conservation_residual(sol, f, h, cert))))
    return out


@register("acceptance")
def check_acceptance_10_conservation(ctx):
    """Residual of (a_0, a_k) along the M_k flow shrinks about 4x; the wrong pair does not."""
    chain3 = trace_chain_3d()
    parts = []
    series = {}
    for k in (1, 2):
        r = conservation_series(chain3, k, SMOOTH_INIT_3)
        series[f"3d k={k}"] = r
        parts += [Part(f"3d k={k} ratio {i + 1}", v, "in", (3.0, 5.0)) for i, v in enumerate(refinement_ratios(r))]
    chain2 = trace_chain_2d(1, closed=True)
    r = conservation_series(chain2, 1, SMOOTH_INIT_3[:2])
    series["2d k=1"] = r
    parts += [Part(f"2d k=1 ratio {i + 1}", v, "in", (3.0, 5.0)) for i, v in enumerate(refinement_ratios(r))]
    wrong = (ScalarField.from_expr("x1", 3), ScalarField.from_expr("x2", 3), 0.0)
    w = conservation_series(chain3, 1, SMOOTH_INIT_3, pair=wrong)
    series["wrong pair"] = w
    parts.append(Part("wrong pair min/coarsest", min(w) / w[0], ">=", 0.1))
    return parts, series


ACCEPTANCE = [n for n, c in REGISTRY.items() if c.group == "acceptance"]
