import numpy as np
import pytest
from hypothesis import given, strategies as st

from fnhydro.calculus import ScalarField, Tensor11, VectorField, grad, identity, pullback, wedge
from fnhydro.errors import CommutationError, DimensionError, TorsionError
from fnhydro.fntheory import (
    bidiff_anticommute_check,
    compat_bracket,
    d_N,
    fn_bracket,
    fn_bracket_on,
    fn_bracket_scaled_expansion,
    haantjes,
    haantjes_on,
    lemma_recursion_check,
    nijenhuis_torsion,
    recursion_tensors,
    require_torsion_free,
    structured_form_fit,
    structured_torsion_check,
    t_m1_explicit,
    torsion_components,
    torsion_on,
)
from fnhydro.sampling import Domain, random_polynomial, random_tensor_sources

N_DIAG = Tensor11.diag(["x1", "x2"])
N_SWAP = Tensor11.diag(["x2", "x1"])
A0 = ScalarField.from_expr("x1 + x2", 2)


def rand_tensor(dim, rng, degree=2):
    return Tensor11.from_components(random_tensor_sources(dim, degree, rng))


def rand_scalar(dim, rng, degree=3):
    return ScalarField.from_expr(random_polynomial(dim, degree, rng), dim)


def rand_vector(dim, rng, degree=2):
    return VectorField.from_components([random_polynomial(dim, degree, rng, terms=3) for _ in range(dim)], dim)


def rel(a, b):
    return float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(b))))


@pytest.fixture
def uv(rng, pts2):
    return rng.standard_normal((2, len(pts2), 2))


# -- d_N --------------------------------------------------------------------


def test_d_identity_is_d(pts2, rng):
    f = rand_scalar(2, rng)
    assert np.allclose(d_N(identity(2), f).values(pts2), grad(f).values(pts2))


def test_d_N_diagonal_example(pts2):
    assert np.allclose(d_N(N_DIAG, A0).values(pts2), pts2)


def test_d_N_rejects_two_forms():
    with pytest.raises(TypeError):
        d_N(N_DIAG, wedge(grad(A0), grad(A0)))


def test_d_N_on_one_form_of_exact_form(pts2, rng):
    # d_N df = -d d_N f; jet grad[p, i, j] is d_j of component i
    f = rand_scalar(2, rng, 4)
    lhs = d_N(N_DIAG, grad(f)).values(pts2)
    G = d_N(N_DIAG, f).jet(pts2, 1).grad
    rhs = G - np.swapaxes(G, 1, 2)
    assert rel(lhs, rhs) <= 1e-10


# -- brackets and torsion ---------------------------------------------------


def test_fn_bracket_of_diagonal_vanishes(pts2, uv):
    assert np.max(np.abs(fn_bracket(N_DIAG, N_DIAG)(pts2, *uv))) <= 1e-12


def test_fn_bracket_symmetric(pts2, uv, rng):
    A, B = rand_tensor(2, rng), rand_tensor(2, rng)
    assert rel(fn_bracket(A, B)(pts2, *uv), fn_bracket(B, A)(pts2, *uv)) <= 1e-12


def test_fn_bracket_is_twice_torsion(pts3, rng):
    N = rand_tensor(3, rng)
    U, V = rng.standard_normal((2, len(pts3), 3))
    assert rel(fn_bracket(N, N)(pts3, U, V), 2 * nijenhuis_torsion(N)(pts3, U, V)) <= 1e-12


def test_fn_bracket_scaled_expansion(rng):
    pts = Domain.default(2).sample(50, 17)
    U, V = rng.standard_normal((2, 50, 2))
    for _ in range(3):
        f1, f2 = rand_scalar(2, rng, 2), rand_scalar(2, rng, 2)
        N1, N2 = rand_tensor(2, rng), rand_tensor(2, rng)
        lhs = fn_bracket(f1 * N1, f2 * N2)(pts, U, V)
        rhs = fn_bracket_scaled_expansion(f1, N1, f2, N2)(pts, U, V)
        assert rel(lhs, rhs) <= 1e-8


def test_torsion_examples(pts2):
    assert np.max(np.abs(torsion_components(identity(2), pts2))) == 0.0
    assert np.max(np.abs(torsion_components(N_DIAG, pts2))) <= 1e-12
    C = nijenhuis_torsion(N_SWAP).components(pts2)
    # T(d1, d2) = (x2 - x1)(d1 + d2) for diag(x2, x1), from the index formula
    expect = (pts2[:, 1] - pts2[:, 0])
    assert np.allclose(C[:, 0, 0, 1], expect) and np.allclose(C[:, 1, 0, 1], expect)


def test_torsion_method_errors():
    with pytest.raises(ValueError):
        nijenhuis_torsion(N_DIAG, method="nope")
    with pytest.raises(DimensionError):
        fn_bracket(N_DIAG, identity(3))


def test_torsion_oracle_equivalence(pts3, rng):
    for _ in range(3):
        N = rand_tensor(3, rng, 3)
        a = nijenhuis_torsion(N).components(pts3)
        b = nijenhuis_torsion(N, method="coordinates").components(pts3)
        assert rel(a, b) <= 1e-9


def test_torsion_of_powers(pts2):
    for N in (N_DIAG, Tensor11.from_components([["x2", "x1"], ["0", "x2"]])):
        for k in range(2, 5):
            assert np.max(np.abs(torsion_components(N.power(k), pts2))) <= 1e-9 * 4 ** k


def test_tensoriality_against_true_fields(rng):
    pts = Domain.default(2).sample(30, 5)
    N = rand_tensor(2, rng)
    X, Y = rand_vector(2, rng), rand_vector(2, rng)
    f, g = rand_scalar(2, rng, 2), rand_scalar(2, rng, 2)
    base = torsion_on(N, X, Y).values(pts)
    scaled = torsion_on(N, f * X, g * Y).values(pts)
    fg = (f.values(pts) * g.values(pts))[:, None]
    assert rel(scaled, fg * base) <= 1e-8
    pointwise = nijenhuis_torsion(N)(pts, X.values(pts), Y.values(pts))
    assert rel(pointwise, base) <= 1e-10
    fn = fn_bracket_on(N, N_DIAG, f * X, g * Y).values(pts)
    assert rel(fn, fg * fn_bracket(N, N_DIAG)(pts, X.values(pts), Y.values(pts))) <= 1e-8


def test_haantjes_examples(pts2, uv, rng):
    assert np.max(np.abs(haantjes(identity(2))(pts2, *uv))) == 0.0
    M1 = N_DIAG - A0 * identity(2)
    assert np.max(np.abs(haantjes(M1)(pts2, *uv))) <= 1e-10
    assert np.max(np.abs(nijenhuis_torsion(M1)(pts2, *uv))) > 0.1
    M = rand_tensor(2, rng)
    f = rand_scalar(2, rng)
    a = haantjes(M + f * identity(2))(pts2, *uv)
    assert rel(a, haantjes(M)(pts2, *uv)) <= 1e-8


def test_haantjes_pointwise_matches_field_form(rng):
    pts = Domain.default(2).sample(20, 8)
    M = rand_tensor(2, rng)
    X, Y = rand_vector(2, rng, 1), rand_vector(2, rng, 1)
    a = haantjes_on(M, X, Y).values(pts)
    b = haantjes(M)(pts, X.values(pts), Y.values(pts))
    assert rel(a, b) <= 1e-9


@given(st.integers(0, 2 ** 31 - 1))
def test_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    pts = Domain.default(2).sample(10, seed)
    U, V = rng.standard_normal((2, 10, 2))
    M = rand_tensor(2, rng)
    for op in (nijenhuis_torsion(M), haantjes(M)):
        assert rel(op(pts, U, V), -op(pts, V, U)) <= 1e-12


@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinearity(seed, s, t):
    rng = np.random.default_rng(seed)
    pts = Domain.default(2).sample(10, seed)
    U, W, V = rng.standard_normal((3, 10, 2))
    M = rand_tensor(2, rng)
    T = nijenhuis_torsion(M)
    lhs = T(pts, s * U + t * W, V)
    rhs = s * T(pts, U, V) + t * T(pts, W, V)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(rhs)), np.max(np.abs(T(pts, U, V))))


# -- T(M_1) closed form -----------------------------------------------------


def test_t_m1_explicit(rng):
    pts = Domain.default(2).sample(50, 50)
    U, V = rng.standard_normal((2, 50, 2))
    got = t_m1_explicit(N_DIAG, A0)(pts, U, V)
    assert rel(got, nijenhuis_torsion(N_DIAG - A0 * identity(2))(pts, U, V)) <= 1e-9
    assert np.max(np.abs(t_m1_explicit(N_DIAG, ScalarField.constant(2.0, 2))(pts, U, V))) == 0.0
    assert np.max(np.abs(t_m1_explicit(identity(2), A0)(pts, U, V))) <= 1e-14


def test_literal_four_term_expansion_has_opposite_sign(rng):
    # -da0(NY)X + da0(NX)Y + da0(Y)NX - da0(X)NY is -T(M_1), not T(M_1)
    pts = Domain.default(2).sample(50, 51)
    U, V = rng.standard_normal((2, 50, 2))
    d = grad(A0).values(pts)
    NU, NV = pts * U, pts * V

    def f(w):
        return np.sum(d * w, axis=1)[:, None]

    literal = -f(NV) * U + f(NU) * V + f(V) * NU - f(U) * NV
    T = nijenhuis_torsion(N_DIAG - A0 * identity(2))(pts, U, V)
    assert rel(literal, -T) <= 1e-12
    assert np.max(np.abs(literal - T)) > 0.1


# -- compatibility bracket --------------------------------------------------


def test_compat_with_identity_and_scalars(pts2, rng):
    A, X = rand_tensor(2, rng), rand_vector(2, rng)
    assert np.max(np.abs(compat_bracket(A, identity(2), X).values(pts2))) <= 1e-10
    f, g = rand_scalar(2, rng), rand_scalar(2, rng)
    fI, gI = f * identity(2), g * identity(2)
    vals = compat_bracket(fI, gI, X).values(pts2)
    assert np.max(np.abs(vals)) <= 1e-9 * max(1.0, np.max(np.abs(fI.values(pts2))) ** 2)


def test_compat_scaling_rule(rng):
    pts = Domain.default(2).sample(50, 52)
    A, B = rand_tensor(2, rng), rand_tensor(2, rng)
    X, f = rand_vector(2, rng), rand_scalar(2, rng, 2)
    lhs = compat_bracket(A, f * B, X).values(pts)
    df = grad(f).values(pts)
    Xv, Av, Bv = X.values(pts), A.values(pts), B.values(pts)
    AX = np.einsum("pij,pj->pi", Av, Xv)
    BX = np.einsum("pij,pj->pi", Bv, Xv)
    ABX = np.einsum("pij,pj->pi", Av, BX)
    rhs = (f.values(pts)[:, None] * compat_bracket(A, B, X).values(pts)
           + np.sum(df * AX, axis=1)[:, None] * BX - np.sum(df * Xv, axis=1)[:, None] * ABX)
    assert rel(lhs, rhs) <= 1e-9


def test_compat_is_not_tensorial(rng):
    pts = Domain.default(2).sample(20, 53)
    A, B, X = N_DIAG, N_SWAP, rand_vector(2, rng)
    f = ScalarField.from_expr("1 + x1^2", 2)
    a = compat_bracket(A, B, f * X).values(pts)
    b = f.values(pts)[:, None] * compat_bracket(A, B, X).values(pts)
    assert np.max(np.abs(a - b)) > 1e-3


# -- recursion identity -----------------------------------------------------


@pytest.mark.parametrize("family", ["zero", "chain", "random"])
def test_lemma_recursion(family, rng):
    pts = Domain.default(2).sample(30, 54)
    I = identity(2)
    if family == "zero":
        A = [0.0 * I] * 3
    elif family == "chain":
        A = [-(ScalarField.from_expr(e, 2) * I) for e in ("x1 + x2", "-x1*x2", "0")]
    else:
        A = [rand_tensor(2, rng) for _ in range(3)]
    M = recursion_tensors(N_DIAG, A)
    for X in (rand_vector(2, rng), VectorField.from_components(["1", "1"], 2)):
        for i, j in ((0, 1), (0, 2), (1, 2)):
            assert lemma_recursion_check(N_DIAG, A, M, X, i, j, pts) <= 1e-8


def test_lemma_requires_torsion_free(rng):
    A = [0.0 * identity(2)] * 2
    M = recursion_tensors(N_SWAP, A)
    with pytest.raises(TorsionError):
        lemma_recursion_check(N_SWAP, A, M, rand_vector(2, rng), 0, 1, Domain.default(2).sample(10, 1))
    with pytest.raises(TorsionError):
        require_torsion_free(N_SWAP, Domain.default(2).sample(10, 1))


def test_lemma_index_bounds(rng):
    A = [0.0 * identity(2)]
    M = recursion_tensors(N_DIAG, A)
    with pytest.raises(ValueError):
        lemma_recursion_check(N_DIAG, A, M, rand_vector(2, rng), 0, 1, Domain.default(2).sample(5, 1))


# -- structured torsion -----------------------------------------------------


def test_structured_span_m2_in_span():
    pts = Domain.default(2).sample(50, 55)
    I = identity(2)
    M1 = N_DIAG - A0 * I
    M2 = N_DIAG @ M1 - ScalarField.from_expr("-x1*x2", 2) * I
    rep = structured_torsion_check(M2, N_DIAG, 1, pts)
    assert rep.in_span and rep.residual <= 1e-8


def test_structured_span_torsion_free_trivial():
    rep = structured_torsion_check(N_DIAG, N_DIAG, 0, Domain.default(2).sample(20, 56))
    assert rep.in_span and rep.residual <= 1e-12


def test_structured_span_control_out_of_span():
    M = Tensor11.diag(["x2", "x3", "x1"])
    rep = structured_torsion_check(M, identity(3), 0, Domain.default(3).sample(50, 57))
    assert not rep.in_span and rep.residual > 0.1


def test_structured_span_requires_commuting():
    with pytest.raises(CommutationError):
        structured_torsion_check(Tensor11.from_components([["0", "1"], ["0", "0"]]), N_DIAG, 1,
                                 Domain.default(2).sample(10, 1))


def test_structured_form_fit_4d():
    # T(M_1) carries N X terms, so m = 1 is needed; m = 0 leaves a generic 4D torsion out of span
    N = Tensor11.diag(["x1", "x2", "x3", "x4"])
    a0 = ScalarField.from_expr("x1 + x2^2 + x3 - x4", 4)
    I = identity(4)
    M1 = N - a0 * I
    pts = Domain.default(4).sample(20, 58)
    assert structured_form_fit(M1, N, 1, pts) <= 1e-8
    assert structured_torsion_check(M1, N, 1, pts).in_span
    assert not structured_torsion_check(M1, N, 0, pts).in_span


# -- bi-differential anticommutation ----------------------------------------


def test_bidiff_cases(pts2, rng):
    f = rand_scalar(2, rng, 4)
    assert bidiff_anticommute_check(N_DIAG, N_DIAG.power(2), f, pts2) <= 1e-8
    assert bidiff_anticommute_check(N_DIAG, N_DIAG, f, pts2) <= 1e-8
    assert bidiff_anticommute_check(identity(2), N_DIAG, f, pts2) <= 1e-8
    assert bidiff_anticommute_check(N_SWAP, N_SWAP, f, pts2) > 1e-3


def test_dm1_squared(pts2, rng):
    I = identity(2)
    a0 = ScalarField.from_expr("x1^2 + x2", 2)
    f = rand_scalar(2, rng)
    M1 = N_DIAG - a0 * I
    lhs = d_N(M1, d_N(M1, f)).values(pts2)
    rhs = (wedge(grad(a0), d_N(N_DIAG, f)) - wedge(d_N(N_DIAG, a0), grad(f))).values(pts2)
    assert rel(lhs, rhs) <= 1e-8


def test_pullback_of_powers_commute(pts2, rng):
    a = grad(rand_scalar(2, rng))
    N = Tensor11.from_components([["x2", "x1"], ["0", "x2"]])
    lhs = pullback(N, pullback(N.power(2), a)).values(pts2)
    assert rel(lhs, pullback(N.power(3), a).values(pts2)) <= 1e-12
