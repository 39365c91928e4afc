import json

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fnhydro.calculus import OneForm, ScalarField, Tensor11, grad, identity
from fnhydro.chains import (
    conservation_pair,
    covariant_dN_check,
    eval_chain_at,
    export_chain,
    is_biclosed,
    lenard_chain,
    lm_chain,
    potential,
)
from fnhydro.errors import ChainInconsistencyError, NotClosedError, SeedConditionError, TorsionError
from fnhydro.sampling import Domain

N_DIAG = Tensor11.diag(["x1", "x2"])
TRACE = ScalarField.from_expr("x1 + x2", 2)


@pytest.fixture(scope="module")
def trace_chain():
    return lm_chain(N_DIAG, TRACE, 3)


def form(*comps):
    return OneForm.from_components(list(comps), len(comps))


# -- potentials -------------------------------------------------------------


def test_potential_of_exact_form(pts2):
    a = potential(form("x2", "x1"), [0.0, 0.0])
    assert np.allclose(a.values(pts2), pts2[:, 0] * pts2[:, 1], atol=1e-10)
    assert np.allclose(grad(a).values(pts2), pts2[:, ::-1])


def test_potential_basepoint_shift():
    a = potential(form("2*x1", "0"), [1.0, 0.0])
    assert a([3.0, -1.0]) == pytest.approx(8.0, abs=1e-10)


def test_potential_not_closed():
    with pytest.raises(NotClosedError) as err:
        potential(form("x2", "0"), [0.0, 0.0])
    assert err.value.residual > 0.1


def test_potential_bad_basepoint():
    with pytest.raises(ValueError):
        potential(form("x2", "x1"), [0.0])


def test_path_independence():
    # two basepoints give potentials differing by a constant
    rho = grad(ScalarField.from_expr("sin(x1)*x2 + x2^3", 2))
    pts = Domain.default(2).sample(20, 3)
    a = potential(rho, [0.0, 0.0]).values(pts)
    b = potential(rho, [1.0, -1.0]).values(pts)
    assert np.ptp(a - b) <= 1e-9


def test_is_biclosed():
    pts = Domain.default(2).sample(30, 4)
    assert is_biclosed(grad(TRACE), N_DIAG, pts).biclosed
    rep = is_biclosed(grad(ScalarField.from_expr("x1*x2", 2)), N_DIAG, pts)
    assert rep.closed and not rep.n_closed


# -- Lenard -----------------------------------------------------------------


def test_lenard_values(pts2):
    chain = lenard_chain(N_DIAG, TRACE, 2)
    v = chain.values(pts2)
    assert np.allclose(v[:, 1], 0.5 * (pts2 ** 2).sum(axis=1), atol=1e-8)
    assert np.allclose(v[:, 2], (pts2 ** 3).sum(axis=1) / 3, atol=1e-8)
    assert chain.provenance == ("expression", "segment-quadrature", "segment-quadrature")


def test_lenard_seed_condition():
    with pytest.raises(SeedConditionError):
        lenard_chain(N_DIAG, ScalarField.from_expr("x1*x2", 2), 1)


def test_lenard_rejects_torsion():
    with pytest.raises(TorsionError):
        lenard_chain(Tensor11.diag(["x2", "x1"]), TRACE, 1)


def test_lenard_nilpotent_control():
    N = Tensor11.from_components([["0", "x2"], ["0", "0"]])
    chain = lenard_chain(N, ScalarField.from_expr("x2", 2), 2)
    pts = Domain.default(2).sample(10, 5)
    assert np.allclose(chain.values(pts)[:, 1:], 0.0)


# -- Lorenzoni-Magri -------------------------------------------------------


def test_lm_trace_chain_values(trace_chain, pts2):
    v = trace_chain.values(pts2)
    assert np.allclose(v[:, 1], -pts2[:, 0] * pts2[:, 1], atol=1e-8)
    assert np.allclose(v[:, 2:], 0.0, atol=1e-8)
    assert eval_chain_at(trace_chain, [1.0, 1.0])[1] == pytest.approx(-1.0, abs=1e-8)


def test_lm_identity_chain():
    chain = lm_chain(identity(2), TRACE, 1)
    pts = Domain.default(2).sample(20, 6)
    a0 = pts.sum(axis=1)
    assert np.allclose(chain.values(pts)[:, 1], a0 - a0 ** 2 / 2, atol=1e-8)


def test_lm_3d_trace_chain():
    chain = lm_chain(Tensor11.diag(["x1", "x2", "x3"]), ScalarField.from_expr("x1 + x2 + x3", 3), 3)
    pts = Domain.default(3).sample(15, 7)
    x1, x2, x3 = pts.T
    v = chain.values(pts)
    assert np.allclose(v[:, 1], -(x1 * x2 + x1 * x3 + x2 * x3), atol=1e-8)
    assert np.allclose(v[:, 2], x1 * x2 * x3, atol=1e-8)
    assert np.allclose(v[:, 3], 0.0, atol=1e-8)


def test_ray_ode_against_scipy():
    chain = lm_chain(N_DIAG, ScalarField.from_expr("x1^2 + x2", 2), 2)
    p = np.array([1.3, -0.7])
    D = p - chain.basepoint

    def rhs(s, A):
        q = chain.basepoint + s * D
        x1, x2 = q
        g0 = np.array([2 * x1, 1.0])
        a0 = x1 * x1 + x2
        N = np.diag(q)
        M1 = N - a0 * np.eye(2)
        M2 = N @ M1 - A[0] * np.eye(2)
        return [g0 @ M1 @ D, g0 @ M2 @ D]

    ref = solve_ivp(rhs, (0, 1), [0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12).y[:, -1]
    assert np.allclose(eval_chain_at(chain, p)[1:], ref, atol=1e-9)


def test_values_consistent_with_attached_gradient():
    chain = lm_chain(N_DIAG, ScalarField.from_expr("x1^2 + x2", 2), 3)
    pts = Domain.default(2).sample(10, 8) * 0.8
    h = 1e-5
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (chain.values(pts + e) - chain.values(pts - e)) / (2 * h)
        for k in range(1, 4):
            exact = grad(chain.a[k]).values(pts)[:, i]
            assert np.allclose(fd[:, k], exact, atol=1e-6 * max(1, np.max(np.abs(exact))))


def test_lm_closed_forms_fast_path(pts2):
    chain = lm_chain(N_DIAG, TRACE, 2, closed_forms={1: "-x1*x2", 2: "0"})
    assert chain.provenance[1].startswith("closed-form")
    assert chain.certificates["closed_form_deviation"][1] <= 1e-7
    assert np.allclose(chain.values(pts2)[:, 1], -pts2[:, 0] * pts2[:, 1])


def test_lm_closed_form_mismatch():
    with pytest.raises(ChainInconsistencyError):
        lm_chain(N_DIAG, TRACE, 2, closed_forms={1: "x1*x2"})
    with pytest.raises(ValueError):
        lm_chain(N_DIAG, TRACE, 2, closed_forms={5: "0"})


def test_lm_seed_condition():
    with pytest.raises(SeedConditionError):
        lm_chain(N_DIAG, ScalarField.from_expr("x1*x2", 2), 2)


def test_depth_cap():
    with pytest.raises(ValueError):
        lm_chain(N_DIAG, TRACE, 13)
    with pytest.raises(ValueError):
        lenard_chain(N_DIAG, TRACE, -1)


def test_sweeper_cache(trace_chain, pts2):
    before = trace_chain.sweeper.evaluations
    trace_chain.values(pts2)
    trace_chain.values(pts2.copy())
    assert trace_chain.sweeper.evaluations - before <= 1


def test_covariant_relation(trace_chain, pts2):
    step, flat = covariant_dN_check(trace_chain, pts2)
    assert step <= 1e-8 and flat <= 1e-8


def test_covariant_requires_lm():
    with pytest.raises(ValueError):
        covariant_dN_check(lenard_chain(N_DIAG, TRACE, 1), Domain.default(2).sample(5, 1))


def test_first_step_matches_definition(pts2):
    # da_1 = d_N a_0 - a_0 da_0
    chain = lm_chain(N_DIAG, ScalarField.from_expr("x1^2 + x2", 2), 1)
    a0 = pts2[:, 0] ** 2 + pts2[:, 1]
    da0 = np.column_stack([2 * pts2[:, 0], np.ones(len(pts2))])
    expect = pts2 * da0 - a0[:, None] * da0
    assert np.allclose(grad(chain.a[1]).values(pts2), expect)


def test_conservation_pair(trace_chain, pts2):
    for k in range(0, 4):
        f, h, cert = conservation_pair(trace_chain, k, pts2)
        assert f is trace_chain.a[0] and h is trace_chain.a[k]
        assert cert <= 1e-12
    with pytest.raises(ValueError):
        conservation_pair(trace_chain, 4, pts2)


def test_export_chain_is_json(trace_chain):
    doc = export_chain(trace_chain, counts=[3, 4])
    text = json.dumps(doc)
    back = json.loads(text)
    assert len(back["lattice"]["points"]) == 12
    assert set(back["a"]) == {"0", "1", "2", "3"}
    assert len(back["certificates"]["conservation"]) == 3
