import warnings

import numpy as np
import pytest

from fnhydro.calculus import ScalarField, Tensor11
from fnhydro.chains import lm_chain
from fnhydro.errors import BlowupError, CFLError, DimensionError
from fnhydro.hydro import (
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
from fnhydro.sampling import Domain

N_DIAG = Tensor11.diag(["x1", "x2"])
HOPF = FlowSpec(N_DIAG, "hopf")


def test_advection_is_accurate():
    flow = FlowSpec(Tensor11.diag(["0.7", "0.7"]))
    sol = simulate(flow, ["sin(2*pi*y)", "cos(2*pi*y)"], 200, 1.0, 0.5)
    y = sol.y - 0.35
    exact = np.column_stack([np.sin(2 * np.pi * y), np.cos(2 * np.pi * y)])
    assert l2_norm(sol.final - exact, sol.dy) < 1e-3
    assert sol.times[-1] == pytest.approx(0.5)


def test_constant_state_is_fixed():
    sol = simulate(HOPF, ["0.3", "-1.2"], 32, 1.0, 0.2)
    assert np.array_equal(sol.final, sol.frames[0])


def test_hopf_matches_characteristics():
    x0 = [lambda y: 0.5 + 0.2 * np.sin(2 * np.pi * y), lambda y: -0.3 + 0.15 * np.cos(2 * np.pi * y)]
    T = 0.3
    sol = simulate(HOPF, ["0.5 + 0.2*sin(2*pi*y)", "-0.3 + 0.15*cos(2*pi*y)"], 400, 1.0, T)
    exact = np.column_stack([hopf_characteristics(f, T, sol.y, 1.0) for f in x0])
    assert l2_norm(sol.final - exact, sol.dy) < 1e-4


def test_initial_forms_agree():
    exprs = ["sin(2*pi*y)", "0.5"]
    a = simulate(HOPF, exprs, 16, 1.0, 0.0)
    b = simulate(HOPF, lambda y: np.column_stack([np.sin(2 * np.pi * y), 0.5 + 0 * y]), 16, 1.0, 0.0)
    assert np.allclose(a.frames[0], b.frames[0])
    c = simulate(HOPF, a.frames[0], 16, 1.0, 0.0)
    assert np.array_equal(a.frames[0], c.frames[0])


def test_shock_raises_blowup_with_frame():
    with pytest.raises(BlowupError) as err:
        simulate(HOPF, ["0.5 + 0.2*sin(2*pi*y)", "0.1"], 200, 1.0, 3.0)
    exc = err.value
    assert exc.frame_index >= 1
    assert exc.time is not None and 0.5 < exc.time < 3.0
    assert exc.last_frame.shape == (200, 2)


def test_step_cfl_guard():
    x = np.full((10, 2), 1.0)
    with pytest.raises(CFLError):
        step(HOPF, x, dt=1.0, dy=0.1)
    with pytest.raises(DimensionError):
        step(HOPF, np.ones((10, 3)), 0.01, 0.1)


def test_simulate_argument_errors():
    with pytest.raises(ValueError):
        simulate(HOPF, ["0", "0"], 3, 1.0, 0.1)
    with pytest.raises(ValueError):
        simulate(HOPF, ["0", "0"], 8, 1.0, 0.1, dt=0.03)


def test_csv_and_report():
    sol = simulate(HOPF, ["0.1*sin(2*pi*y)", "0.2"], 8, 1.0, 0.05, save_every=1000)
    lines = sol.to_csv().splitlines()
    assert lines[0] == "t,y,x1,x2"
    assert len(lines) == 1 + 8 * len(sol.times)
    rep = sol.report(extra=1)
    assert rep["params"]["Ny"] == 8 and rep["extra"] == 1
    assert len(rep["cfl_log"]) == len(rep["times"]) == len(rep["shock_monitor"])
    assert max(rep["cfl_log"]) <= 0.4


def test_simulation_is_deterministic():
    init = ["0.5 + 0.2*sin(2*pi*y)", "0.1*cos(2*pi*y)"]
    a = simulate(HOPF, init, 64, 1.0, 0.1)
    b = simulate(HOPF, init, 64, 1.0, 0.1)
    assert np.array_equal(a.frames, b.frames)


def test_conservation_residual_constant_solution_is_zero():
    sol = simulate(HOPF, ["0.3", "0.7"], 16, 1.0, 0.1)
    f = ScalarField.from_expr("x1 + x2", 2)
    h = ScalarField.from_expr("-x1*x2", 2)
    assert np.all(conservation_residual(sol, f, h, certificate=0.0) == 0.0)


def test_conservation_residual_warns_without_certificate():
    sol = simulate(HOPF, ["0.3", "0.7"], 16, 1.0, 0.1)
    f = ScalarField.from_expr("x1", 2)
    with pytest.warns(UserWarning):
        conservation_residual(sol, f, f)
    with pytest.warns(UserWarning):
        conservation_residual(sol, f, f, certificate=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        conservation_residual(sol, f, f, certificate=0.0)


def test_conservation_for_hopf_pair_is_small():
    chain = lm_chain(N_DIAG, ScalarField.from_expr("x1 + x2", 2), 1, closed_forms={1: "-x1*x2"})
    sol = simulate(chain_flow(chain, 1), ["0.3 + 0.1*sin(2*pi*y)", "0.6 + 0.1*cos(2*pi*y)"], 200, 1.0, 0.1)
    r = conservation_residual(sol, chain.a[0], chain.a[1], certificate=0.0)
    assert np.max(r) < 1e-3


def test_commutation_of_equal_flows_is_exact():
    res = commutation_experiment(HOPF, HOPF, ["0.3 + 0.1*sin(2*pi*y)", "0.5"], 32, 1.0, 0.05, 0.05)
    assert res.discrepancy == 0.0


def test_pointwise_compatibility_cases():
    pts = Domain.default(2).sample(50, 9)
    assert pointwise_compatibility(N_DIAG, N_DIAG.power(2), pts).compatible
    chain = lm_chain(N_DIAG, ScalarField.from_expr("x1^2 + x2", 2), 2)
    assert pointwise_compatibility(chain.M[1], chain.M[2], pts).compatible
    ctrl = pointwise_compatibility(N_DIAG, Tensor11.diag(["x2", "x1"]), pts)
    assert ctrl.commutator == 0.0 and ctrl.bracket > 1e-3 and not ctrl.compatible
    with pytest.raises(DimensionError):
        pointwise_compatibility(N_DIAG, Tensor11.diag(["x1", "x2", "x3"]), pts)


def test_compat_test_fields_count():
    assert len(compat_test_fields(3)) == 3 + 9 + 3


def test_refinement_ratios():
    assert refinement_ratios([4.0, 1.0, 0.25]) == [4.0, 4.0]
    assert refinement_ratios([1.0, 0.0]) == [float("inf")]
