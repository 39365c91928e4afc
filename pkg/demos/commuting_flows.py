"""Refinement study: flows of one hierarchy commute, an unrelated pair does not.

Run:  python3 demos/commuting_flows.py
"""

from fnhydro import FlowSpec, ScalarField, Tensor11, commutation_experiment, lm_chain
from fnhydro.hydro import chain_flow, refinement_ratios

N = Tensor11.diag(["x1", "x2", "x3"])
chain = lm_chain(N, ScalarField.from_expr("x1 + x2 + x3", 3), 2,
                 closed_forms={1: "-(x1*x2 + x1*x3 + x2*x3)", 2: "x1*x2*x3"})
init = ["0.3 + 0.1*sin(2*pi*y)", "0.6 + 0.1*cos(2*pi*y)", "1.0 + 0.1*sin(4*pi*y)"]
levels = (50, 100, 200, 400)

pairs = {
    "M_1, M_2": (chain_flow(chain, 1), chain_flow(chain, 2), init),
    "diag(x1,x2), diag(x2,x1)": (FlowSpec(Tensor11.diag(["x1", "x2"])),
                                 FlowSpec(Tensor11.diag(["x2", "x1"])), init[:2]),
}
for label, (A, B, x0) in pairs.items():
    d = [commutation_experiment(A, B, x0, Ny, 1.0, 0.05, 0.05).discrepancy for Ny in levels]
    ratios = ", ".join(f"{r:.2f}" for r in refinement_ratios(d))
    print(f"{label:28s} discrepancy {d[0]:.2e} -> {d[-1]:.2e}  ratios {ratios}")
