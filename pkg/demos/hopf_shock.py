"""Decoupled Hopf system x_t + diag(x1, x2) x_y = 0 run into its first shock.

The solver refuses to continue past gradient blow-up and reports the last good
frame.  Frames up to that point are written as CSV.

Run:  python3 demos/hopf_shock.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from fnhydro import FlowSpec, Tensor11, simulate
from fnhydro.errors import BlowupError
from fnhydro.hydro import hopf_characteristics, l2_norm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
out.mkdir(exist_ok=True)
flow = FlowSpec(Tensor11.diag(["x1", "x2"]), "hopf")
init = ["0.5 + 0.2*sin(2*pi*y)", "-0.3 + 0.15*cos(2*pi*y)"]
tstar = 1.0 / (0.2 * 2 * np.pi)  # first shock, from the steepest slope of x1

sol = simulate(flow, init, 400, 1.0, 0.5 * tstar, save_every=20)
x1 = hopf_characteristics(lambda y: 0.5 + 0.2 * np.sin(2 * np.pi * y), sol.times[-1], sol.y, 1.0)
print(f"t = {sol.times[-1]:.3f}: L2 error in x1 against characteristics {l2_norm(sol.final[:, 0] - x1, sol.dy):.2e}")
sol.to_csv(out / "hopf-preshock.csv")

try:
    simulate(flow, init, 400, 1.0, 2 * tstar)
except BlowupError as exc:
    print(f"blow-up at frame {exc.frame_index}, t = {exc.time:.3f} (shock time {tstar:.3f}): {exc}")
