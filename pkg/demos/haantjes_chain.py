"""Lorenzoni-Magri chain over N = diag(x1, x2): torsion survives, Haantjes vanishes.

Run:  python3 demos/haantjes_chain.py
"""

import numpy as np

from fnhydro import ScalarField, Tensor11, haantjes, lm_chain, nijenhuis_torsion
from fnhydro.sampling import Domain

N = Tensor11.diag(["x1", "x2"])
chain = lm_chain(N, ScalarField.from_expr("x1^2 + x2", 2), 4)

pts = Domain.default(2).sample(100, 1)
rng = np.random.default_rng(2)
U, V = rng.standard_normal((2, 100, 2))

print("a_k at (1, 1):", chain.values([[1.0, 1.0]])[0])
print(f"{'k':>2}  {'max |T(M_k)|':>14}  {'max |H(M_k)|':>14}  {'term scale':>12}")
for k in range(1, 5):
    M = chain.M[k]
    T = nijenhuis_torsion(M)(pts, U, V)
    H = haantjes(M)(pts, U, V)
    scale = np.max(np.abs(M.values(pts))) ** 2 * np.max(np.abs(T))
    print(f"{k:>2}  {np.max(np.abs(T)):14.4e}  {np.max(np.abs(H)):14.4e}  {scale:12.3e}")
# H sits at rounding level relative to the size of its four terms
