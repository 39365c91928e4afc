"""Batched Dormand-Prince 5(4) integrator with max-norm error control.

Every component of the state is held to ``atol + rtol * |y|`` individually
(no RMS averaging), so a batch of independent ray integrals all meet the
requested tolerance, not just on average.
"""

from __future__ import annotations

import numpy as np

from .errors import StepSizeError

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri5(rhs, y0, t0: float = 0.0, t1: float = 1.0, rtol: float = 1e-10, atol: float = 1e-10,
           h0: float | None = None, hmin: float = 1e-12, max_steps: int = 200_000):
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` and return ``(y(t1), stats)``.

    ``y0`` may have any shape; ``rhs`` must return an array of the same shape.
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    span = float(t1) - t
    if span == 0.0 or y.size == 0:
        return y, {"steps": 0, "rejected": 0}
    direction = np.sign(span)
    h = abs(h0) if h0 else min(abs(span), 0.01 * max(1.0, abs(span)))
    k = [None] * 7
    k[0] = np.asarray(rhs(t, y), dtype=float)
    steps = rejected = 0
    while direction * (t1 - t) > 0:
        if steps + rejected > max_steps:
            raise StepSizeError(f"exceeded {max_steps} steps")
        h = min(h, abs(t1 - t))
        hs = direction * h
        for i in range(1, 7):
            acc = y.copy()
            for j, a in enumerate(_A[i]):
                if a:
                    acc += hs * a * k[j]
            k[i] = np.asarray(rhs(t + _C[i] * hs, acc), dtype=float)
        y_new = acc  # stage 7 is evaluated at the 5th-order solution (FSAL)
        err = hs * sum(e * kk for e, kk in zip(_E, k) if e)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = float(np.max(np.abs(err) / scale))
        if not np.isfinite(ratio):
            raise StepSizeError("non-finite error estimate")
        if ratio <= 1.0:
            t += hs
            y = y_new
            k[0] = k[6]
            steps += 1
            factor = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
        else:
            rejected += 1
            factor = max(0.2, 0.9 * ratio ** -0.2)
        h *= factor
        if h < hmin and direction * (t1 - t) > hmin:
            raise StepSizeError(f"step size {h:.3e} below floor {hmin:.1e} at t={t:.6g}")
    return y, {"steps": steps, "rejected": rejected}
