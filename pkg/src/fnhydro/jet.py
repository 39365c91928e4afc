"""Truncated second-order jets, batched over sample points.

A :class:`Jet2` stores the value of a (possibly tensor-valued) function at a
batch of ``P`` points together with its first and second partial derivatives
with respect to the ``n`` coordinates:

* ``value`` has shape ``(P, *S)``
* ``grad``  has shape ``(P, *S, n)``
* ``hess``  has shape ``(P, *S, n, n)``

where ``S`` is the tensor shape (``()`` for scalars, ``(n,)`` for vectors and
1-forms, ``(n, n)`` for (1,1) tensors and 2-forms).  Higher parts may be
``None`` when a jet is truncated to a lower order, e.g. the result of a Lie
bracket only carries first derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DerivativeOrderError

MAX_ORDER = 2


@dataclass(frozen=True)
class Jet2:
    value: np.ndarray
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None

    @property
    def order(self) -> int:
        if self.grad is None:
            return 0
        if self.hess is None:
            return 1
        return 2

    @property
    def npoints(self) -> int:
        return self.value.shape[0]

    @property
    def shape(self) -> tuple:
        return self.value.shape[1:]

    def truncate(self, order: int) -> "Jet2":
        if order > self.order:
            raise DerivativeOrderError(
                f"jet of order {self.order} cannot supply order {order}"
            )
        return Jet2(
            self.value,
            self.grad if order >= 1 else None,
            self.hess if order >= 2 else None,
        )

    def at(self, i: int) -> "Jet2":
        """Unbatched view of point ``i``."""
        return Jet2(
            self.value[i],
            None if self.grad is None else self.grad[i],
            None if self.hess is None else self.hess[i],
        )

    def __add__(self, other: "Jet2") -> "Jet2":
        return _combine(self, other, np.add)

    def __sub__(self, other: "Jet2") -> "Jet2":
        return _combine(self, other, np.subtract)

    def __neg__(self) -> "Jet2":
        return Jet2(
            -self.value,
            None if self.grad is None else -self.grad,
            None if self.hess is None else -self.hess,
        )

    def scale(self, c: float) -> "Jet2":
        return Jet2(
            c * self.value,
            None if self.grad is None else c * self.grad,
            None if self.hess is None else c * self.hess,
        )


def _combine(a: Jet2, b: Jet2, op) -> Jet2:
    order = min(a.order, b.order)
    return Jet2(
        op(a.value, b.value),
        op(a.grad, b.grad) if order >= 1 else None,
        op(a.hess, b.hess) if order >= 2 else None,
    )


def constant(value: np.ndarray, ndim: int, order: int = 2) -> Jet2:
    """Jet of a field that is constant in space (per-point values allowed)."""
    value = np.asarray(value, dtype=float)
    grad = np.zeros(value.shape + (ndim,)) if order >= 1 else None
    hess = np.zeros(value.shape + (ndim, ndim)) if order >= 2 else None
    return Jet2(value, grad, hess)


def coordinate(points: np.ndarray, index: int, order: int = 2) -> Jet2:
    P, n = points.shape
    grad = hess = None
    if order >= 1:
        grad = np.zeros((P, n))
        grad[:, index] = 1.0
    if order >= 2:
        hess = np.zeros((P, n, n))
    return Jet2(points[:, index].astype(float), grad, hess)


def bilinear(a: Jet2, b: Jet2, spec: str) -> Jet2:
    """Product of two jets contracted per an einsum-style ``spec``.

    ``spec`` names only the tensor indices, e.g. ``"ij,jk->ik"`` for a matrix
    product or ``",i->i"`` for scaling a vector by a scalar.  The point index and
    derivative indices are added here; the Leibniz rule supplies the
    derivatives.
    """
    lhs, out = spec.split("->")
    ia, ib = lhs.split(",")
    reserved = set("pde")
    if reserved & set(ia + ib + out):
        raise ValueError("indices p, d, e are reserved")

    def es(x, y, z, *ops):
        return np.einsum(f"p{x},p{y}->p{z}", *ops)

    order = min(a.order, b.order)
    value = es(ia, ib, out, a.value, b.value)
    grad = hess = None
    if order >= 1:
        grad = es(ia + "d", ib, out + "d", a.grad, b.value) + es(
            ia, ib + "d", out + "d", a.value, b.grad
        )
    if order >= 2:
        cross = es(ia + "d", ib + "e", out + "de", a.grad, b.grad)
        hess = (
            es(ia + "de", ib, out + "de", a.hess, b.value)
            + cross
            + np.swapaxes(cross, -1, -2)
            + es(ia, ib + "de", out + "de", a.value, b.hess)
        )
    return Jet2(value, grad, hess)


def derivative(a: Jet2) -> Jet2:
    """The jet of the partial derivatives, with the derivative index appended.

    Loses one order: a second-order jet of ``f`` yields a first-order jet of
    ``df``.
    """
    if a.order < 1:
        raise DerivativeOrderError("derivative of an order-0 jet")
    return Jet2(a.grad, a.hess, None)


def transpose(a: Jet2) -> Jet2:
    """Swap the two tensor indices of a rank-2 jet."""
    if len(a.shape) != 2:
        raise ValueError("transpose needs a rank-2 tensor jet")
    return Jet2(
        np.swapaxes(a.value, 1, 2),
        None if a.grad is None else np.swapaxes(a.grad, 1, 2),
        None if a.hess is None else np.swapaxes(a.hess, 1, 2),
    )


def stack(jets: list, axis_shape: tuple) -> Jet2:
    """Assemble scalar jets into one tensor jet of shape ``axis_shape``."""
    order = min(j.order for j in jets)
    P = jets[0].npoints

    def part(name, tail):
        arrs = [getattr(j, name) for j in jets]
        return np.stack(arrs, axis=1).reshape((P,) + axis_shape + tail)

    n = jets[0].grad.shape[-1] if order >= 1 else 0
    return Jet2(
        part("value", ()),
        part("grad", (n,)) if order >= 1 else None,
        part("hess", (n, n)) if order >= 2 else None,
    )


def component(a: Jet2, index: tuple) -> Jet2:
    sl = (slice(None),) + tuple(index)
    return Jet2(
        a.value[sl],
        None if a.grad is None else a.grad[sl],
        None if a.hess is None else a.hess[sl],
    )
