"""Scalar fields, vector fields, 1- and 2-forms and (1,1) tensor fields.

Every field is a lazy, immutable evaluator mapping a batch of points to a
:class:`~fnhydro.jet.Jet2`.  Operations (pullback, Lie bracket, exterior
derivative, ...) build new fields from old ones without evaluating anything;
derivatives propagate exactly through the Leibniz rule.

Index conventions: a (1,1) tensor ``N`` evaluates to an ``(n, n)`` array with
``N[mu, nu] = N^mu_nu`` (row = upper index).  A 2-form ``w`` evaluates to the
full antisymmetric matrix ``w[mu, nu] = w_{mu nu}`` with
``(a ^ b)_{mu nu} = a_mu b_nu - a_nu b_mu``.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable, Sequence

import numpy as np

from . import jet as J
from .errors import DerivativeOrderError, DimensionError
from .exprdsl import Expr, default_names, parse
from .jet import MAX_ORDER, Jet2

__all__ = [
    "Field",
    "ScalarField",
    "VectorField",
    "OneForm",
    "TwoForm",
    "Tensor11",
    "as_points",
    "identity",
    "apply11",
    "pullback",
    "compose11",
    "lie_bracket",
    "exterior_d",
    "insert11",
    "grad",
    "wedge",
    "contract",
    "constant_vector_field",
    "linear_vector_field",
]

_CACHE_SIZE = 8


def as_points(points, dim: int) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {np.shape(points)}")
    return p


class Field:
    """Base class: a batched jet evaluator of fixed tensor kind."""

    kind = "field"

    def __init__(
        self,
        dim: int,
        evaluator: Callable[[np.ndarray, int], Jet2],
        *,
        max_order: int = MAX_ORDER,
        recipe: str = "",
    ):
        self.dim = int(dim)
        self._evaluator = evaluator
        self.max_order = min(int(max_order), MAX_ORDER)
        self.recipe = recipe
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    @property
    def shape(self) -> tuple:
        raise NotImplementedError

    def jet(self, points, order: int = MAX_ORDER) -> Jet2:
        if order > self.max_order:
            raise DerivativeOrderError(
                f"{self.kind} '{self.recipe}' supplies derivatives up to order "
                f"{self.max_order}, {order} requested"
            )
        pts = as_points(points, self.dim)
        key = (pts.shape, pts.tobytes())
        with self._lock:
            for (k, o), cached in self._cache.items():
                if k == key and o >= order:
                    self._cache.move_to_end((k, o))
                    return cached.truncate(order)
        result = self._evaluator(pts, order)
        if result.value.shape != (pts.shape[0],) + self.shape:
            raise AssertionError(
                f"evaluator for {self.recipe!r} returned shape {result.value.shape}"
            )
        with self._lock:
            self._cache[(key, order)] = result
            while len(self._cache) > _CACHE_SIZE:
                self._cache.popitem(last=False)
        return result

    def values(self, points) -> np.ndarray:
        return self.jet(points, 0).value

    def __call__(self, points):
        """Values at ``points``; a single point returns an unbatched result."""
        single = np.ndim(points) == 1
        v = self.values(points)
        return v[0] if single else v

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim}, {self.recipe!r})"

    def _like(self, evaluator, max_order, recipe):
        return type(self)(self.dim, evaluator, max_order=max_order, recipe=recipe)

    def _check_same(self, other: "Field"):
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if isinstance(other, (int, float)) and isinstance(self, ScalarField):
            other = ScalarField.constant(other, self.dim)
        self._check_same(other)
        a, b = self, other
        return self._like(
            lambda p, o: a.jet(p, o) + b.jet(p, o),
            min(a.max_order, b.max_order),
            f"({a.recipe} + {b.recipe})",
        )

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)) and isinstance(self, ScalarField):
            other = ScalarField.constant(other, self.dim)
        self._check_same(other)
        a, b = self, other
        return self._like(
            lambda p, o: a.jet(p, o) - b.jet(p, o),
            min(a.max_order, b.max_order),
            f"({a.recipe} - {b.recipe})",
        )

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        a = self
        return self._like(lambda p, o: -a.jet(p, o), a.max_order, f"(-{a.recipe})")

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            c = float(other)
            a = self
            return self._like(lambda p, o: a.jet(p, o).scale(c), a.max_order, f"({c!r}*{a.recipe})")
        if isinstance(other, ScalarField):
            return scale(other, self)
        return NotImplemented

    def __rmul__(self, other):
        return self.__mul__(other)


class ScalarField(Field):
    kind = "scalar"

    def __init__(self, dim, evaluator, *, max_order=MAX_ORDER, recipe="", backing="derived"):
        super().__init__(dim, evaluator, max_order=max_order, recipe=recipe)
        self.backing = backing
        self.expr: Expr | None = None
        self.gradient_form: "OneForm | None" = None

    @property
    def shape(self) -> tuple:
        return ()

    def _like(self, evaluator, max_order, recipe):
        return ScalarField(self.dim, evaluator, max_order=max_order, recipe=recipe)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return NotImplemented

    @classmethod
    def from_expr(cls, source, dim: int | None = None, names: Sequence[str] | None = None):
        expr = source if isinstance(source, Expr) else parse(str(source), dim, names)
        f = cls(
            expr.dim,
            lambda p, o: expr.jet(p, o),
            max_order=MAX_ORDER,
            recipe=expr.to_source() if len(expr.to_source()) < 80 else "<expr>",
            backing="expression",
        )
        f.expr = expr
        return f

    @classmethod
    def constant(cls, c: float, dim: int):
        c = float(c)
        f = cls(
            dim,
            lambda p, o: J.constant(np.full(p.shape[0], c), dim, o),
            recipe=repr(c),
            backing="constant",
        )
        return f

    @classmethod
    def integral(
        cls,
        dim: int,
        value_fn: Callable[[np.ndarray], np.ndarray],
        gradient: "OneForm",
        recipe: str = "integral",
    ):
        """A field whose value comes from ``value_fn`` and whose exact gradient is ``gradient``.

        Derivatives never pass through ``value_fn``: the gradient and Hessian
        are read off the jet of the attached 1-form.
        """
        if gradient.dim != dim:
            raise DimensionError("gradient form has the wrong dimension")

        def evaluate(p, order):
            value = np.asarray(value_fn(p), dtype=float)
            if order == 0:
                return Jet2(value)
            g = gradient.jet(p, order - 1)
            hess = None
            if order >= 2:
                h = g.grad  # h[p, mu, d] = d_d rho_mu
                hess = 0.5 * (h + np.swapaxes(h, 1, 2))
            return Jet2(value, g.value, hess)

        f = cls(dim, evaluate, max_order=gradient.max_order + 1, recipe=recipe, backing="integral")
        f.gradient_form = gradient
        return f


def _coerce_scalar(c, dim, names) -> ScalarField:
    if isinstance(c, ScalarField):
        if c.dim != dim:
            raise DimensionError("component dimension mismatch")
        return c
    if isinstance(c, (int, float, np.floating)):
        return ScalarField.constant(float(c), dim)
    if isinstance(c, (str, Expr)):
        return ScalarField.from_expr(c, dim, names)
    raise TypeError(f"cannot build a scalar field from {c!r}")


def _stack_components(comps: list, shape: tuple):
    def evaluate(p, order):
        return J.stack([c.jet(p, order) for c in comps], shape)

    return evaluate, min(c.max_order for c in comps)


class _ComponentMixin:
    def component(self, *index) -> ScalarField:
        parent = self
        idx = tuple(index)
        return ScalarField(
            self.dim,
            lambda p, o: J.component(parent.jet(p, o), idx),
            max_order=self.max_order,
            recipe=f"{self.recipe}{list(idx)}",
        )


class VectorField(_ComponentMixin, Field):
    """Components X^mu."""

    kind = "vector"

    @property
    def shape(self):
        return (self.dim,)

    @classmethod
    def from_components(cls, comps: Sequence, dim: int | None = None, names=None):
        dim = dim or (len(names) if names else len(comps))
        if len(comps) != dim:
            raise DimensionError(f"{len(comps)} components for dim {dim}")
        fields = [_coerce_scalar(c, dim, names) for c in comps]
        ev, mo = _stack_components(fields, (dim,))
        return cls(dim, ev, max_order=mo, recipe="[" + ", ".join(f.recipe for f in fields) + "]")


class OneForm(_ComponentMixin, Field):
    """Components alpha_mu."""

    kind = "oneform"

    @property
    def shape(self):
        return (self.dim,)

    @classmethod
    def from_components(cls, comps: Sequence, dim: int | None = None, names=None):
        dim = dim or (len(names) if names else len(comps))
        if len(comps) != dim:
            raise DimensionError(f"{len(comps)} components for dim {dim}")
        fields = [_coerce_scalar(c, dim, names) for c in comps]
        ev, mo = _stack_components(fields, (dim,))
        return cls(dim, ev, max_order=mo, recipe="[" + ", ".join(f.recipe for f in fields) + "]")


class TwoForm(_ComponentMixin, Field):
    """Antisymmetric components w_{mu nu}, evaluated as full matrices."""

    kind = "twoform"

    @property
    def shape(self):
        return (self.dim, self.dim)

    @classmethod
    def from_upper(cls, upper: dict, dim: int, names=None):
        """Build from ``{(mu, nu): component}`` with ``mu < nu``; the rest is implied."""
        zero = ScalarField.constant(0.0, dim)
        comps = [[zero] * dim for _ in range(dim)]
        for (mu, nu), c in upper.items():
            if not mu < nu:
                raise ValueError("only strict upper-triangle entries may be given")
            f = _coerce_scalar(c, dim, names)
            comps[mu][nu] = f
            comps[nu][mu] = -f
        flat = [c for row in comps for c in row]
        ev, mo = _stack_components(flat, (dim, dim))
        return cls(dim, ev, max_order=mo, recipe="2-form")


class Tensor11(_ComponentMixin, Field):
    """Components N^mu_nu (row = upper index)."""

    kind = "tensor11"

    @property
    def shape(self):
        return (self.dim, self.dim)

    @classmethod
    def from_components(cls, rows: Sequence[Sequence], names=None, recipe: str | None = None):
        dim = len(rows)
        if any(len(r) != dim for r in rows):
            raise DimensionError("a (1,1) tensor needs a square component matrix")
        if names is not None and len(names) != dim:
            raise DimensionError("coordinate names do not match the matrix size")
        flat = [_coerce_scalar(c, dim, names) for r in rows for c in r]
        ev, mo = _stack_components(flat, (dim, dim))
        if recipe is None:
            recipe = "[" + "; ".join(", ".join(f.recipe for f in flat[i * dim:(i + 1) * dim]) for i in range(dim)) + "]"
        return cls(dim, ev, max_order=mo, recipe=recipe)

    @classmethod
    def diag(cls, entries: Sequence, names=None):
        n = len(entries)
        return cls.from_components(
            [[entries[i] if i == j else 0.0 for j in range(n)] for i in range(n)], names
        )

    def __matmul__(self, other):
        if isinstance(other, Tensor11):
            return compose11(self, other)
        if isinstance(other, VectorField):
            return apply11(self, other)
        return NotImplemented

    def power(self, k: int) -> "Tensor11":
        if k < 0:
            raise ValueError("negative power")
        out = identity(self.dim)
        for _ in range(k):
            out = compose11(self, out)
        return out


def identity(dim: int) -> Tensor11:
    eye = np.eye(dim)
    return Tensor11(
        dim,
        lambda p, o: J.constant(np.broadcast_to(eye, (p.shape[0], dim, dim)).copy(), dim, o),
        recipe="I",
    )


def constant_vector_field(vector) -> VectorField:
    vec = np.asarray(vector, dtype=float)
    dim = vec.size
    return VectorField(
        dim,
        lambda p, o: J.constant(np.broadcast_to(vec, (p.shape[0], dim)).copy(), dim, o),
        recipe=f"const{vec.tolist()}",
    )


def linear_vector_field(dim: int, nu: int, mu: int) -> VectorField:
    """The field x^nu d/dx^mu."""
    comps = [0.0] * dim
    comps[mu] = ScalarField.from_expr(default_names(dim)[nu], dim)
    return VectorField.from_components(comps, dim)


def _check_dims(*fields):
    dims = {f.dim for f in fields}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")


def _require(f, cls, what):
    if not isinstance(f, cls):
        raise TypeError(f"{what} must be a {cls.__name__}, got {type(f).__name__}")


def scale(f: ScalarField, X: Field) -> Field:
    """Pointwise product of a scalar field with any field."""
    _check_dims(f, X)
    shape = X.shape
    idx = "ijkl"[: len(shape)]
    spec = f",{idx}->{idx}"
    return X._like(
        lambda p, o: J.bilinear(f.jet(p, o), X.jet(p, o), spec),
        min(f.max_order, X.max_order),
        f"({f.recipe}*{X.recipe})",
    )


def apply11(N: Tensor11, X: VectorField) -> VectorField:
    """(NX)^mu = N^mu_nu X^nu."""
    _require(N, Tensor11, "N")
    _require(X, VectorField, "X")
    _check_dims(N, X)
    return VectorField(
        N.dim,
        lambda p, o: J.bilinear(N.jet(p, o), X.jet(p, o), "ij,j->i"),
        max_order=min(N.max_order, X.max_order),
        recipe=f"{N.recipe}({X.recipe})",
    )


def pullback(N: Tensor11, alpha: OneForm) -> OneForm:
    """(N^* alpha)_nu = alpha_mu N^mu_nu."""
    _require(N, Tensor11, "N")
    _require(alpha, OneForm, "alpha")
    _check_dims(N, alpha)
    return OneForm(
        N.dim,
        lambda p, o: J.bilinear(alpha.jet(p, o), N.jet(p, o), "i,ij->j"),
        max_order=min(N.max_order, alpha.max_order),
        recipe=f"{N.recipe}^*{alpha.recipe}",
    )


def compose11(N1: Tensor11, N2: Tensor11) -> Tensor11:
    """Pointwise matrix product N1 N2."""
    _require(N1, Tensor11, "N1")
    _require(N2, Tensor11, "N2")
    _check_dims(N1, N2)
    return Tensor11(
        N1.dim,
        lambda p, o: J.bilinear(N1.jet(p, o), N2.jet(p, o), "ij,jk->ik"),
        max_order=min(N1.max_order, N2.max_order),
        recipe=f"{N1.recipe}.{N2.recipe}",
    )


def contract(alpha: OneForm, X: VectorField) -> ScalarField:
    """alpha(X) = alpha_mu X^mu."""
    _check_dims(alpha, X)
    return ScalarField(
        alpha.dim,
        lambda p, o: J.bilinear(alpha.jet(p, o), X.jet(p, o), "i,i->"),
        max_order=min(alpha.max_order, X.max_order),
        recipe=f"{alpha.recipe}({X.recipe})",
    )


def bracket_jet(X: Jet2, Y: Jet2) -> Jet2:
    """[X,Y]^mu = X^s d_s Y^mu - Y^s d_s X^mu on jets; loses one order."""
    return J.bilinear(X, J.derivative(Y), "s,ms->m") - J.bilinear(Y, J.derivative(X), "s,ms->m")


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    _require(X, VectorField, "X")
    _require(Y, VectorField, "Y")
    _check_dims(X, Y)
    return VectorField(
        X.dim,
        lambda p, o: bracket_jet(X.jet(p, o + 1), Y.jet(p, o + 1)),
        max_order=min(X.max_order, Y.max_order) - 1,
        recipe=f"[{X.recipe}, {Y.recipe}]",
    )


def d_jet(alpha: Jet2) -> Jet2:
    """(d alpha)_{mu nu} = d_mu alpha_nu - d_nu alpha_mu on a 1-form jet."""
    D = J.derivative(alpha)  # D[nu, mu] = d_mu alpha_nu
    return J.transpose(D) - D


def grad(f: ScalarField) -> OneForm:
    """The differential df.

    Expression-backed fields are differentiated symbolically so that df
    keeps full second-order jets; integral-backed fields return their attached
    exact gradient.
    """
    _require(f, ScalarField, "f")
    if f.backing == "integral":
        return f.gradient_form
    if f.backing == "expression":
        return OneForm.from_components(
            [ScalarField.from_expr(f.expr.derivative(i)) for i in range(f.dim)], f.dim
        )
    if f.backing == "constant":
        zero = ScalarField.constant(0.0, f.dim)
        return OneForm.from_components([zero] * f.dim, f.dim)
    return OneForm(
        f.dim,
        lambda p, o: J.derivative(f.jet(p, o + 1)),
        max_order=f.max_order - 1,
        recipe=f"d{f.recipe}",
    )


def exterior_d(alpha: OneForm | ScalarField):
    """Exterior derivative of a function (-> 1-form) or a 1-form (-> 2-form)."""
    if isinstance(alpha, ScalarField):
        return grad(alpha)
    _require(alpha, OneForm, "alpha")
    return TwoForm(
        alpha.dim,
        lambda p, o: d_jet(alpha.jet(p, o + 1)),
        max_order=alpha.max_order - 1,
        recipe=f"d{alpha.recipe}",
    )


def wedge(alpha: OneForm, beta: OneForm) -> TwoForm:
    _require(alpha, OneForm, "alpha")
    _require(beta, OneForm, "beta")
    _check_dims(alpha, beta)

    def evaluate(p, o):
        ab = J.bilinear(alpha.jet(p, o), beta.jet(p, o), "i,j->ij")
        return ab - J.transpose(ab)

    return TwoForm(
        alpha.dim,
        evaluate,
        max_order=min(alpha.max_order, beta.max_order),
        recipe=f"{alpha.recipe}^{beta.recipe}",
    )


def insert11(N: Tensor11, omega: OneForm | TwoForm):
    """Insertion of the vector part of N, a degree-0 derivation on forms.

    On 1-forms this is the pullback; on 2-forms
    ``(N _| w)_{mu nu} = N^l_mu w_{l nu} + w_{mu l} N^l_nu``.
    """
    _require(N, Tensor11, "N")
    if isinstance(omega, OneForm):
        return pullback(N, omega)
    if not isinstance(omega, TwoForm):
        raise TypeError(f"insertion supports 1- and 2-forms, got {type(omega).__name__}")
    _check_dims(N, omega)

    def evaluate(p, o):
        n, w = N.jet(p, o), omega.jet(p, o)
        return J.bilinear(n, w, "lm,ln->mn") + J.bilinear(w, n, "ml,ln->mn")

    return TwoForm(
        N.dim,
        evaluate,
        max_order=min(N.max_order, omega.max_order),
        recipe=f"{N.recipe}_|{omega.recipe}",
    )
