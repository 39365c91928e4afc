"""Seeded sample points, random test data and tolerance scales."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exprdsl import Expr, default_names, parse

DEFAULT_BOX = (-2.0, 2.0)
DEFAULT_SAMPLES = 100
DEFAULT_SEED = 20240611
DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class Domain:
    """An axis-aligned box with a basepoint and excluded neighbourhoods.

    ``exclude`` holds ``(expr, margin)`` pairs; sample points with
    ``|expr(p)| < margin`` are rejected (singular loci of the data).
    """

    box: tuple
    basepoint: tuple
    exclude: tuple = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return len(self.box)

    @classmethod
    def default(cls, dim: int) -> "Domain":
        return cls(tuple([DEFAULT_BOX] * dim), tuple([0.0] * dim))

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return bool(np.all(p >= lo) and np.all(p <= hi))

    def sample(self, count: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED) -> np.ndarray:
        return sample_points(self, count, seed)


def sample_points(domain: Domain, count: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in domain.box], dtype=float)
    hi = np.array([b[1] for b in domain.box], dtype=float)
    out = []
    have = 0
    for _ in range(1000):
        batch = rng.uniform(lo, hi, size=(2 * count, len(lo)))
        keep = np.ones(len(batch), dtype=bool)
        for expr, margin in domain.exclude:
            keep &= np.abs(expr(batch)) >= margin
        batch = batch[keep]
        out.append(batch)
        have += len(batch)
        if have >= count:
            break
    pts = np.concatenate(out)[:count]
    if len(pts) < count:
        raise RuntimeError("exclusion zones leave too little of the domain to sample")
    return pts


def scale_of(*arrays) -> float:
    """max(1, max |entry|) over all given arrays."""
    m = 1.0
    for a in arrays:
        a = np.asarray(a)
        if a.size:
            m = max(m, float(np.max(np.abs(a))))
    return m


def relative_residual(diff, *reference) -> float:
    diff = np.asarray(diff)
    if diff.size == 0:
        return 0.0
    return float(np.max(np.abs(diff))) / scale_of(*reference)


def random_polynomial(dim: int, degree: int, rng: np.random.Generator, names: Sequence[str] | None = None,
                      terms: int = 4) -> str:
    """Source text of a random polynomial with small integer-ish coefficients."""
    names = list(names or default_names(dim))
    parts = []
    for _ in range(terms):
        coeff = round(float(rng.uniform(-1.5, 1.5)), 3)
        deg = int(rng.integers(0, degree + 1))
        factors = [names[int(rng.integers(dim))] for _ in range(deg)]
        mono = "*".join(factors) if factors else "1"
        parts.append(f"({coeff!r})*{mono}")
    return " + ".join(parts)


def random_polynomial_expr(dim: int, degree: int, rng: np.random.Generator, terms: int = 4) -> Expr:
    return parse(random_polynomial(dim, degree, rng, terms=terms), dim)


def random_tensor_sources(dim: int, degree: int, rng: np.random.Generator) -> list:
    return [[random_polynomial(dim, degree, rng, terms=3) for _ in range(dim)] for _ in range(dim)]
