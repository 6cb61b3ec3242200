"""Polynomial candidate-term library over states and inputs.

Terms are monomials of total degree <= max_order in the concatenated
(X, U) variables, ordered graded-lexicographically with the constant term
first: for two states and order 2 the library is {1, x, y, x^2, xy, y^2}.
The library size is C(max_order + n + m, n + m).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from ..dynamics import DynSystem

__all__ = [
    "TermLibrary",
    "CoeffVector",
    "build_library",
    "eval_library",
    "eval_library_batch",
    "library_state_jacobian",
    "library_system",
    "term_label",
]


@dataclass(frozen=True)
class TermLibrary:
    n: int
    m: int
    max_order: int
    terms: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def n_vars(self) -> int:
        return self.n + self.m

    def labels(self) -> list[str]:
        return [term_label(e, self.n) for e in self.terms]


def term_label(exponents: tuple[int, ...], n: int) -> str:
    if not any(exponents):
        return "1"
    parts = []
    for i, e in enumerate(exponents):
        if e == 0:
            continue
        name = f"x{i + 1}" if i < n else f"u{i - n + 1}"
        parts.append(name if e == 1 else f"{name}^{e}")
    return "*".join(parts)


def build_library(n: int, m: int, max_order: int) -> TermLibrary:
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    if n < 1 or m < 0:
        raise ValueError("need n >= 1 and m >= 0")
    nv = n + m
    terms: list[tuple[int, ...]] = []
    for deg in range(max_order + 1):
        exps = set()
        for combo in combinations_with_replacement(range(nv), deg):
            e = [0] * nv
            for i in combo:
                e[i] += 1
            exps.add(tuple(e))
        # graded lex: x before y within a degree block
        terms.extend(sorted(exps, key=lambda t: tuple(-x for x in t)))
    lib = TermLibrary(n=n, m=m, max_order=max_order, terms=tuple(terms))
    assert lib.size == comb(max_order + nv, nv)
    return lib


@lru_cache(maxsize=64)
def _exponent_arrays(lib: TermLibrary) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """Exponent matrix (p x nv) and, per state var, the reduced exponents
    used by the jacobian (clipped at zero so 0**-1 never appears)."""
    exp = np.array(lib.terms, dtype=np.int64)
    reduced = []
    for s in range(lib.n):
        one = np.zeros(lib.n_vars, dtype=np.int64)
        one[s] = 1
        reduced.append(np.maximum(exp - one, 0))
    return exp, tuple(reduced)


def _variables(lib: TermLibrary, x: np.ndarray, u: np.ndarray | None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (lib.n,):
        raise ValueError(f"state must have length {lib.n}")
    if lib.m == 0:
        return x
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (lib.m,):
        raise ValueError(f"input must have length {lib.m}")
    return np.concatenate([x, u])


def eval_library(lib: TermLibrary, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
    """Monomial evaluations in library order."""
    v = _variables(lib, x, u)
    exp, _ = _exponent_arrays(lib)
    return np.prod(v[None, :] ** exp, axis=1)


def eval_library_batch(lib: TermLibrary, xs: np.ndarray,
                       us: np.ndarray | None = None) -> np.ndarray:
    """Library matrix for N samples (N x p); vectorised over samples."""
    xs = np.asarray(xs, dtype=np.float64)
    if us is not None and us.shape[1] > 0:
        v = np.hstack([xs, np.asarray(us, dtype=np.float64)])
    else:
        v = xs
    exp, _ = _exponent_arrays(lib)
    return np.prod(v[:, None, :] ** exp[None, :, :], axis=2)


def library_state_jacobian(lib: TermLibrary, x: np.ndarray,
                           u: np.ndarray | None = None) -> np.ndarray:
    """d(terms)/d(state) evaluated at (x, u); shape p x n."""
    v = _variables(lib, x, u)
    exp, reduced = _exponent_arrays(lib)
    jac = np.empty((lib.size, lib.n))
    for s in range(lib.n):
        jac[:, s] = exp[:, s] * np.prod(v[None, :] ** reduced[s], axis=1)
    return jac


def library_state_jacobian_batch(lib: TermLibrary, xs: np.ndarray,
                                 us: np.ndarray | None = None) -> np.ndarray:
    """Batched state jacobians; shape N x p x n."""
    xs = np.asarray(xs, dtype=np.float64)
    if us is not None and us.shape[1] > 0:
        v = np.hstack([xs, np.asarray(us, dtype=np.float64)])
    else:
        v = xs
    exp, reduced = _exponent_arrays(lib)
    jac = np.empty((v.shape[0], lib.size, lib.n))
    for s in range(lib.n):
        jac[:, :, s] = exp[None, :, s] * np.prod(
            v[:, None, :] ** reduced[s][None, :, :], axis=2)
    return jac


@dataclass
class CoeffVector:
    """Per-equation coefficients over the library terms (n x p), plus support.

    Entries outside the support are exactly zero.
    """

    values: np.ndarray
    support: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.support is None:
            self.support = self.values != 0.0
        self.support = np.asarray(self.support, dtype=bool)
        if self.support.shape != self.values.shape:
            raise ValueError("support mask must match values shape")
        if np.any(self.values[~self.support] != 0.0):
            raise ValueError("masked-out coefficients must be exactly zero")

    @classmethod
    def from_dense(cls, values: np.ndarray, threshold: float = 0.0) -> "CoeffVector":
        values = np.asarray(values, dtype=np.float64)
        support = np.abs(values) >= threshold if threshold > 0 else values != 0.0
        return cls(values=np.where(support, values, 0.0), support=support)

    def thresholded(self, threshold: float) -> "CoeffVector":
        return CoeffVector.from_dense(self.values, threshold)

    @property
    def n_active(self) -> int:
        return int(self.support.sum())


def library_system(lib: TermLibrary) -> DynSystem:
    """Dynamical system dX/dt = A @ terms(X, U) with A passed flattened."""

    def rhs(x: np.ndarray, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        a = np.asarray(theta, dtype=np.float64).reshape(lib.n, lib.size)
        return a @ eval_library(lib, x, u if lib.m else None)

    return DynSystem(name=f"library(n={lib.n},m={lib.m},M={lib.max_order})",
                     n=lib.n, m=lib.m, rhs=rhs)
