"""Truncated multivariate Taylor arithmetic ("jets").

A :class:`Jet` of order ``K`` in ``n`` variables stores the Taylor
coefficients of a scalar function at a base point, up to total degree
``K``, for a whole batch of base points at once.  Order 1 is ordinary
forward-mode dual-number arithmetic with a vector of infinitesimals;
higher orders are what nested Lie brackets need, since every bracket
consumes one derivative.

Coefficients are stored unscaled: the coefficient of ``h**alpha`` is
``D^alpha F / alpha!``.  Monomials are graded by total degree, so the
coefficients of a lower-order truncation are a prefix of the array.

Constant components of vector fields are plain Python floats rather than
jets; the helpers :func:`mul`, :func:`add`, :func:`deriv` and friends accept
either.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Union

import numpy as np

Scalar = Union["Jet", float]


@lru_cache(maxsize=None)
def monomials(nvars: int, order: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples of total degree <= order, graded then lexicographic."""
    out = []
    for d in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return tuple(out)


@lru_cache(maxsize=None)
def _index(nvars: int, order: int) -> dict[tuple[int, ...], int]:
    return {m: i for i, m in enumerate(monomials(nvars, order))}


@lru_cache(maxsize=None)
def n_monomials(nvars: int, order: int) -> int:
    return math.comb(nvars + order, order)


@lru_cache(maxsize=None)
def _mul_table(nvars: int, order: int):
    monos = monomials(nvars, order)
    idx = _index(nvars, order)
    deg = [sum(m) for m in monos]
    triples = []
    for i, a in enumerate(monos):
        for j, b in enumerate(monos):
            if deg[i] + deg[j] > order:
                break  # graded ordering: every later b has a larger degree
            k = idx[tuple(x + y for x, y in zip(a, b))]
            triples.append((k, i, j))
    triples.sort()
    arr = np.array(triples, dtype=np.intp)
    ks, left, right = arr[:, 0], arr[:, 1], arr[:, 2]
    starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    return left, right, starts


@lru_cache(maxsize=None)
def _deriv_table(nvars: int, order: int, var: int):
    """Source indices and factors for d/dh_var, mapping order -> order-1."""
    idx = _index(nvars, order)
    src, fac = [], []
    for m in monomials(nvars, order - 1):
        up = list(m)
        up[var] += 1
        src.append(idx[tuple(up)])
        fac.append(float(up[var]))
    return np.array(src, dtype=np.intp), np.array(fac)


class Jet:
    """Batched truncated Taylor polynomial.

    ``coeffs`` has shape ``(n_monomials(nvars, order), *batch)``.
    """

    __slots__ = ("coeffs", "nvars", "order")
    __array_ufunc__ = None  # make ndarray * Jet defer to Jet.__rmul__

    def __init__(self, coeffs: np.ndarray, nvars: int, order: int):
        self.coeffs = coeffs
        self.nvars = nvars
        self.order = order

    @classmethod
    def variable(cls, value: np.ndarray, var: int, nvars: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((n_monomials(nvars, order),) + value.shape)
        c[0] = value
        if order >= 1:
            c[1 + var] = 1.0
        return cls(c, nvars, order)

    @classmethod
    def constant(cls, value, nvars: int, order: int, batch=()) -> "Jet":
        c = np.zeros((n_monomials(nvars, order),) + tuple(batch))
        c[0] = value
        return cls(c, nvars, order)

    # -- inspection ---------------------------------------------------
    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def gradient(self) -> np.ndarray:
        """First derivatives, shape ``(nvars, *batch)``."""
        if self.order < 1:
            raise ValueError("order-0 jet carries no derivative information")
        return self.coeffs[1 : 1 + self.nvars]

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def truncate(self, order: int) -> "Jet":
        if order == self.order:
            return self
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        return Jet(self.coeffs[: n_monomials(self.nvars, order)], self.nvars, order)

    def __repr__(self) -> str:
        return f"Jet(nvars={self.nvars}, order={self.order}, batch={self.coeffs.shape[1:]})"

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            k = min(self.order, other.order)
            return self.truncate(k), other.truncate(k)
        return self, other

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b = self._coerce(other)
            return Jet(a.coeffs + b.coeffs, a.nvars, a.order)
        c = self.coeffs.copy()
        c[0] = c[0] + other
        return Jet(c, self.nvars, self.order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.nvars, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self._coerce(other)
            if a.order == 0:
                return Jet(a.coeffs * b.coeffs, a.nvars, 0)
            left, right, starts = _mul_table(a.nvars, a.order)
            prod = a.coeffs[left] * b.coeffs[right]
            return Jet(np.add.reduceat(prod, starts, axis=0), a.nvars, a.order)
        return Jet(self.coeffs * other, self.nvars, self.order)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        u0 = self.coeffs[0]
        if np.any(u0 == 0):
            raise ZeroDivisionError("jet reciprocal at zero base value")
        r = -(self - u0) * (1.0 / u0)  # nilpotent part scaled
        acc = Jet.constant(1.0, self.nvars, self.order, u0.shape)
        term = acc
        for _ in range(self.order):
            term = term * r
            acc = acc + term
        return acc * (1.0 / u0)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p: int):
        if not isinstance(p, int) or p < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Jet.constant(1.0, self.nvars, self.order, self.coeffs.shape[1:])
        for _ in range(p):
            out = out * self
        return out

    def sincos(self) -> tuple["Jet", "Jet"]:
        u0 = self.coeffs[0]
        t = self - u0
        batch = u0.shape
        c_ser = Jet.constant(1.0, self.nvars, self.order, batch)
        s_ser = Jet.constant(0.0, self.nvars, self.order, batch)
        power = c_ser
        for k in range(1, self.order + 1):
            power = power * t
            coef = 1.0 / math.factorial(k)
            if k % 2:
                s_ser = s_ser + power * (coef if k % 4 == 1 else -coef)
            else:
                c_ser = c_ser + power * (coef if k % 4 == 0 else -coef)
        s0, c0 = np.sin(u0), np.cos(u0)
        return s_ser * c0 + c_ser * s0, c_ser * c0 - s_ser * s0

    def sin(self) -> "Jet":
        return self.sincos()[0]

    def cos(self) -> "Jet":
        return self.sincos()[1]

    def deriv(self, var: int) -> "Jet":
        """Partial derivative in variable ``var``; order drops by one."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = _deriv_table(self.nvars, self.order, var)
        c = self.coeffs[src] * fac.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))
        return Jet(c, self.nvars, self.order - 1)


# -- helpers over Jet-or-constant components ------------------------------

def sincos(x):
    if isinstance(x, Jet):
        return x.sincos()
    return np.sin(x), np.cos(x)


def deriv(x: Scalar, var: int) -> Scalar:
    if isinstance(x, Jet):
        d = x.deriv(var)
        return 0.0 if d.is_zero() else d
    return 0.0


def is_const_zero(x) -> bool:
    return not isinstance(x, Jet) and np.isscalar(x) and x == 0.0


def mul(a: Scalar, b: Scalar) -> Scalar:
    if is_const_zero(a) or is_const_zero(b):
        return 0.0
    return a * b


def add(a: Scalar, b: Scalar) -> Scalar:
    if is_const_zero(a):
        return b
    if is_const_zero(b):
        return a
    return a + b


def prune(x: Scalar) -> Scalar:
    """Collapse an identically-zero jet to the constant 0.0."""
    if isinstance(x, Jet) and x.is_zero():
        return 0.0
    return x


def value(x: Scalar, batch: tuple) -> np.ndarray:
    if isinstance(x, Jet):
        return x.value
    return np.broadcast_to(np.asarray(x, dtype=float), batch).copy()
