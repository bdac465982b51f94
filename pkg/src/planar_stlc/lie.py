"""Vector fields, formal bracket expressions and their numerical evaluation.

The bracket convention is ``[X, Y](x) = DY(x) X(x) - DX(x) Y(x)``.

Fields are described by a *component function* that maps a list of ``2N``
scalars to a list of ``2N`` components.  Scalars may be numpy arrays or
:class:`~planar_stlc.jets.Jet` objects; feeding jets of order ``K``
yields every derivative up to order ``K`` at once, which is how nested
brackets are evaluated exactly.  Each bracket level consumes one order.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from . import jets
from .closed_forms import closed_form_P_a, closed_form_P_ab, closed_form_two_three_link
from .tolerances import MAX_DEPTH

__all__ = [
    "SmoothField",
    "BracketExpr",
    "BracketDepthError",
    "BracketEvaluator",
    "bracket",
    "bracket_components",
    "evaluate_expr",
    "right_nested",
    "closed_form_P_a",
    "closed_form_P_ab",
    "closed_form_two_three_link",
]


class BracketDepthError(ValueError):
    """Requested bracket nests deeper than the configured limit."""


def seed(x: np.ndarray, order: int) -> list:
    """Independent-variable jets for every coordinate of ``x`` (shape ``(..., d)``)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if order == 0:
        return [x[..., i] for i in range(d)]
    return [jets.Jet.variable(x[..., i], i, d, order) for i in range(d)]


def bracket_components(xs: Sequence, ys: Sequence) -> list:
    """Components of ``[X, Y]`` from jet-valued components of ``X`` and ``Y``."""
    if len(xs) != len(ys):
        raise ValueError(f"dimension mismatch: {len(xs)} vs {len(ys)}")
    d = len(xs)
    out = []
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc = jets.add(acc, jets.mul(jets.deriv(ys[i], j), xs[j]))
            dx = jets.deriv(xs[i], j)
            if not jets.is_const_zero(dx):
                acc = jets.add(acc, jets.mul(jets.mul(dx, ys[j]), -1.0))
        out.append(jets.prune(acc))
    return out


def _stack(comps: Sequence, batch: tuple) -> np.ndarray:
    return np.stack([np.broadcast_to(jets.value(c, batch), batch) for c in comps], axis=-1)


class SmoothField:
    """A vector field on ``R^dim`` with exact derivatives.

    Parameters
    ----------
    dim : int
        State-space dimension.
    jet_fn : callable
        Component function, list of ``dim`` scalars to list of ``dim``
        scalars, valid for arrays and jets.
    depth : int
        Number of derivative orders the component function consumes
        (0 for plain fields, ``k`` for a ``k``-fold nested bracket).
    label : str
        Human-readable provenance, e.g. ``"[f,g2]"``.
    """

    def __init__(self, dim: int, jet_fn: Callable[[list], list], depth: int = 0, label: str = ""):
        self.dim = dim
        self.jet_fn = jet_fn
        self.depth = depth
        self.label = label

    def __repr__(self) -> str:
        return f"SmoothField({self.label or '?'}, dim={self.dim}, depth={self.depth})"

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"field of dimension {self.dim} evaluated at shape {x.shape}")
        return x

    def __call__(self, x) -> np.ndarray:
        x = self._check(x)
        comps = self.jet_fn(seed(x, self.depth))
        return _stack(comps, x.shape[:-1])

    def jacobian(self, x) -> np.ndarray:
        """``J[..., i, j] = dX_i/dx_j``."""
        x = self._check(x)
        batch = x.shape[:-1]
        comps = self.jet_fn(seed(x, self.depth + 1))
        rows = []
        for c in comps:
            if isinstance(c, jets.Jet) and c.order >= 1:
                rows.append(np.moveaxis(c.gradient(), 0, -1))
            else:
                rows.append(np.zeros(batch + (self.dim,)))
        return np.stack(rows, axis=-2)


def bracket(X: SmoothField, Y: SmoothField) -> SmoothField:
    """The Lie bracket ``[X, Y]`` as a new field."""
    if X.dim != Y.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {Y.dim}")
    return SmoothField(
        X.dim,
        lambda z: bracket_components(X.jet_fn(z), Y.jet_fn(z)),
        depth=max(X.depth, Y.depth) + 1,
        label=f"[{X.label},{Y.label}]",
    )


# -- formal bracket expressions ------------------------------------------------

_TOKEN = re.compile(r"\s*(\[|\]|,|f|g\d+)")


@dataclass(frozen=True)
class BracketExpr:
    """A leaf symbol (``"f"``, ``"g2"``, ...) or a bracket of two expressions."""

    symbol: str | None = None
    left: "BracketExpr | None" = None
    right: "BracketExpr | None" = None
    _counts: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if (self.symbol is None) == (self.left is None or self.right is None):
            raise ValueError("a bracket expression is either a leaf or a pair")
        if self.symbol is None:
            c = Counter(dict(self.left._counts)) + Counter(dict(self.right._counts))
        else:
            c = Counter({self.symbol: 1})
        object.__setattr__(self, "_counts", tuple(sorted(c.items())))

    @classmethod
    def leaf(cls, symbol: str) -> "BracketExpr":
        return cls(symbol=symbol)

    @classmethod
    def of(cls, left: "BracketExpr | str", right: "BracketExpr | str") -> "BracketExpr":
        left = cls.leaf(left) if isinstance(left, str) else left
        right = cls.leaf(right) if isinstance(right, str) else right
        return cls(left=left, right=right)

    @classmethod
    def parse(cls, text: str) -> "BracketExpr":
        tokens = []
        pos = 0
        text = text.strip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise ValueError(f"cannot parse bracket expression {text!r} at position {pos}")
            tokens.append(m.group(1))
            pos = m.end()
        expr, k = cls._parse(tokens, 0, text)
        if k != len(tokens):
            raise ValueError(f"trailing input in bracket expression {text!r}")
        return expr

    @classmethod
    def _parse(cls, tokens, k, text):
        if k >= len(tokens):
            raise ValueError(f"unexpected end of bracket expression {text!r}")
        t = tokens[k]
        if t == "[":
            left, k = cls._parse(tokens, k + 1, text)
            if k >= len(tokens) or tokens[k] != ",":
                raise ValueError(f"expected ',' in {text!r}")
            right, k = cls._parse(tokens, k + 1, text)
            if k >= len(tokens) or tokens[k] != "]":
                raise ValueError(f"expected ']' in {text!r}")
            return cls(left=left, right=right), k + 1
        if t in ("]", ","):
            raise ValueError(f"unexpected {t!r} in {text!r}")
        return cls(symbol=t), k + 1

    def __str__(self) -> str:
        if self.symbol is not None:
            return self.symbol
        return f"[{self.left},{self.right}]"

    @property
    def is_leaf(self) -> bool:
        return self.symbol is not None

    @property
    def counts(self) -> dict[str, int]:
        """Occurrences of each leaf symbol."""
        return dict(self._counts)

    def delta(self, symbols: Sequence[str]) -> tuple[int, ...]:
        """Occurrence counts in the order of ``symbols`` (drift first)."""
        c = self.counts
        unknown = set(c) - set(symbols)
        if unknown:
            raise ValueError(f"symbols {sorted(unknown)} not among {list(symbols)}")
        return tuple(c.get(s, 0) for s in symbols)

    @property
    def degree(self) -> int:
        return sum(n for _, n in self._counts)

    @cached_property
    def depth(self) -> int:
        """Bracket nesting depth (0 for a leaf)."""
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    @property
    def drift_count(self) -> int:
        return self.counts.get("f", 0)

    @property
    def control_count(self) -> int:
        return self.degree - self.drift_count

    @property
    def excess(self) -> int:
        """``l`` = control occurrences minus drift occurrences."""
        return self.control_count - self.drift_count

    @property
    def velocity_degrees(self) -> tuple[int, int]:
        """Homogeneity degrees in ``qdot`` of the configuration and velocity rows."""
        return -self.excess, 1 - self.excess

    def relabel(self, mapping: dict[str, str]) -> "BracketExpr":
        if self.is_leaf:
            return BracketExpr(symbol=mapping.get(self.symbol, self.symbol))
        return BracketExpr(left=self.left.relabel(mapping), right=self.right.relabel(mapping))

    def leaves(self) -> Iterator[str]:
        if self.is_leaf:
            yield self.symbol
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()


def as_expr(expr: "BracketExpr | str") -> BracketExpr:
    return expr if isinstance(expr, BracketExpr) else BracketExpr.parse(expr)


def right_nested(symbols: Sequence[str], max_degree: int, canonical: bool = True) -> list[BracketExpr]:
    """Right-nested brackets ``[X_k,[X_(k-1),[...,[X_2,X_1]]]]`` up to ``max_degree``.

    Every bracket in the generated algebra is a combination of these.  With
    ``canonical`` the innermost pair is emitted once (first symbol earlier in
    ``symbols``), since ``[X_2,X_1] = -[X_1,X_2]``.  Degree-1 entries are
    the generators themselves.
    """
    symbols = list(symbols)
    out = [BracketExpr.leaf(s) for s in symbols]
    if max_degree < 2:
        return out if max_degree >= 1 else []
    layer = []
    for i, a in enumerate(symbols):
        for j, b in enumerate(symbols):
            if a == b or (canonical and j < i):
                continue
            layer.append(BracketExpr.of(a, b))
    out.extend(layer)
    for _ in range(3, max_degree + 1):
        layer = [BracketExpr.of(s, e) for s in symbols for e in layer]
        out.extend(layer)
    return out


# -- evaluation ------------------------------------------------------------------

class BracketEvaluator:
    """Memoized evaluation of many bracket expressions over a batch of states.

    Generators are expanded once as jets of order ``order``; a bracket of
    nesting depth ``d`` is then held as jets of order ``order - d``, and
    sub-brackets shared between expressions are computed once.

    Parameters
    ----------
    fields : VectorFieldSet
        Generator set in relabeled coordinates.
    x : array_like
        Relabeled states, shape ``(2N,)`` or ``(B, 2N)``.
    order : int
        Maximum nesting depth that will be requested.
    """

    def __init__(self, fields, x, order: int, max_depth: int = MAX_DEPTH):
        if order > max_depth:
            raise BracketDepthError(f"depth {order} exceeds the limit {max_depth}")
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != fields.dim:
            raise ValueError(f"expected state dimension {fields.dim}, got {x.shape}")
        self.fields = fields
        self.x = x
        self.order = order
        self.batch = x.shape[:-1]
        self._memo: dict[BracketExpr, list] = {}
        gens = fields.generator_components(seed(x, order))
        for s, comps in gens.items():
            self._memo[BracketExpr.leaf(s)] = [jets.prune(c) for c in comps]

    def components(self, expr: BracketExpr | str) -> list:
        expr = as_expr(expr)
        hit = self._memo.get(expr)
        if hit is not None:
            return hit
        if expr.is_leaf:
            raise ValueError(f"unknown generator {expr.symbol!r}; have {self.fields.symbols}")
        if expr.depth > self.order:
            raise BracketDepthError(
                f"{expr} has depth {expr.depth}; evaluator was built for depth {self.order}"
            )
        comps = bracket_components(self.components(expr.left), self.components(expr.right))
        self._memo[expr] = comps
        return comps

    def value(self, expr: BracketExpr | str) -> np.ndarray:
        """Bracket values, shape ``(*batch, 2N)``."""
        return _stack(self.components(expr), self.batch)

    def values(self, exprs: Sequence[BracketExpr | str]) -> np.ndarray:
        """Stacked values, shape ``(*batch, 2N, len(exprs))``."""
        return np.stack([self.value(e) for e in exprs], axis=-1)


def evaluate_expr(expr: BracketExpr | str, fields, x, max_depth: int = MAX_DEPTH) -> np.ndarray:
    """Value of ``expr`` built from ``fields`` at relabeled state(s) ``x``.

    ``x`` may be a :class:`~planar_stlc.model.State` or an array of shape
    ``(..., 2N)``.
    """
    expr = as_expr(expr)
    if expr.depth > max_depth:
        raise BracketDepthError(f"{expr} has depth {expr.depth}; the limit is {max_depth}")
    x = getattr(x, "vector", x)
    return BracketEvaluator(fields, x, expr.depth, max_depth=max_depth).value(expr)
