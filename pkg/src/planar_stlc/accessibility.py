"""Accessibility distributions: numerical rank, singular states, involutivity.

Ranks are computed on column-normalized generator matrices so that angle
and velocity rows with different units do not distort the singular
values.  Columns whose value is below the bracket zero threshold are
dropped before normalization.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .closed_forms import closed_form_P_ab
from .lie import BracketEvaluator, BracketExpr, as_expr, right_nested
from .model import ChainModel, State, inertia_matrix, to_relabeled
from .pfl import VectorFieldSet
from .tolerances import RANK_TOL, bracket_zero_threshold, p_zero_threshold


class StructuralRefusal(ValueError):
    """The requested analysis does not apply to this actuation pattern."""


@dataclass(frozen=True)
class Distribution:
    """Span of a list of bracket expressions over a field set."""

    fields: VectorFieldSet
    generators: tuple[BracketExpr, ...]

    def __post_init__(self):
        gens = tuple(as_expr(g) for g in self.generators)
        for g in gens:
            bad = set(g.leaves()) - set(self.fields.symbols)
            if bad:
                raise ValueError(f"{g} uses symbols {sorted(bad)} not in {self.fields.symbols}")
        object.__setattr__(self, "generators", gens)

    @property
    def model(self) -> ChainModel:
        return self.fields.model

    @property
    def labels(self) -> list[str]:
        return [str(g) for g in self.generators]

    @property
    def max_depth(self) -> int:
        return max((g.depth for g in self.generators), default=0)

    def matrix(self, x, evaluator: BracketEvaluator | None = None) -> np.ndarray:
        """Generator values at relabeled states, shape ``(*batch, 2N, k)``."""
        if not self.generators:
            raise ValueError("empty distribution")
        ev = evaluator or BracketEvaluator(self.fields, x, self.max_depth)
        return ev.values(self.generators)

    def extended(self, more: Iterable[BracketExpr | str]) -> "Distribution":
        return Distribution(self.fields, self.generators + tuple(as_expr(m) for m in more))


@dataclass(frozen=True)
class RankReport:
    state: np.ndarray
    singular_values: np.ndarray
    rank: int
    tol: float
    dim: int
    generators: tuple[str, ...] = field(default=())

    @property
    def accessible(self) -> bool:
        return self.rank == self.dim

    @property
    def verdict(self) -> str:
        return "accessible" if self.accessible else "rank-deficient"

    def to_dict(self) -> dict:
        return {
            "state": [float(v) for v in self.state],
            "singular_values": [float(v) for v in self.singular_values],
            "rank": int(self.rank),
            "tol": self.tol,
            "dim": self.dim,
            "verdict": self.verdict,
            "generators": list(self.generators),
        }


def numerical_rank(A: np.ndarray, generator_norm, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Rank and singular values of column-normalized, batched matrices.

    Parameters
    ----------
    A : ndarray, shape (..., d, k)
    generator_norm : ndarray, shape (...)
        Scale used for the zero test on each column.
    tol : float
        Relative singular-value cutoff.

    Returns
    -------
    rank : ndarray of int, shape (...)
    sv : ndarray, shape (..., min(d, k)), descending; dropped columns
        contribute zeros.
    """
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=-2)
    keep = norms >= bracket_zero_threshold(generator_norm)[..., None]
    scale = np.where(keep, norms, 1.0)
    An = np.where(keep[..., None, :], A / scale[..., None, :], 0.0)
    sv = np.linalg.svd(An, compute_uv=False)
    smax = sv[..., :1]
    rank = np.sum(sv > tol * smax, axis=-1) * (smax[..., 0] > 0)
    return rank.astype(int), sv


def _states(x, fields: VectorFieldSet) -> np.ndarray:
    if isinstance(x, State):
        return x.vector
    return np.asarray(x, dtype=float)


def rank_batch(dist: Distribution, x, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Ranks and singular values at a batch of relabeled states ``(B, 2N)``."""
    x = np.atleast_2d(_states(x, dist.fields))
    A = dist.matrix(x)
    return numerical_rank(A, dist.fields.generator_norm(x), tol)


def rank_at(dist: Distribution, x, tol: float = RANK_TOL) -> RankReport:
    """Numeric rank of ``dist`` at one relabeled state."""
    xv = _states(x, dist.fields)
    if xv.ndim != 1:
        raise ValueError("rank_at takes a single state; use rank_batch for many")
    rank, sv = rank_batch(dist, xv[None], tol)
    return RankReport(xv, sv[0], int(rank[0]), tol, dist.fields.dim, tuple(dist.labels))


def algebra(fields: VectorFieldSet, max_degree: int) -> Distribution:
    """Every right-nested bracket up to ``max_degree`` (spans the generated algebra)."""
    return Distribution(fields, tuple(right_nested(fields.symbols, max_degree)))


def default_pair(model: ChainModel) -> tuple[int, int]:
    return (2, 2) if model.n == 2 else (2, 3)


def spanning_set(model: ChainModel, pair: tuple[int, int] | None = None) -> Distribution:
    """The ``2N`` brackets that span the state space away from singular states.

    ``g_a``, ``[f,g_a]`` for every control, plus ``[g_a,[f,g_b]]`` and
    ``[f,[g_a,[f,g_b]]]`` for the chosen ``pair``.
    """
    if model.base_unactuated:
        raise StructuralRefusal(
            "the base joint is passive: P_ab vanishes identically, so no spanning family exists"
        )
    a, b = pair or default_pair(model)
    for k in (a, b):
        if not 2 <= k <= model.n:
            raise ValueError(f"pair indices must be in 2..{model.n}, got {(a, b)}")
    fields = VectorFieldSet(model)
    ctrls = [f"g{k}" for k in fields.control_indices]
    gens = [BracketExpr.leaf(g) for g in ctrls]
    gens += [BracketExpr.of("f", g) for g in ctrls]
    inner = BracketExpr.of(f"g{a}", BracketExpr.of("f", f"g{b}"))
    gens += [inner, BracketExpr.of("f", inner)]
    return Distribution(fields, tuple(gens))


# -- grid scans --------------------------------------------------------------

@dataclass(frozen=True)
class ScanRow:
    q: np.ndarray  # physical joint angles
    rank: int
    singular_values: np.ndarray
    p_ab: float
    predicate_zero: bool
    dim: int

    @property
    def singular(self) -> bool:
        return self.rank < self.dim


def grid_states(model: ChainModel, grid: Mapping[int, Sequence[float]]) -> np.ndarray:
    """Physical configurations from per-joint value lists (1-based keys); others 0."""
    for j in grid:
        if not 1 <= j <= model.n:
            raise ValueError(f"grid joint index {j} outside 1..{model.n}")
    axes = [np.asarray(grid.get(j + 1, [0.0]), dtype=float) for j in range(model.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def scan(model: ChainModel, q_phys, pair: tuple[int, int] | None = None, tol: float = RANK_TOL) -> list[ScanRow]:
    """Spanning-set rank and ``P_ab`` at zero-velocity configurations."""
    dist = spanning_set(model, pair)
    a, b = pair or default_pair(model)
    q_phys = np.atleast_2d(np.asarray(q_phys, dtype=float))
    x_phys = np.concatenate([q_phys, np.zeros_like(q_phys)], axis=-1)
    x_rel = to_relabeled(model, x_phys)
    rank, sv = rank_batch(dist, x_rel, tol)
    p = closed_form_P_ab(model, x_rel, a, b)
    thr = p_zero_threshold(model.p_scale)
    return [
        ScanRow(q_phys[i], int(rank[i]), sv[i], float(p[i]), bool(abs(p[i]) < thr), 2 * model.n)
        for i in range(len(q_phys))
    ]


def singular_scan(model: ChainModel, grid: Mapping[int, Sequence[float]], pair=None, tol: float = RANK_TOL) -> list[ScanRow]:
    """Grid points where the spanning set loses rank."""
    return [r for r in scan(model, grid_states(model, grid), pair, tol) if r.singular]


# -- involutivity ------------------------------------------------------------

@dataclass(frozen=True)
class InvolutivityReport:
    involutive: bool
    samples_used: int
    samples_skipped: int
    max_residual: float
    worst_pair: tuple[str, str] | None

    @property
    def summary(self) -> str:
        word = "involutive" if self.involutive else "not involutive"
        return f"{word} on {self.samples_used} samples"


def involutivity_check(
    dist: Distribution,
    states,
    tol: float = 1e-6,
    rank_tol: float = RANK_TOL,
) -> InvolutivityReport:
    """Sampled test that every pairwise bracket stays in the span.

    For each pair of generators the bracket value is projected by least
    squares onto the column-normalized generator matrix; the residual must
    stay below ``tol * (1 + |bracket|)`` at every usable sample.  Samples
    where the generators are linearly dependent are skipped with a warning.
    """
    gens = dist.generators
    if len(gens) < 2:
        raise ValueError("involutivity needs at least two generators")
    x = np.atleast_2d(_states(states, dist.fields))
    pairs = [(i, j) for i, j in itertools.combinations(range(len(gens)), 2)]
    brackets = [BracketExpr.of(gens[i], gens[j]) for i, j in pairs]
    ev = BracketEvaluator(dist.fields, x, max(b.depth for b in brackets))
    A = ev.values(gens)
    rank, _ = numerical_rank(A, dist.fields.generator_norm(x), rank_tol)
    ok = rank == len(gens)
    skipped = int(np.sum(~ok))
    if skipped:
        warnings.warn(f"skipped {skipped} rank-deficient samples in involutivity check", stacklevel=2)
    A, x_used = A[ok], x[ok]
    An = A / np.linalg.norm(A, axis=-2, keepdims=True)
    worst, worst_pair = 0.0, None
    for (i, j), br in zip(pairs, brackets):
        v = ev.value(br)[ok]
        coef = _lstsq(An, v)
        r = np.linalg.norm(v - np.einsum("bdk,bk->bd", An, coef), axis=-1) / (1.0 + np.linalg.norm(v, axis=-1))
        m = float(r.max()) if r.size else 0.0
        if m > worst:
            worst, worst_pair = m, (str(gens[i]), str(gens[j]))
    return InvolutivityReport(worst < tol, int(len(x_used)), skipped, worst, worst_pair)


def _lstsq(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched least squares via pseudo-inverse, ``A (B,d,k)``, ``v (B,d)``."""
    return np.einsum("bkd,bd->bk", np.linalg.pinv(A), v)


def in_span(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Relative least-squares residual of ``v`` against the columns of ``A``."""
    A = np.atleast_3d(A) if A.ndim == 2 else A
    An = A / np.maximum(np.linalg.norm(A, axis=-2, keepdims=True), 1e-300)
    coef = _lstsq(An, v)
    res = v - np.einsum("bdk,bk->bd", An, coef)
    return np.linalg.norm(res, axis=-1) / (1.0 + np.linalg.norm(v, axis=-1))


# -- momentum ------------------------------------------------------------------

@dataclass(frozen=True)
class MomentumReport:
    initial: float
    max_deviation: float
    values: np.ndarray = field(repr=False)


def momentum_invariant(model: ChainModel, trajectory) -> MomentumReport:
    """Deviation of the first row of ``M(q) qdot`` along a trajectory.

    With the base joint passive its angle is cyclic, so this generalized
    momentum is conserved whatever the actuated inputs are.
    """
    if not model.base_unactuated:
        raise StructuralRefusal("momentum conservation needs the base joint to be passive")
    q, qdot = np.asarray(trajectory.q), np.asarray(trajectory.qdot)
    p = np.einsum("tj,tj->t", inertia_matrix(model, q)[:, 0, :], qdot)
    return MomentumReport(float(p[0]), float(np.max(np.abs(p - p[0]))), p)
