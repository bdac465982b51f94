"""Good/bad bracket bookkeeping and sufficient-condition STLC certificates.

A bracket is *bad* when the drift occurs an odd number of times and every
control an even number of times; otherwise it is *good*.  A bad bracket is
harmless at an equilibrium if it vanishes there or if its value is a
combination of good brackets of strictly lower theta-degree.

Certificates are sought with the weights ``theta_0 = 1``, one distinguished
control at 1 and the others at 2.  A failed search means *no certificate*,
not that the system is not small-time locally controllable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .accessibility import StructuralRefusal, numerical_rank, spanning_set
from .closed_forms import closed_form_P_ab
from .lie import BracketEvaluator, BracketExpr, as_expr, right_nested
from .model import ChainModel, State
from .pfl import VectorFieldSet
from .tolerances import RANK_TOL, bracket_zero_threshold, p_zero_threshold

#: bad brackets are enumerated up to this total degree
BAD_DEGREE_LIMIT = 7
#: good brackets offered for neutralization are enumerated up to this degree
GOOD_DEGREE_LIMIT = 5
#: relative residual under which a value counts as lying in a span
SPAN_TOL = 1e-6


class BracketClass(str, Enum):
    GOOD = "good"
    BAD = "bad"


def classify(expr: BracketExpr | str) -> BracketClass:
    """Bad iff the drift count is odd and every control count is even."""
    expr = as_expr(expr)
    counts = expr.counts
    drift = counts.get("f", 0)
    controls_even = all(n % 2 == 0 for s, n in counts.items() if s != "f")
    return BracketClass.BAD if drift % 2 == 1 and controls_even else BracketClass.GOOD


def nontrivial_at_equilibrium(expr: BracketExpr | str) -> bool:
    """Only brackets with ``l`` in {0, 1} can be nonzero at an equilibrium.

    ``l`` is the number of control occurrences minus drift occurrences.
    For ``l <= -1`` the bracket vanishes at zero velocity; for ``l >= 2`` it
    vanishes everywhere.
    """
    return as_expr(expr).excess in (0, 1)


def identically_zero(expr: BracketExpr | str) -> bool:
    return as_expr(expr).excess >= 2


@dataclass(frozen=True)
class ThetaAssignment:
    """Weights ``theta_0`` for the drift and ``theta_j`` per control symbol."""

    theta0: Fraction
    controls: tuple[tuple[str, Fraction], ...]

    def __post_init__(self):
        t0 = Fraction(self.theta0)
        ctrl = tuple((s, Fraction(t)) for s, t in self.controls)
        if t0 < 0:
            raise ValueError("theta_0 must be non-negative")
        for s, t in ctrl:
            if t < t0:
                raise ValueError(f"theta for {s} ({t}) is below theta_0 ({t0})")
        object.__setattr__(self, "theta0", t0)
        object.__setattr__(self, "controls", ctrl)

    @classmethod
    def of(cls, theta0, controls: Mapping[str, object]) -> "ThetaAssignment":
        return cls(Fraction(theta0), tuple((s, Fraction(t)) for s, t in controls.items()))

    @classmethod
    def pattern(cls, control_symbols: Sequence[str], distinguished: str) -> "ThetaAssignment":
        """``theta_0 = 1``, the distinguished control at 1, the rest at 2."""
        if distinguished not in control_symbols:
            raise ValueError(f"{distinguished!r} is not one of {list(control_symbols)}")
        return cls.of(1, {s: 1 if s == distinguished else 2 for s in control_symbols})

    def weight(self, symbol: str) -> Fraction:
        if symbol == "f":
            return self.theta0
        for s, t in self.controls:
            if s == symbol:
                return t
        raise KeyError(f"no theta weight for {symbol!r}")

    def to_dict(self) -> dict:
        return {"f": str(self.theta0), **{s: str(t) for s, t in self.controls}}


def theta_degree(expr: BracketExpr | str, theta: ThetaAssignment) -> Fraction:
    """``sum_j theta_j delta^j``, exact."""
    return sum((theta.weight(s) * n for s, n in as_expr(expr).counts.items()), Fraction(0))


def control_label(expr: BracketExpr | str) -> str:
    """Text with relabeled controls ``g2..gN`` renamed to ``g1..g(N-1)``."""
    expr = as_expr(expr)
    mapping = {s: f"g{int(s[1:]) - 1}" for s in set(expr.leaves()) if s != "f"}
    return str(expr.relabel(mapping))


# -- neutralization ledger -----------------------------------------------------

class Status(str, Enum):
    TRIVIAL = "trivial"
    NEUTRALIZED = "neutralized"
    OBSTRUCTION = "obstruction"


@dataclass(frozen=True)
class LedgerEntry:
    bracket: str
    label: str
    theta_degree: Fraction
    status: Status
    detail: str
    structural: bool = False

    def to_dict(self) -> dict:
        return {
            "bracket": self.bracket,
            "label": self.label,
            "theta_degree": str(self.theta_degree),
            "status": self.status.value,
            "detail": self.detail,
        }


def bad_brackets(symbols: Sequence[str], max_degree: int = BAD_DEGREE_LIMIT) -> list[BracketExpr]:
    return [e for e in right_nested(symbols, max_degree) if classify(e) is BracketClass.BAD]


def good_brackets(symbols: Sequence[str], max_degree: int = GOOD_DEGREE_LIMIT) -> list[BracketExpr]:
    return [e for e in right_nested(symbols, max_degree) if classify(e) is BracketClass.GOOD]


class _PointEvaluator:
    """Lazily deepened bracket evaluator at a single state."""

    def __init__(self, fields: VectorFieldSet, x: np.ndarray):
        self.fields, self.x = fields, x
        self._ev: BracketEvaluator | None = None
        self._cache: dict[BracketExpr, np.ndarray] = {}

    def value(self, expr: BracketExpr) -> np.ndarray:
        hit = self._cache.get(expr)
        if hit is not None:
            return hit
        if self._ev is None or self._ev.order < expr.depth:
            self._ev = BracketEvaluator(self.fields, self.x, max(expr.depth, 4))
        v = self._ev.value(expr)
        self._cache[expr] = v
        return v

    def values(self, exprs: Iterable[BracketExpr]) -> np.ndarray:
        exprs = list(exprs)
        deepest = max((e.depth for e in exprs), default=0)
        if exprs and (self._ev is None or self._ev.order < deepest):
            self._ev = BracketEvaluator(self.fields, self.x, max(deepest, 4))
        return np.stack([self.value(e) for e in exprs], axis=-1)


def neutralization_ledger(
    fields: VectorFieldSet,
    x_e,
    theta: ThetaAssignment,
    max_degree: int = BAD_DEGREE_LIMIT,
    good_degree: int = GOOD_DEGREE_LIMIT,
    _evaluator: _PointEvaluator | None = None,
) -> list[LedgerEntry]:
    """Status of every right-nested bad bracket up to ``max_degree`` at ``x_e``.

    Entries are marked *trivial* when the bracket is structurally zero at
    equilibria (``l`` outside {0, 1}) or numerically zero at ``x_e``;
    *neutralized* when its value lies in the span of good brackets of
    strictly lower theta-degree; *obstruction* otherwise.
    """
    x = np.asarray(getattr(x_e, "vector", x_e), dtype=float)
    pe = _evaluator or _PointEvaluator(fields, x)
    gen_norm = fields.generator_norm(x)
    thr = float(bracket_zero_threshold(gen_norm))
    goods = good_brackets(fields.symbols, good_degree)
    good_deg = [theta_degree(g, theta) for g in goods]
    good_vals = None
    rank_cache: dict[Fraction, tuple[int, np.ndarray]] = {}

    def lower_span(d: Fraction):
        nonlocal good_vals
        if d not in rank_cache:
            if good_vals is None:
                good_vals = pe.values(goods)
            cols = good_vals[:, [i for i, gd in enumerate(good_deg) if gd < d]]
            if cols.shape[1] == 0:
                rank_cache[d] = (0, cols)
            else:
                cols = cols[:, np.linalg.norm(cols, axis=0) >= thr]
                r, _ = numerical_rank(cols, gen_norm, RANK_TOL)
                rank_cache[d] = (int(r), cols)
        return rank_cache[d]

    out = []
    for b in bad_brackets(fields.symbols, max_degree):
        d = theta_degree(b, theta)
        text, label = str(b), control_label(b)
        if identically_zero(b):
            out.append(LedgerEntry(text, label, d, Status.TRIVIAL, "identically zero (l >= 2)", True))
            continue
        if not nontrivial_at_equilibrium(b):
            out.append(LedgerEntry(text, label, d, Status.TRIVIAL, "zero at equilibria (l <= -1)", True))
            continue
        rank, cols = lower_span(d)
        if rank == fields.dim:
            out.append(
                LedgerEntry(text, label, d, Status.NEUTRALIZED, "lower-degree good brackets span the state space")
            )
            continue
        v = pe.value(b)
        if np.linalg.norm(v) < thr:
            out.append(LedgerEntry(text, label, d, Status.TRIVIAL, "vanishes at this equilibrium"))
            continue
        if cols.shape[1]:
            An = cols / np.linalg.norm(cols, axis=0)
            coef, *_ = np.linalg.lstsq(An, v, rcond=None)
            res = np.linalg.norm(v - An @ coef) / np.linalg.norm(v)
        else:
            res = 1.0
        if res < SPAN_TOL:
            out.append(
                LedgerEntry(text, label, d, Status.NEUTRALIZED, f"in span of lower-degree good brackets (residual {res:.1e})")
            )
        else:
            out.append(
                LedgerEntry(text, label, d, Status.OBSTRUCTION, f"not spanned by lower-degree good brackets (residual {res:.1e})")
            )
    return out


# -- certificates --------------------------------------------------------------

@dataclass(frozen=True)
class StlcCertificate:
    """Outcome of a certificate search at one equilibrium.

    ``pair`` holds relabeled control indices ``(a, b)``; ``pair_labels``
    the same controls numbered from 1 along the actuated joints.
    """

    state: np.ndarray
    physical_q: np.ndarray
    pair: tuple[int, int] | None
    theta: ThetaAssignment | None
    p_ab: float | None
    p_aa: float | None
    p_bb: float | None
    spanning_rank: int | None
    threshold: float
    ledger: tuple[LedgerEntry, ...]
    found: bool
    reason: str
    theta_degrees: tuple[Fraction, Fraction, Fraction] | None = None
    p_matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def verdict(self) -> str:
        return "certificate" if self.found else "no certificate"

    @property
    def obstructions(self) -> list[LedgerEntry]:
        return [e for e in self.ledger if e.status is Status.OBSTRUCTION]

    @property
    def pair_labels(self) -> tuple[str, str] | None:
        if self.pair is None:
            return None
        return tuple(f"g{k - 1}" for k in self.pair)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else float(v)

        return {
            "state": [float(v) for v in self.state],
            "physical_q": [float(v) for v in self.physical_q],
            "pair": None if self.pair is None else list(self.pair),
            "pair_labels": None if self.pair is None else list(self.pair_labels),
            "theta": None if self.theta is None else self.theta.to_dict(),
            "theta_degrees": None if self.theta_degrees is None else [str(d) for d in self.theta_degrees],
            "evidence": {
                "P_ab": num(self.p_ab),
                "P_aa": num(self.p_aa),
                "P_bb": num(self.p_bb),
                "spanning_rank": self.spanning_rank,
                "zero_threshold": self.threshold,
            },
            "ledger": [e.to_dict() for e in self.ledger if not e.structural],
            "structurally_trivial": sum(e.structural for e in self.ledger),
            "verdict": self.verdict,
            "reason": self.reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def p_matrix(model: ChainModel, x_rel) -> np.ndarray:
    """``P[a-2, b-2] = P_ab`` at one relabeled state."""
    n = model.n
    idx = range(2, n + 1)
    return np.array([[float(closed_form_P_ab(model, x_rel, a, b)) for b in idx] for a in idx])


def _equilibrium(model: ChainModel, x_e) -> State:
    if isinstance(x_e, State):
        state = x_e
    else:
        state = State.from_vector(model, np.asarray(x_e, dtype=float))
    if tuple(state.permutation) != tuple(model.permutation):
        raise ValueError("state permutation does not match the model's relabeling")
    if not state.is_equilibrium:
        raise ValueError("certificate search needs a zero-velocity (equilibrium) state")
    return state


def certificate_search(
    model: ChainModel, x_e, max_degree: int = BAD_DEGREE_LIMIT, diagnose: bool = True
) -> StlcCertificate:
    """Search ordered control pairs for a sufficient STLC certificate at ``x_e``.

    For each ``(a, b)`` with ``a != b``: require ``P_ab != 0`` and one of
    ``P_aa``, ``P_bb`` zero.  The control whose diagonal term vanishes gets
    weight 1.  The certificate also needs the spanning set for ``(a, b)`` to
    have full rank and the neutralization ledger to be free of obstructions.
    With ``diagnose=False`` a point with no admissible pair is reported
    without building the default-pattern ledger.
    """
    if model.base_unactuated:
        raise StructuralRefusal(
            "the base joint is passive: P_ab vanishes identically, so no certificate can exist"
        )
    state = _equilibrium(model, x_e)
    x = state.vector
    fields = VectorFieldSet(model)
    ctrls = [f"g{k}" for k in fields.control_indices]
    thr = p_zero_threshold(model.p_scale)
    P = p_matrix(model, x)
    pe = _PointEvaluator(fields, x)
    q_phys = state.physical()[0]

    def cert(pair, theta, found, reason, ledger, rank):
        a, b = pair
        pab, paa, pbb = P[a - 2, b - 2], P[a - 2, a - 2], P[b - 2, b - 2]
        degs = None
        if theta is not None:
            degs = tuple(
                theta_degree(BracketExpr.parse(s), theta)
                for s in (f"[g{a},[f,g{b}]]", f"[g{a},[f,g{a}]]", f"[g{b},[f,g{b}]]")
            )
        return StlcCertificate(
            x, q_phys, pair, theta, pab, paa, pbb, rank, thr, tuple(ledger), found, reason, degs, P
        )

    first_failure = None
    for a in fields.control_indices:
        for b in fields.control_indices:
            if a == b:
                continue
            pab, paa, pbb = P[a - 2, b - 2], P[a - 2, a - 2], P[b - 2, b - 2]
            if abs(pab) <= thr or min(abs(paa), abs(pbb)) >= thr:
                continue
            distinguished = f"g{a}" if abs(paa) < thr else f"g{b}"
            theta = ThetaAssignment.pattern(ctrls, distinguished)
            dist = spanning_set(model, (a, b))
            r, _ = numerical_rank(dist.matrix(x[None]), fields.generator_norm(x[None]))
            rank = int(r[0])
            ledger = neutralization_ledger(fields, x, theta, max_degree, _evaluator=pe)
            blocked = [e for e in ledger if e.status is Status.OBSTRUCTION]
            if rank == fields.dim and not blocked:
                return cert((a, b), theta, True, "conditions satisfied", ledger, rank)
            if first_failure is None:
                why = f"spanning rank {rank} < {fields.dim}" if rank < fields.dim else (
                    "obstruction: " + ", ".join(e.label for e in blocked)
                )
                first_failure = ((a, b), theta, why, ledger, rank)

    if first_failure is not None:
        pair, theta, why, ledger, rank = first_failure
        return cert(pair, theta, False, why, ledger, rank)

    # no admissible pair: report the default pattern for diagnosis
    a = fields.control_indices[0]
    b = fields.control_indices[1] if len(ctrls) > 1 else a
    theta = ThetaAssignment.pattern(ctrls, f"g{a}")
    if len(ctrls) == 1:
        reason = "single control: no pair a != b"
    else:
        reason = "no pair with P_ab != 0 and P_aa or P_bb = 0"
    if not diagnose:
        return cert((a, b), theta, False, reason, (), None)
    ledger = neutralization_ledger(fields, x, theta, max_degree, _evaluator=pe)
    dist = spanning_set(model, (a, b))
    r, _ = numerical_rank(dist.matrix(x[None]), fields.generator_norm(x[None]))
    blocked = [e.label for e in ledger if e.status is Status.OBSTRUCTION]
    if blocked:
        reason += "; obstruction: " + ", ".join(blocked)
    if int(r[0]) < fields.dim:
        reason += f"; spanning rank {int(r[0])} < {fields.dim}"
    return cert((a, b), theta, False, reason, ledger, int(r[0]))
