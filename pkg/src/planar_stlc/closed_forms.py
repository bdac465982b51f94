"""Closed-form expressions for two- and three-link chains and general P-terms.

State vectors here are in *physical* joint order, ``x = (q_1..q_N,
qdot_1..qdot_N)``, with each function taking the model aggregates and an
array ``x`` of shape ``(..., 2N)``.  Control labels follow the physical
actuators: for each chain the first actuated joint drives ``g_1``, the next
``g_2``.  In relabeled coordinates (passive joint first) these are ``g2``
and ``g3``.

The general :func:`closed_form_P_a` and :func:`closed_form_P_ab` work in
relabeled coordinates for any ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import AggregateParams, ChainModel, relabeled_inertia_arrays


def model_kind(model: ChainModel) -> str | None:
    """Name of the closed-form family for ``model``, or ``None`` if none applies."""
    if model.n == 2:
        return "acrobot2" if model.unactuated_index == 1 else "pendubot2"
    if model.n == 3:
        return {3: "config1", 2: "config2", 1: "config3"}[model.unactuated_index]
    return None


def _x(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2 * n:
        raise ValueError(f"expected state dimension {2 * n}, got {x.shape}")
    return [x[..., i] for i in range(2 * n)]


# -- two links ---------------------------------------------------------------

def two_link_inertia(agg: AggregateParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    c2 = np.cos(q[..., 1])
    m11 = a1 + a2 + 2 * b1 * c2
    m12 = a2 + b1 * c2
    m22 = np.broadcast_to(a2, c2.shape)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def two_link_coriolis(agg: AggregateParams, q, qdot) -> np.ndarray:
    q, qdot = np.asarray(q, dtype=float), np.asarray(qdot, dtype=float)
    (b1,) = agg.beta
    s2 = np.sin(q[..., 1])
    v1, v2 = qdot[..., 0], qdot[..., 1]
    return np.stack([-2 * b1 * v1 * v2 * s2 - b1 * v2**2 * s2, b1 * v1**2 * s2], -1)


def pendubot_A1(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return -(a2 + b1 * np.cos(x2)) / a2


def pendubot_A2(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return b1 * (2 * x3 + x4) * np.sin(x2) / a2


def pendubot_A3(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return -(b1**2) * np.sin(2 * x2) / a2**2


def pendubot_A4(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return -2 * b1**2 * x4 * np.cos(2 * x2) / a2**2


def pendubot_drift(agg, x):
    """Passive-joint acceleration ``-C_2/M_22`` under zero input."""
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return -b1 * x3**2 * np.sin(x2) / a2


def _acrobot_den(agg, x2):
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return a1 + a2 + 2 * b1 * np.cos(x2)


def acrobot_A1(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (b1,) = agg.beta
    return (2 * b1 * x3 * x4 * np.sin(x2) + b1 * x4**2 * np.sin(x2)) / _acrobot_den(agg, x2)


def acrobot_A2(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    return -(a2 + b1 * np.cos(x2)) / _acrobot_den(agg, x2)


def acrobot_A3(agg, x):
    x1, x2, x3, x4 = _x(x, 2)
    (a1, a2), (b1,) = agg.alpha, agg.beta
    num = 2 * b1 * (a1 * x3 + a2 * (x3 + x4) + b1 * (2 * x3 + x4) * np.cos(x2)) * np.sin(x2)
    return num / _acrobot_den(agg, x2) ** 2


def acrobot_A1_over_x4(agg, x):
    """``A_1 / x_4`` with the common factor cancelled (regular at ``x_4 = 0``)."""
    x1, x2, x3, x4 = _x(x, 2)
    (b1,) = agg.beta
    return b1 * (2 * x3 + x4) * np.sin(x2) / _acrobot_den(agg, x2)


# -- three links -------------------------------------------------------------

def _trig3(x2, x3):
    return np.sin(x2), np.sin(x3), np.sin(x2 + x3), np.cos(x2), np.cos(x3), np.cos(x2 + x3)


def three_link_inertia(agg: AggregateParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    a1, a2, a3 = agg.alpha
    b1, b2, b3, b4 = agg.beta
    s2, s3, s23, c2, c3, c23 = _trig3(q[..., 1], q[..., 2])
    one = np.ones_like(c2)
    m11 = a1 + a2 + a3 + 2 * b1 * c2 + 2 * b2 * c2 + 2 * b3 * c3 + 2 * b4 * c23
    m12 = a2 + a3 + (b1 + b2) * c2 + 2 * b3 * c3 + b4 * c23
    m13 = a3 + b3 * c3 + b4 * c23
    m22 = a2 + a3 + 2 * b3 * c3
    m23 = a3 + b3 * c3
    m33 = a3 * one
    rows = [[m11, m12, m13], [m12, m22, m23], [m13, m23, m33]]
    return np.stack([np.stack(r, -1) for r in rows], -2)


def three_link_coriolis(agg: AggregateParams, q, qdot) -> np.ndarray:
    q, qdot = np.asarray(q, dtype=float), np.asarray(qdot, dtype=float)
    b1, b2, b3, b4 = agg.beta
    s2, s3, s23, c2, c3, c23 = _trig3(q[..., 1], q[..., 2])
    v1, v2, v3 = qdot[..., 0], qdot[..., 1], qdot[..., 2]
    c_1 = (
        -(2 * v1 + v2) * v2 * (b1 + b2) * s2
        - b3 * (2 * v1 + 2 * v2 + v3) * v3 * s3
        - b4 * (v2 + v3) * (2 * v1 + v2 + v3) * s23
    )
    c_2 = v1**2 * ((b1 + b2) * s2 + b4 * s23) - 2 * b3 * v1 * v3 * s3 - 2 * b3 * v2 * v3 * s3 - b3 * v3**2 * s3
    c_3 = v1**2 * (b3 * s3 + b4 * s23) + 2 * v1 * v2 * b3 * s3 + b3 * v2**2 * s3
    return np.stack([c_1, c_2, c_3], -1)


# configuration 1: passive third joint

def config1_P(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3, b4 = agg.beta[2], agg.beta[3]
    s3, s23 = np.sin(x3), np.sin(x2 + x3)
    return -(x4**2 * (b3 * s3 + b4 * s23) + 2 * x4 * x5 * b3 * s3) / a3 - b3 * x5**2 * s3 / a3


def config1_Q1(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3, b4 = agg.beta[2], agg.beta[3]
    return -(a3 + b3 * np.cos(x3) + b4 * np.cos(x2 + x3)) / a3


def config1_Q2(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3 = agg.beta[2]
    return -(a3 + b3 * np.cos(x3)) / a3


def config1_R1(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3, b4 = agg.beta[2], agg.beta[3]
    return -b3 * (b3 * np.sin(2 * x3) + b4 * np.sin(x2 + 2 * x3)) / a3**2


def config1_R2(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3, b4 = agg.beta[2], agg.beta[3]
    return (
        -b4 * (b4 * np.sin(2 * (x2 + x3)) + 2 * b3 * np.sin(x2 + 2 * x3)) / a3**2
        - b3**2 * np.sin(2 * x3) / a3**2
    )


def config1_R3(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3 = agg.beta[2]
    return -(b3**2) * np.sin(2 * x3) / a3**2


# configuration 2: passive middle joint; the rows come straight from the
# inertia and Coriolis terms

def config2_drift(agg, x):
    x = np.asarray(x, dtype=float)
    M = three_link_inertia(agg, x[..., :3])
    C = three_link_coriolis(agg, x[..., :3], x[..., 3:])
    return -C[..., 1] / M[..., 1, 1]


def config2_ctrl1(agg, x):
    M = three_link_inertia(agg, np.asarray(x, dtype=float)[..., :3])
    return -M[..., 1, 0] / M[..., 1, 1]


def config2_ctrl2(agg, x):
    M = three_link_inertia(agg, np.asarray(x, dtype=float)[..., :3])
    return -M[..., 1, 2] / M[..., 1, 1]


# configuration 3: passive base joint

def config3_Den(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a1, a2, a3 = agg.alpha
    b1, b2, b3, b4 = agg.beta
    return a1 + a2 + a3 + 2 * (b1 + b2) * np.cos(x2) + 2 * b3 * np.cos(x3) + 2 * b4 * np.cos(x2 + x3)


def config3_Num1(agg, x):
    # The cross term in the sin(x2+x3) product is (2x4 + x5 + x6), as obtained
    # from C_1; see the test comparing S against -C_1/M_11.
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    b1, b2, b3, b4 = agg.beta
    return (
        b4 * (x5 + x6) * (2 * x4 + x5 + x6) * np.sin(x2 + x3)
        + b3 * x6 * (2 * x4 + 2 * x5 + x6) * np.sin(x3)
        + (b1 + b2) * (2 * x4 + x5) * x5 * np.sin(x2)
    )


def config3_Num2(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a1, a2, a3 = agg.alpha
    b1, b2, b3, b4 = agg.beta
    return -a2 - a3 - (b1 + b2) * np.cos(x2) - 2 * b3 * np.cos(x3) - b4 * np.cos(x2 + x3)


def config3_Num3(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    a3 = agg.alpha[2]
    b3, b4 = agg.beta[2], agg.beta[3]
    return -a3 - b3 * np.cos(x3) - b4 * np.cos(x2 + x3)


def config3_Num4(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    b1, b2, b3, b4 = agg.beta
    return -(b1 + b2) * (2 * x4 + x5) * np.sin(x2) - b4 * (2 * x4 + x5 + x6) * np.sin(x2 + x3)


def config3_Num5(agg, x):
    x1, x2, x3, x4, x5, x6 = _x(x, 3)
    b3, b4 = agg.beta[2], agg.beta[3]
    return -b3 * (2 * x4 + 2 * x5 + x6) * np.sin(x3) - b4 * (2 * x4 + x5 + x6) * np.sin(x2 + x3)


def config3_S(agg, x):
    return config3_Num1(agg, x) / config3_Den(agg, x)


def config3_T1(agg, x):
    return config3_Num2(agg, x) / config3_Den(agg, x)


def config3_T2(agg, x):
    return config3_Num3(agg, x) / config3_Den(agg, x)


def config3_V1(agg, x):
    return config3_Num4(agg, x) / config3_Den(agg, x)


def config3_V2(agg, x):
    return config3_Num5(agg, x) / config3_Den(agg, x)


#: passive-joint acceleration rows: kind -> (drift, (control_1, control_2, ...))
PASSIVE_ROWS: dict[str, tuple[Callable, tuple[Callable, ...]]] = {
    "pendubot2": (pendubot_drift, (pendubot_A1,)),
    "acrobot2": (acrobot_A1, (acrobot_A2,)),
    "config1": (config1_P, (config1_Q1, config1_Q2)),
    "config2": (config2_drift, (config2_ctrl1, config2_ctrl2)),
    "config3": (config3_S, (config3_T1, config3_T2)),
}


# -- catalog -------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedFormBracket:
    """One closed-form component of a bracket for a two- or three-link chain.

    ``bracket`` uses relabeled control symbols (``g2``, ``g3``); ``label``
    uses the physical actuator numbering (``g1``, ``g2``).  ``row`` is the
    0-based component in physical state order and ``value`` returns the
    expected component.
    """

    name: str
    kind: str
    bracket: str
    label: str
    row: int
    value: Callable[[AggregateParams, np.ndarray], np.ndarray]


def _neg(fn):
    return lambda agg, x: -fn(agg, x)


def _const(c):
    return lambda agg, x: np.full(np.asarray(x).shape[:-1], float(c))


CATALOG: tuple[ClosedFormBracket, ...] = (
    # two-link pendubot, state (q1, q2, qdot1, qdot2), passive q2
    ClosedFormBracket("A1", "pendubot2", "g2", "g1", 3, pendubot_A1),
    ClosedFormBracket("[f,g1]_1", "pendubot2", "[f,g2]", "[f,g1]", 0, _const(-1.0)),
    ClosedFormBracket("-A1", "pendubot2", "[f,g2]", "[f,g1]", 1, _neg(pendubot_A1)),
    ClosedFormBracket("A2", "pendubot2", "[f,g2]", "[f,g1]", 3, pendubot_A2),
    ClosedFormBracket("A3", "pendubot2", "[g2,[f,g2]]", "[g1,[f,g1]]", 3, pendubot_A3),
    ClosedFormBracket("-A3", "pendubot2", "[f,[g2,[f,g2]]]", "[f,[g1,[f,g1]]]", 1, _neg(pendubot_A3)),
    ClosedFormBracket("A4", "pendubot2", "[f,[g2,[f,g2]]]", "[f,[g1,[f,g1]]]", 3, pendubot_A4),
    # two-link acrobot, passive q1
    ClosedFormBracket("A1", "acrobot2", "f", "f", 2, acrobot_A1),
    ClosedFormBracket("A2", "acrobot2", "g2", "g1", 2, acrobot_A2),
    ClosedFormBracket("-A2", "acrobot2", "[f,g2]", "[f,g1]", 0, _neg(acrobot_A2)),
    ClosedFormBracket("[f,g1]_2", "acrobot2", "[f,g2]", "[f,g1]", 1, _const(-1.0)),
    ClosedFormBracket("-A1/x4", "acrobot2", "[f,g2]", "[f,g1]", 2, _neg(acrobot_A1_over_x4)),
    ClosedFormBracket("A3", "acrobot2", "[f,[f,g2]]", "[f,[f,g1]]", 0, acrobot_A3),
    # three-link configuration 1, passive q3
    ClosedFormBracket("P", "config1", "f", "f", 5, config1_P),
    ClosedFormBracket("Q1", "config1", "g2", "g1", 5, config1_Q1),
    ClosedFormBracket("Q2", "config1", "g3", "g2", 5, config1_Q2),
    ClosedFormBracket("-Q1", "config1", "[f,g2]", "[f,g1]", 2, _neg(config1_Q1)),
    ClosedFormBracket("-Q2", "config1", "[f,g3]", "[f,g2]", 2, _neg(config1_Q2)),
    ClosedFormBracket("R1", "config1", "[g2,[f,g3]]", "[g1,[f,g2]]", 5, config1_R1),
    ClosedFormBracket("-R1", "config1", "[f,[g2,[f,g3]]]", "[f,[g1,[f,g2]]]", 2, _neg(config1_R1)),
    ClosedFormBracket("R2", "config1", "[g2,[f,g2]]", "[g1,[f,g1]]", 5, config1_R2),
    ClosedFormBracket("R3", "config1", "[g3,[f,g3]]", "[g2,[f,g2]]", 5, config1_R3),
    # three-link configuration 3, passive q1
    ClosedFormBracket("S", "config3", "f", "f", 3, config3_S),
    ClosedFormBracket("T1", "config3", "g2", "g1", 3, config3_T1),
    ClosedFormBracket("T2", "config3", "g3", "g2", 3, config3_T2),
    ClosedFormBracket("-T1", "config3", "[f,g2]", "[f,g1]", 0, _neg(config3_T1)),
    ClosedFormBracket("V1", "config3", "[f,g2]", "[f,g1]", 3, config3_V1),
    ClosedFormBracket("-T2", "config3", "[f,g3]", "[f,g2]", 0, _neg(config3_T2)),
    ClosedFormBracket("V2", "config3", "[f,g3]", "[f,g2]", 3, config3_V2),
)


def closed_form_two_three_link(kind: str | None = None) -> tuple[ClosedFormBracket, ...]:
    """Catalog entries, optionally filtered to one model family."""
    if kind is None:
        return CATALOG
    return tuple(e for e in CATALOG if e.kind == kind)


# -- general N ---------------------------------------------------------------

def _split(model: ChainModel, x_rel):
    x_rel = np.asarray(x_rel, dtype=float)
    n = model.n
    if x_rel.shape[-1] != 2 * n:
        raise ValueError(f"expected state dimension {2 * n}, got {x_rel.shape}")
    M, G = relabeled_inertia_arrays(model, x_rel[..., :n])
    return M, G, x_rel[..., n:]


def _check_index(model: ChainModel, a: int) -> int:
    if not 2 <= a <= model.n:
        raise ValueError(f"control index must be in 2..{model.n}, got {a}")
    return a - 1


def closed_form_P_a(model: ChainModel, x_rel, a: int) -> np.ndarray:
    """Passive-velocity component of ``[f, g_a]`` (relabeled coordinates).

    ``P_a = (dM_i1/dq_a - dM_ia/dq_1) qdot_i / M_11``.
    """
    k = _check_index(model, a)
    M, G, v = _split(model, x_rel)
    coef = G[..., :, 0, k] - G[..., :, k, 0]
    return np.einsum("...i,...i->...", coef, v) / M[..., 0, 0]


def closed_form_P_ab(model: ChainModel, x_rel, a: int, b: int) -> np.ndarray:
    """Passive-velocity component of ``[g_a, [f, g_b]]`` (relabeled coordinates).

    ``P_ab = d(M_a1 M_b1)/dq_1 / M_11^2 - dM_ab/dq_1 / M_11
    - M_a1 M_b1 dM_11/dq_1 / M_11^3``.  Depends on ``q`` only.
    """
    ka, kb = _check_index(model, a), _check_index(model, b)
    M, G, _ = _split(model, x_rel)
    m11 = M[..., 0, 0]
    ma, mb = M[..., ka, 0], M[..., kb, 0]
    d_prod = G[..., ka, 0, 0] * mb + ma * G[..., kb, 0, 0]
    return d_prod / m11**2 - G[..., ka, kb, 0] / m11 - ma * mb * G[..., 0, 0, 0] / m11**3
