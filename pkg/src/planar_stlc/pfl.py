"""Partial feedback linearization of a chain with one passive joint.

After relabeling (passive joint first) the torque law below makes every
actuated joint a double integrator, ``qddot_a = u_a``, and leaves the passive
joint with

    qddot_1 = fhat(q, qdot) + sum_a ghat_a(q) u_a,

    fhat   = -C_1 / M_11,     ghat_a = -M_a1 / M_11.

The control-affine system on ``x = (q, qdot)`` has drift
``f = (qdot, fhat, 0, ..., 0)`` and control fields
``g_a = (0, ..., 0, ghat_a, e_a)`` for ``a = 2..N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import closed_forms, jets
from .lie import SmoothField
from .model import ChainModel, coriolis_vector, inertia_matrix, relabeled_inertia, to_relabeled


class ConsistencyError(RuntimeError):
    pass


class VectorFieldSet:
    """Drift ``f`` and control fields ``g_2..g_N`` in relabeled coordinates.

    Symbols are ``"f"`` and ``"g2"`` .. ``"gN"``; there is no ``g1``.
    """

    def __init__(self, model: ChainModel):
        self.model = model
        self.n = model.n
        self.dim = 2 * model.n
        self.permutation = model.permutation
        self.control_indices = tuple(range(2, self.n + 1))
        self.symbols = ("f",) + tuple(f"g{a}" for a in self.control_indices)

    def __repr__(self) -> str:
        return f"VectorFieldSet(n={self.n}, unactuated_joint={self.model.unactuated_index})"

    def generator_components(self, x: list) -> dict[str, list]:
        """Components of every generator, for scalars of any supported type.

        ``x`` is a list of ``2N`` scalars (arrays or jets), relabeled order.
        """
        n = self.n
        q, v = x[:n], x[n:]
        M, dM = relabeled_inertia(self.model, q)
        m11 = M[0][0]
        if isinstance(m11, float) and m11 <= 0:
            raise ConsistencyError("M_11 must be positive")
        inv = 1.0 / m11
        # C_1 = sum_ij (dM_i1/dq_j - 1/2 dM_ij/dq_1) v_i v_j
        c1 = 0.0
        for i in range(n):
            row = 0.0
            for j in range(n):
                gamma = jets.add(dM[j][i][0], jets.mul(-0.5, dM[0][i][j]))
                gamma = 0.0 if _zero(gamma) else gamma
                row = jets.add(row, jets.mul(gamma, v[j]))
            c1 = jets.add(c1, jets.mul(row, v[i]))
        fhat = jets.mul(jets.mul(-1.0, c1), inv)
        out = {"f": list(v) + [fhat] + [0.0] * (n - 1)}
        for a in self.control_indices:
            ghat = jets.mul(jets.mul(-1.0, M[a - 1][0]), inv)
            comps = [0.0] * (2 * n)
            comps[n] = ghat
            comps[n + a - 1] = 1.0
            out[f"g{a}"] = comps
        return out

    def evaluate(self, symbol: str, x) -> np.ndarray:
        """Value of one generator at relabeled states ``x`` (shape ``(..., 2N)``)."""
        return self.evaluate_all(x)[symbol]

    def evaluate_all(self, x) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected state dimension {self.dim}, got {x.shape}")
        comps = self.generator_components([x[..., i] for i in range(self.dim)])
        shape = x.shape[:-1]
        return {
            s: np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in cs], axis=-1)
            for s, cs in comps.items()
        }

    def fhat(self, x) -> np.ndarray:
        return self.evaluate("f", x)[..., self.n]

    def ghat(self, a: int, x) -> np.ndarray:
        self._check_control(a)
        return self.evaluate(f"g{a}", x)[..., self.n]

    def _check_control(self, a: int) -> None:
        if a not in self.control_indices:
            raise ValueError(f"control index must be in 2..{self.n}, got {a}")

    def field(self, symbol: str) -> SmoothField:
        if symbol not in self.symbols:
            raise ValueError(f"unknown generator {symbol!r}; have {self.symbols}")
        return SmoothField(
            self.dim, lambda z, s=symbol: self.generator_components(z)[s], depth=0, label=symbol
        )

    @cached_property
    def fields(self) -> dict[str, SmoothField]:
        return {s: self.field(s) for s in self.symbols}

    def generator_norm(self, x) -> np.ndarray:
        """Largest generator norm at each state (scale for zero tests)."""
        vals = self.evaluate_all(x)
        return np.max(np.stack([np.linalg.norm(v, axis=-1) for v in vals.values()]), axis=0)


def _zero(x) -> bool:
    return isinstance(x, float) and x == 0.0


def control_affine(model: ChainModel) -> VectorFieldSet:
    return VectorFieldSet(model)


# -- torque reconstruction ------------------------------------------------------

@dataclass(frozen=True)
class TorqueLaw:
    """Physical joint torques realising ``qddot_a = u_a`` on actuated joints.

    ``u`` is ordered by relabeled control index ``a = 2..N`` (actuated joints
    in ascending physical order).
    """

    model: ChainModel

    def __call__(self, q, qdot, u) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
        M = inertia_matrix(self.model, q)
        C = coriolis_vector(self.model, q, qdot)
        return self.from_terms(M, C, u)

    def from_terms(self, M, C, u) -> np.ndarray:
        """Torques from precomputed physical-order ``M(q)`` and ``C(q, qdot)``."""
        perm = list(self.model.permutation)
        u = np.asarray(u, dtype=float)
        M = np.asarray(M)[..., perm, :][..., :, perm]
        C = np.asarray(C)[..., perm]
        m_u = np.einsum("...l,...l->...", M[..., 1:, 0], u)
        qdd1 = (-C[..., 0] - m_u) / M[..., 0, 0]
        tau_rel = M[..., 0, :] * qdd1[..., None] + np.einsum("...lk,...l->...k", M[..., 1:, :], u) + C
        tau_rel[..., 0] = 0.0
        tau = np.empty_like(tau_rel)
        tau[..., perm] = tau_rel
        return tau

    def reduced_accelerations(self, q, qdot, u) -> np.ndarray:
        """Physical accelerations predicted by the reduced dynamics."""
        model = self.model
        fields = VectorFieldSet(model)
        x_rel = to_relabeled(model, np.concatenate([np.asarray(q, float), np.asarray(qdot, float)], axis=-1))
        vals = fields.evaluate_all(x_rel)
        u = np.asarray(u, dtype=float)
        acc_rel = vals["f"][..., model.n :].copy()
        for k, a in enumerate(fields.control_indices):
            acc_rel = acc_rel + vals[f"g{a}"][..., model.n :] * u[..., k : k + 1]
        acc = np.empty_like(acc_rel)
        acc[..., list(model.permutation)] = acc_rel
        return acc


def torque_law(model: ChainModel) -> TorqueLaw:
    return TorqueLaw(model)


# -- closed forms for two and three links ----------------------------------------

@dataclass(frozen=True)
class SpecializedFields:
    """Closed-form control-affine fields in physical coordinates.

    ``kind`` is one of ``pendubot2``, ``acrobot2``, ``config1``, ``config2``,
    ``config3``.  Controls are ordered by actuated joint.
    """

    kind: str
    drift: Callable[[np.ndarray], np.ndarray]
    controls: tuple[Callable[[np.ndarray], np.ndarray], ...]


def specialized_fields(model: ChainModel) -> SpecializedFields:
    kind = closed_forms.model_kind(model)
    if kind is None:
        raise ValueError("closed-form fields exist only for two- and three-link chains")
    agg = model.aggregates
    n = model.n
    passive = model.unactuated_index - 1
    drift_acc, ctrl_acc = closed_forms.PASSIVE_ROWS[kind]

    def drift(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., :n] = x[..., n:]
        out[..., n + passive] = drift_acc(agg, x)
        return out

    actuated = [j for j in range(n) if j != passive]
    controls = []
    for k, j in enumerate(actuated):
        def g(x, j=j, fn=ctrl_acc[k]):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            out[..., n + j] = 1.0
            out[..., n + passive] = fn(agg, x)
            return out

        controls.append(g)
    return SpecializedFields(kind, drift, tuple(controls))
