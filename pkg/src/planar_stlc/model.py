"""Dynamics of horizontal planar serial chains.

Link ``i`` rotates about joint ``i``; its absolute angle is the sum of the
joint angles up to and including ``i``.  With ``c_ab`` the mass coupling
between links ``a`` and ``b`` the kinetic energy in absolute angle rates is
``1/2 sum_ab W_ab phi_a' phi_b'`` where ``W_ab = c_ab cos(phi_a - phi_b)``
(plus the link inertia on the diagonal), and the joint-space inertia
matrix is ``M = L^T W L`` with ``L`` the lower-triangular matrix of ones.

The entry points accept plain numpy arrays.  The underscore-prefixed
helpers are written against a tiny scalar protocol (``+``, ``*``,
:func:`planar_stlc.jets.sincos`) so the same code runs on
:class:`~planar_stlc.jets.Jet` inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import jets


class ModelError(ValueError):
    """Invalid physical parameters or model file."""


@dataclass(frozen=True)
class LinkParams:
    mass: float
    inertia_about_com: float
    length: float
    com_distance: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ModelError(f"link mass must be positive, got {self.mass}")
        if not self.inertia_about_com > 0:
            raise ModelError(f"link inertia must be positive, got {self.inertia_about_com}")
        if not self.length > 0:
            raise ModelError(f"link length must be positive, got {self.length}")
        if not 0 <= self.com_distance <= self.length:
            raise ModelError(
                f"com_distance must lie in [0, length], got {self.com_distance}"
            )


@dataclass(frozen=True)
class AggregateParams:
    """Inertial aggregates ``alpha`` and coupling aggregates ``beta``.

    For two links ``alpha = (a1, a2)`` and ``beta = (b1,)``; for three links
    the four ``beta`` values split the link-1/link-2 coupling into its
    link-2 and link-3 contributions.  For longer chains ``beta`` lists the
    couplings ``c_ab`` (a < b) in row-major order.
    """

    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    coupling: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class ChainModel:
    """An N-link horizontal chain with exactly one passive joint.

    ``unactuated_index`` is the 1-based physical joint index.
    """

    links: tuple[LinkParams, ...]
    unactuated_index: int

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        n = len(self.links)
        if n < 2:
            raise ModelError("a chain needs at least two links")
        if not 1 <= self.unactuated_index <= n:
            raise ModelError(
                f"unactuated_index must be in 1..{n}, got {self.unactuated_index}"
            )
        rng = np.random.default_rng(0)
        q = rng.uniform(-np.pi, np.pi, size=(16, n))
        eig = np.linalg.eigvalsh(inertia_matrix(self, q))
        if not np.all(eig > 0):
            raise ModelError("inertia matrix is not positive definite")

    @property
    def n(self) -> int:
        return len(self.links)

    @property
    def base_unactuated(self) -> bool:
        return self.unactuated_index == 1

    @cached_property
    def permutation(self) -> tuple[int, ...]:
        """0-based physical joint for each relabeled joint (passive first)."""
        u = self.unactuated_index - 1
        return (u,) + tuple(i for i in range(self.n) if i != u)

    @cached_property
    def coupling(self) -> np.ndarray:
        """Mass coupling ``c_ab`` between links (symmetric, no inertia)."""
        n = self.n
        c = np.zeros((n, n))
        for i, link in enumerate(self.links):
            r = [self.links[k].length if k < i else link.com_distance for k in range(i + 1)]
            for a in range(i + 1):
                for b in range(i + 1):
                    c[a, b] += link.mass * r[a] * r[b]
        return c

    @cached_property
    def aggregates(self) -> AggregateParams:
        c = self.coupling
        alpha = tuple(float(c[i, i] + self.links[i].inertia_about_com) for i in range(self.n))
        if self.n == 3:
            m2, m3 = self.links[1].mass, self.links[2].mass
            l1, l2 = self.links[0].length, self.links[1].length
            lc2, lc3 = self.links[1].com_distance, self.links[2].com_distance
            beta = (m2 * l1 * lc2, m3 * l1 * l2, m3 * l2 * lc3, m3 * l1 * lc3)
        else:
            beta = tuple(float(c[a, b]) for a in range(self.n) for b in range(a + 1, self.n))
        return AggregateParams(alpha=alpha, beta=beta, coupling=c)

    @cached_property
    def p_scale(self) -> float:
        """Characteristic magnitude of the bracket coefficients ``P_ab``.

        Ratio of the largest coupling to the smallest diagonal inertia,
        squared; used to scale zero thresholds.
        """
        c = self.coupling
        off = np.abs(c - np.diag(np.diag(c))).max()
        return float((off / min(self.aggregates.alpha)) ** 2)

    # -- (de)serialisation ----------------------------------------------
    def to_dict(self) -> dict:
        return {
            "links": [
                {
                    "mass": l.mass,
                    "inertia": l.inertia_about_com,
                    "length": l.length,
                    "com_distance": l.com_distance,
                }
                for l in self.links
            ],
            "unactuated_joint": self.unactuated_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainModel":
        try:
            links = [
                LinkParams(
                    mass=float(d["mass"]),
                    inertia_about_com=float(d["inertia"]),
                    length=float(d["length"]),
                    com_distance=float(d["com_distance"]),
                )
                for d in data["links"]
            ]
            unact = data["unactuated_joint"]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model description: {exc!r}") from exc
        if isinstance(unact, bool) or not isinstance(unact, int):
            raise ModelError("unactuated_joint must be an integer")
        return cls(links=tuple(links), unactuated_index=unact)


def load_model(path: str | Path) -> ChainModel:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    return ChainModel.from_dict(data)


def save_model(model: ChainModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def uniform_chain(n: int, unactuated_index: int, mass=1.0, length=1.0) -> ChainModel:
    """Identical slender links, centre of mass at mid-length."""
    link = LinkParams(mass, mass * length**2 / 12.0, length, length / 2.0)
    return ChainModel(links=(link,) * n, unactuated_index=unactuated_index)


# -- generic-scalar core ---------------------------------------------------

def _suffix2(W, n):
    """``S_jl = sum_{a>=j, b>=l} W_ab`` via two passes of suffix sums."""
    R = [[0.0] * n for _ in range(n)]
    for b in range(n):
        acc = 0.0
        for a in range(n - 1, -1, -1):
            acc = jets.add(acc, W[a][b])
            R[a][b] = acc
    S = [[0.0] * n for _ in range(n)]
    for j in range(n):
        acc = 0.0
        for l in range(n - 1, -1, -1):
            acc = jets.add(acc, R[j][l])
            S[j][l] = acc
    return S


def _inertia_terms(model: ChainModel, q: Sequence, grad: bool = True):
    """Inertia matrix and (optionally) its gradient as nested lists.

    ``q`` holds one scalar per physical joint.  Returns ``(M, dM)`` where
    ``dM[k][i][j] = dM_ij/dq_k``.
    """
    n = model.n
    c = model.coupling
    W = [[0.0] * n for _ in range(n)]
    D = [[[0.0] * n for _ in range(n)] for _ in range(n)] if grad else None
    for a in range(n):
        W[a][a] = float(c[a, a] + model.links[a].inertia_about_com)
        for b in range(a):
            theta = q[b + 1]
            for k in range(b + 2, a + 1):
                theta = theta + q[k]
            s, co = jets.sincos(theta)
            W[a][b] = W[b][a] = co * c[a, b]
            if grad:
                ds = s * (-c[a, b])
                for k in range(b + 1, a + 1):
                    D[k][a][b] = D[k][b][a] = ds
    M = _suffix2(W, n)
    dM = [_suffix2(D[k], n) for k in range(n)] if grad else None
    return M, dM


def _stack(entries, shape_like) -> np.ndarray:
    base = np.asarray(shape_like)
    return np.stack([np.broadcast_to(np.asarray(e, dtype=float), base.shape) for e in entries], axis=-1)


# -- public numpy API ------------------------------------------------------

def _as_q(model: ChainModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.n:
        raise ValueError(f"expected {model.n} joint angles, got shape {q.shape}")
    return q


def inertia_matrix(model: ChainModel, q) -> np.ndarray:
    """Joint-space inertia matrix, shape ``(..., N, N)``, physical ordering."""
    q = _as_q(model, q)
    n = q.shape[-1]
    M, _ = _inertia_terms(model, [q[..., k] for k in range(n)], grad=False)
    rows = [_stack(M[i], q[..., 0]) for i in range(n)]
    return np.stack(rows, axis=-2)


def inertia_gradient(model: ChainModel, q) -> np.ndarray:
    """``G[..., i, j, k] = dM_ij / dq_k`` in physical ordering."""
    q = _as_q(model, q)
    n = q.shape[-1]
    _, dM = _inertia_terms(model, [q[..., k] for k in range(n)])
    per_k = [np.stack([_stack(dM[k][i], q[..., 0]) for i in range(n)], axis=-2) for k in range(n)]
    return np.stack(per_k, axis=-1)


def coriolis_vector(model: ChainModel, q, qdot) -> np.ndarray:
    """``C_k = (dM_ik/dq_j - 1/2 dM_ij/dq_k) qdot_i qdot_j``."""
    G = inertia_gradient(model, q)
    qdot = np.asarray(qdot, dtype=float)
    first = np.einsum("...ikj,...i,...j->...k", G, qdot, qdot)
    second = np.einsum("...ijk,...i,...j->...k", G, qdot, qdot)
    return first - 0.5 * second


def kinetic_energy(model: ChainModel, q, qdot) -> np.ndarray:
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", qdot, inertia_matrix(model, q), qdot)


def forward_dynamics(model: ChainModel, q, qdot, tau) -> np.ndarray:
    """Joint accelerations solving ``M qddot + C = tau``."""
    M = inertia_matrix(model, q)
    rhs = np.asarray(tau, dtype=float) - coriolis_vector(model, q, qdot)
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def relabeled_inertia(model: ChainModel, q_rel, grad: bool = True):
    """Inertia (and gradient) as nested lists in relabeled coordinates.

    ``q_rel`` holds one scalar (array or jet) per relabeled joint.  Returns
    ``(M, dM)`` with ``dM[k][i][j] = dM_ij/dq_k``.
    """
    perm = model.permutation
    n = model.n
    q_phys = [None] * n
    for i, p in enumerate(perm):
        q_phys[p] = q_rel[i]
    M, dM = _inertia_terms(model, q_phys, grad=grad)
    Mr = [[M[perm[i]][perm[j]] for j in range(n)] for i in range(n)]
    if not grad:
        return Mr, None
    dMr = [[[dM[perm[k]][perm[i]][perm[j]] for j in range(n)] for i in range(n)] for k in range(n)]
    return Mr, dMr


def relabeled_inertia_arrays(model: ChainModel, q_rel) -> tuple[np.ndarray, np.ndarray]:
    """Numpy version: ``M[..., i, j]`` and ``G[..., i, j, k] = dM_ij/dq_k``."""
    q_rel = np.asarray(q_rel, dtype=float)
    n = model.n
    M, dM = relabeled_inertia(model, [q_rel[..., i] for i in range(n)])
    shape = q_rel.shape[:-1]

    def arr(e):
        return np.broadcast_to(np.asarray(e, dtype=float), shape)

    Ma = np.stack([np.stack([arr(M[i][j]) for j in range(n)], -1) for i in range(n)], -2)
    Ga = np.stack(
        [np.stack([np.stack([arr(dM[k][i][j]) for j in range(n)], -1) for i in range(n)], -2) for k in range(n)],
        -1,
    )
    return Ma, Ga


# -- states ------------------------------------------------------------------

@dataclass(frozen=True)
class State:
    """A state in relabeled coordinates (passive joint first).

    ``permutation[i]`` is the 0-based physical joint of relabeled joint ``i``.
    """

    q: np.ndarray
    qdot: np.ndarray
    permutation: tuple[int, ...]

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qdot = np.asarray(self.qdot, dtype=float)
        n = len(self.permutation)
        if sorted(self.permutation) != list(range(n)):
            raise ValueError("permutation is not a bijection")
        if q.shape != (n,) or qdot.shape != (n,):
            raise ValueError("q and qdot must each have one entry per joint")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @classmethod
    def from_physical(cls, model: ChainModel, q, qdot=None) -> "State":
        q = np.asarray(q, dtype=float)
        qdot = np.zeros(model.n) if qdot is None else np.asarray(qdot, dtype=float)
        perm = model.permutation
        return cls(q[list(perm)], qdot[list(perm)], perm)

    @classmethod
    def from_vector(cls, model: ChainModel, x) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(x[: model.n], x[model.n :], model.permutation)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @property
    def is_equilibrium(self) -> bool:
        return not np.any(self.qdot)

    def physical(self) -> tuple[np.ndarray, np.ndarray]:
        inv = np.argsort(self.permutation)
        return self.q[inv], self.qdot[inv]


def to_relabeled(model: ChainModel, x_phys) -> np.ndarray:
    """Permute physical state vectors ``(q, qdot)`` into relabeled order."""
    x_phys = np.asarray(x_phys, dtype=float)
    n = model.n
    idx = list(model.permutation) + [n + p for p in model.permutation]
    return x_phys[..., idx]


def to_physical(model: ChainModel, x_rel) -> np.ndarray:
    x_rel = np.asarray(x_rel, dtype=float)
    n = model.n
    idx = list(model.permutation) + [n + p for p in model.permutation]
    out = np.empty_like(x_rel)
    out[..., idx] = x_rel
    return out
