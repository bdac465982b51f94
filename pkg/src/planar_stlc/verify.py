"""Independent oracles: simulation, finite-difference brackets, conservation checks.

Nothing here uses the jet machinery except where a check compares against
it.  The simulator integrates the unreduced dynamics written in absolute
link angles,

    W(phi) phi'' + h(phi, phi') = L^{-T} tau,   h_a = sum_b c_ab sin(phi_a - phi_b) phi_b'^2,

which is an independent derivation of ``M qddot + C = tau``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from . import closed_forms, jets
from .accessibility import StructuralRefusal, momentum_invariant
from .lie import BracketEvaluator, BracketExpr, as_expr, right_nested
from .model import ChainModel, inertia_matrix, kinetic_energy, to_relabeled
from .pfl import TorqueLaw, VectorFieldSet
from .tolerances import bracket_zero_threshold

Schedule = Callable[[float], np.ndarray]


class SimulationError(RuntimeError):
    """The integrator could not complete the requested horizon."""


# -- fast unreduced dynamics ----------------------------------------------------

class _Dynamics:
    def __init__(self, model: ChainModel):
        n = model.n
        self.model = model
        self.c = model.coupling
        self.inertia = np.array([l.inertia_about_com for l in model.links])
        self.L = np.tril(np.ones((n, n)))

    def terms(self, q: np.ndarray, qdot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``M(q)`` and ``C(q, qdot)`` for one state."""
        phi = np.cumsum(q)
        dphi = np.cumsum(qdot)
        diff = phi[:, None] - phi[None, :]
        W = self.c * np.cos(diff) + np.diag(self.inertia)
        h = (self.c * np.sin(diff)) @ (dphi**2)
        return self.L.T @ W @ self.L, self.L.T @ h

    def accelerations(self, q, qdot, tau) -> np.ndarray:
        M, C = self.terms(q, qdot)
        return np.linalg.solve(M, tau - C)


# -- trajectories ----------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Physical-coordinate samples; ``u`` holds the scheduled inputs."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    mode: str
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t.ndim != 1 or np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("trajectory contains non-finite states")

    @property
    def n(self) -> int:
        return self.x.shape[-1] // 2

    @property
    def q(self) -> np.ndarray:
        return self.x[:, : self.n]

    @property
    def qdot(self) -> np.ndarray:
        return self.x[:, self.n :]


def sinusoidal_input(amplitudes: Sequence[float], frequencies: Sequence[float], phases: Sequence[float] | None = None) -> Schedule:
    a = np.asarray(amplitudes, dtype=float)
    w = 2 * np.pi * np.asarray(frequencies, dtype=float)
    p = np.zeros_like(a) if phases is None else np.asarray(phases, dtype=float)
    return lambda t: a * np.sin(w * t + p)


def _rhs(model: ChainModel, schedule: Schedule | None, mode: str):
    dyn = _Dynamics(model)
    law = TorqueLaw(model)
    n = model.n
    width = n - 1 if mode == "pfl" else n
    zero = np.zeros(width)

    def f(t, x):
        q, qdot = x[:n], x[n:]
        u = zero if schedule is None else np.asarray(schedule(t), dtype=float)
        M, C = dyn.terms(q, qdot)
        tau = law.from_terms(M, C, u) if mode == "pfl" else u
        return np.concatenate([qdot, np.linalg.solve(M, tau - C)])

    return f, width


def _inputs(schedule, t, width) -> np.ndarray:
    if schedule is None:
        return np.zeros((len(t), width))
    return np.array([np.asarray(schedule(ti), dtype=float) for ti in t]).reshape(len(t), width)


def _check_run(model: ChainModel, x0, duration: float, mode: str) -> np.ndarray:
    if mode not in ("pfl", "torque"):
        raise ValueError(f"mode must be 'pfl' or 'torque', got {mode!r}")
    if duration <= 0:
        raise ValueError("duration must be positive")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * model.n,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of shape ({2 * model.n},)")
    return x0


def _guarded_rhs(model: ChainModel, schedule: Schedule | None, mode: str):
    f, width = _rhs(model, schedule, mode)

    def guarded(t, x):
        dx = f(t, x)
        if not np.all(np.isfinite(dx)):
            raise SimulationError(f"non-finite state derivative at t={t}")
        return dx

    return guarded, width


def simulate(
    model: ChainModel,
    x0,
    schedule: Schedule | None = None,
    duration: float = 5.0,
    tol: float = 1e-10,
    mode: str = "pfl",
    samples: int = 501,
    method: str = "RK45",
) -> Trajectory:
    """Integrate the full dynamics from the physical state ``x0``.

    Parameters
    ----------
    schedule : callable, optional
        ``t -> u``.  In ``"pfl"`` mode ``u`` are the new inputs (one per
        actuated joint, ascending order) turned into torques by the
        feedback-linearizing law; in ``"torque"`` mode ``u`` are raw
        physical torques, one per joint.  ``None`` means zero.
    tol : float
        Relative and absolute tolerance of the adaptive Runge-Kutta pair.
    """
    x0 = _check_run(model, x0, duration, mode)
    f, width = _guarded_rhs(model, schedule, mode)
    t_eval = np.linspace(0.0, duration, samples)
    sol = solve_ivp(f, (0.0, duration), x0, method=method, t_eval=t_eval, rtol=tol, atol=tol)
    if sol.status != 0:
        raise SimulationError(f"integration failed at t={sol.t[-1] if sol.t.size else 0.0}: {sol.message}")
    stats = {"method": method, "nfev": int(sol.nfev), "tol": tol, "message": sol.message}
    return Trajectory(sol.t, sol.y.T, _inputs(schedule, sol.t, width), mode, stats)


def simulate_rk4(
    model: ChainModel,
    x0,
    schedule: Schedule | None = None,
    duration: float = 5.0,
    dt: float = 1e-3,
    mode: str = "pfl",
) -> Trajectory:
    """Fixed-step classical Runge-Kutta, for reproducible fixtures."""
    x0 = _check_run(model, x0, duration, mode)
    if dt <= 0:
        raise ValueError("dt must be positive")
    f, width = _guarded_rhs(model, schedule, mode)
    steps = int(round(duration / dt))
    t = np.linspace(0.0, steps * dt, steps + 1)
    xs = np.empty((steps + 1, 2 * model.n))
    xs[0] = x0
    for k in range(steps):
        tk, xk = t[k], xs[k]
        k1 = f(tk, xk)
        k2 = f(tk + dt / 2, xk + dt / 2 * k1)
        k3 = f(tk + dt / 2, xk + dt / 2 * k2)
        k4 = f(tk + dt, xk + dt * k3)
        xs[k + 1] = xk + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Trajectory(t, xs, _inputs(schedule, t, width), mode, {"method": "RK4", "dt": dt})


def first_row_momentum(model: ChainModel, traj: Trajectory) -> np.ndarray:
    return np.einsum("tj,tj->t", inertia_matrix(model, traj.q)[:, 0, :], traj.qdot)


def energy_drift(model: ChainModel, traj: Trajectory) -> float:
    e = kinetic_energy(model, traj.q, traj.qdot)
    return float(np.max(np.abs(e - e[0])))


def momentum_drift(model: ChainModel, traj: Trajectory) -> float:
    return momentum_invariant(model, traj).max_deviation


def holonomic_residual(model: ChainModel, traj: Trajectory) -> float:
    """Deviation from the configuration curve of a two-link chain started at rest.

    With the base joint passive and zero initial momentum,
    ``q1(t) - q1(0) = int_{q2(0)}^{q2(t)} -M_12/M_11 dq2``.
    """
    if model.n != 2 or not model.base_unactuated:
        raise StructuralRefusal("the holonomic check applies to two-link chains with a passive base")
    if np.any(traj.qdot[0] != 0):
        raise ValueError("the trajectory must start at rest")
    (a1, a2), (b1,) = model.aggregates.alpha, model.aggregates.beta

    def slope(s):
        c = np.cos(s)
        return -(a2 + b1 * c) / (a1 + a2 + 2 * b1 * c)

    q1, q2 = traj.q[:, 0], traj.q[:, 1]
    pred = np.array([quad(slope, q2[0], s, epsabs=1e-13, epsrel=1e-13)[0] for s in q2])
    return float(np.max(np.abs(q1 - q1[0] - pred)))


TRAJECTORY_COLUMNS = "t, q1..qN, qdot1..qdotN, u2..uN (or tau1..tauN), momentum, energy"


def trajectory_header(model: ChainModel, traj: Trajectory) -> list[str]:
    n = model.n
    inputs = [f"u{a}" for a in range(2, n + 1)] if traj.mode == "pfl" else [f"tau{k}" for k in range(1, n + 1)]
    return ["t"] + [f"q{k}" for k in range(1, n + 1)] + [f"qdot{k}" for k in range(1, n + 1)] + inputs + [
        "momentum",
        "energy",
    ]


def export_trajectory_csv(model: ChainModel, traj: Trajectory, path: str | Path) -> None:
    """Write one row per sample; ``momentum`` is the first row of ``M qdot``."""
    p = first_row_momentum(model, traj)
    e = kinetic_energy(model, traj.q, traj.qdot)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(model, traj))
        for k in range(len(traj.t)):
            row = [traj.t[k], *traj.x[k], *traj.u[k], p[k], e[k]]
            w.writerow([repr(float(v)) for v in row])


# -- finite differences ----------------------------------------------------------

def default_fd_step(depth: int, stencil: int = 5) -> float:
    """Base step for a bracket of nesting depth ``depth``.

    The 3-point stencil uses ``(1e-5)^(1/(d+1))``, balancing ``O(h^2)``
    truncation against roundoff amplified once per nesting level.  The
    5-point stencil uses a fixed ``1e-3``, which keeps the ``O(h^4)``
    truncation near ``1e-12`` while roundoff stays below ``1e-10`` up to
    depth 3.
    """
    if stencil == 3:
        return 1e-5 ** (1.0 / (max(depth, 1) + 1))
    return 1e-3


_STENCILS = {
    3: (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    5: (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0),
}


def fd_bracket_oracle(fields: VectorFieldSet, expr, x, h: float | None = None, stencil: int = 5) -> np.ndarray:
    """Bracket value from nested finite differences of plain field evaluations.

    Each directional derivative ``DY(x) v`` is a central difference of ``Y``
    along ``v/|v|`` with step ``h * max(1, |x|)``; the error is
    ``O(h^2)`` for the 3-point and ``O(h^4)`` for the 5-point stencil.

    Parameters
    ----------
    h : float, optional
        Base step; defaults to :func:`default_fd_step` for the depth of
        ``expr``.
    stencil : {3, 5}
    """
    expr = as_expr(expr)
    if stencil not in _STENCILS:
        raise ValueError("stencil must be 3 or 5")
    offsets, weights = _STENCILS[stencil]
    if h is None:
        h = default_fd_step(expr.depth, stencil)
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    scale = h * np.maximum(1.0, np.linalg.norm(x, axis=-1))

    def value(e: BracketExpr, z: np.ndarray) -> np.ndarray:
        if e.is_leaf:
            return fields.evaluate(e.symbol, z)
        X, Y = value(e.left, z), value(e.right, z)
        return jvp(e.right, z, X) - jvp(e.left, z, Y)

    def jvp(e: BracketExpr, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        d = np.divide(v, nv, out=np.zeros_like(v), where=nv > 0)
        s = scale[:, None]
        acc = 0.0
        for o, w in zip(offsets, weights):
            acc = acc + w * value(e, z + o * s * d)
        return acc / s * nv

    out = value(expr, x)
    return out[0] if single else out


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian ``J[..., i, j] = dF_i/dx_j``."""
    x = np.asarray(x, dtype=float)
    step = h * np.maximum(1.0, np.linalg.norm(x, axis=-1, keepdims=True))
    cols = []
    for j in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[j] = 1.0
        cols.append((fn(x + step * e) - fn(x - step * e)) / (2 * step))
    return np.stack(cols, axis=-1)


# -- identities ------------------------------------------------------------------

def q_a_values(model: ChainModel, x_rel) -> np.ndarray:
    """Passive-velocity components of ``[f,[f,g_a]]``, shape ``(B, N-1)``."""
    fields = VectorFieldSet(model)
    x_rel = np.atleast_2d(np.asarray(x_rel, dtype=float))
    ev = BracketEvaluator(fields, x_rel, 2)
    return np.stack([ev.value(f"[f,[f,g{a}]]")[:, model.n] for a in fields.control_indices], axis=-1)


def qa_vanishing_check(model: ChainModel, samples: int = 100, seed: int = 0) -> float:
    """Largest ``|Q_a|`` over random states; zero when the base joint is passive."""
    if not model.base_unactuated:
        raise StructuralRefusal("Q_a vanishes only when the base joint is passive")
    x = random_states(model, samples, seed)
    return float(np.max(np.abs(q_a_values(model, x))))


def random_states(model: ChainModel, count: int, seed: int = 0, velocity_scale: float = 2.0, equilibrium: bool = False) -> np.ndarray:
    """Relabeled states with angles in ``[-pi, pi)`` and velocities in ``[-s, s)``."""
    rng = np.random.default_rng(seed)
    n = model.n
    q = rng.uniform(-np.pi, np.pi, size=(count, n))
    v = np.zeros((count, n)) if equilibrium else rng.uniform(-velocity_scale, velocity_scale, size=(count, n))
    return np.concatenate([q, v], axis=-1)


def scaling_exponents(fields: VectorFieldSet, expr, x_rel, lam: float) -> tuple[float | None, float | None]:
    """Observed velocity-homogeneity exponents of configuration and velocity rows.

    Compares ``B(q, lam qdot)`` with ``B(q, qdot)`` on the component of
    largest magnitude in each block; ``None`` when a block is zero.
    """
    expr = as_expr(expr)
    n = fields.n
    x = np.asarray(x_rel, dtype=float)
    xs = x.copy()
    xs[n:] *= lam
    ev = BracketEvaluator(fields, np.stack([x, xs]), expr.depth)
    b0, b1 = ev.value(expr)
    thr = bracket_zero_threshold(fields.generator_norm(x))
    out = []
    for sl in (slice(0, n), slice(n, 2 * n)):
        k = int(np.argmax(np.abs(b0[sl])))
        v0, v1 = b0[sl][k], b1[sl][k]
        if abs(v0) < thr or abs(v1) < thr:
            out.append(None)
        else:
            out.append(float(np.log(abs(v1 / v0)) / np.log(lam)))
    return out[0], out[1]


# -- suites ----------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    max_residual: float
    tol: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "max_residual": self.max_residual,
            "tol": self.tol,
            "detail": self.detail,
        }


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - b| / max(|b|, floor)``, elementwise."""
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


def scaled_error(a: np.ndarray, b: np.ndarray, zero: float = 1e-9) -> float:
    """Largest ``|a - b|`` relative to the sample RMS of ``b``.

    Finite differences carry absolute noise, so relative comparisons are
    taken against the typical magnitude of the quantity rather than each
    sample's own value.  When ``b`` is identically zero (RMS below
    ``zero``) the absolute error is returned.
    """
    rms = float(np.sqrt(np.mean(np.square(b))))
    err = float(np.max(np.abs(a - b)))
    return err if rms < zero else err / rms


def _closed_form_suite(name, model, x, order, pairs, cf_fn, tol, fd_tol):
    fields = VectorFieldSet(model)
    ev = BracketEvaluator(fields, x, order)
    exact_err = fd_err = 0.0
    for args, expr in pairs:
        cf = cf_fn(model, x, *args)
        exact = ev.value(expr)[:, model.n]
        fd = fd_bracket_oracle(fields, expr, x)[:, model.n]
        exact_err = max(exact_err, float(relative_error(cf, exact).max()))
        fd_err = max(fd_err, scaled_error(fd, cf))
    worst = max(exact_err / tol, fd_err / fd_tol) * tol
    detail = f"{len(x)} states, dual-number rel {exact_err:.1e}, finite-difference scaled {fd_err:.1e}"
    return SuiteResult(name, exact_err < tol and fd_err < fd_tol, worst, tol, detail)


def suite_p_a(model: ChainModel, samples: int, seed: int, tol: float = 1e-7) -> SuiteResult:
    x = random_states(model, samples, seed)
    pairs = [((a,), f"[f,g{a}]") for a in range(2, model.n + 1)]
    return _closed_form_suite("closed_form_P_a", model, x, 1, pairs, closed_forms.closed_form_P_a, tol, tol)


def suite_p_ab(model: ChainModel, samples: int, seed: int, tol: float = 1e-5) -> SuiteResult:
    x = random_states(model, samples, seed + 1)
    idx = range(2, model.n + 1)
    pairs = [((a, b), f"[g{a},[f,g{b}]]") for a in idx for b in idx]
    return _closed_form_suite("closed_form_P_ab", model, x, 2, pairs, closed_forms.closed_form_P_ab, tol, tol)


def p_ab_velocity_sensitivity(model: ChainModel, samples: int, seed: int = 0) -> float:
    """Largest velocity derivative of any ``P_ab`` over random states."""
    fields = VectorFieldSet(model)
    x = random_states(model, samples, seed)
    ev = BracketEvaluator(fields, x, 3)
    n = model.n
    worst = 0.0
    for a in fields.control_indices:
        for b in fields.control_indices:
            comp = ev.components(f"[g{a},[f,g{b}]]")[n]
            if isinstance(comp, jets.Jet):
                grad = np.stack(comp.gradient(), axis=-1)
                worst = max(worst, float(np.abs(grad[..., n:]).max()))
            # a constant component has no velocity dependence
    return worst


def suite_velocity_independence(model: ChainModel, samples: int, seed: int, tol: float = 1e-10) -> SuiteResult:
    worst = p_ab_velocity_sensitivity(model, samples, seed + 7)
    return SuiteResult("P_ab_velocity_independence", worst < tol, worst, tol, f"{samples} states")


def suite_catalog(model: ChainModel, samples: int, seed: int, tol: float = 1e-8) -> SuiteResult:
    kind = closed_forms.model_kind(model)
    entries = closed_forms.closed_form_two_three_link(kind) if kind else ()
    if not entries:
        return SuiteResult("closed_form_catalog", True, 0.0, tol, "no catalog entries for this model")
    fields = VectorFieldSet(model)
    x_rel = random_states(model, samples, seed + 2)
    ev = BracketEvaluator(fields, x_rel, max(as_expr(e.bracket).depth for e in entries))
    from .model import to_physical

    x_phys = to_physical(model, x_rel)
    worst = 0.0
    for e in entries:
        got = to_physical(model, ev.value(e.bracket))[:, e.row]
        want = e.value(model.aggregates, x_phys)
        worst = max(worst, float((np.abs(got - want) / (1.0 + np.abs(want))).max()))
    return SuiteResult("closed_form_catalog", worst < tol, worst, tol, f"{len(entries)} entries")


def suite_q_a(model: ChainModel, samples: int, seed: int, tol: float = 1e-9) -> SuiteResult:
    if not model.base_unactuated:
        return SuiteResult("Q_a_vanishing", True, 0.0, tol, "skipped: base joint actuated")
    worst = qa_vanishing_check(model, samples, seed + 3)
    return SuiteResult("Q_a_vanishing", worst < tol, worst, tol, f"{samples} states")


def suite_conservation(model: ChainModel, seed: int, tol: float = 1e-7, duration: float = 5.0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed + 4)
    n = model.n
    x0 = np.concatenate([rng.uniform(-1, 1, n), rng.uniform(-0.5, 0.5, n)])
    traj = simulate(model, x0, None, duration, mode="torque")
    out = [SuiteResult("energy", energy_drift(model, traj) < tol, energy_drift(model, traj), tol, "zero input")]
    if model.base_unactuated:
        sched = sinusoidal_input(rng.uniform(0.5, 1.5, n - 1), rng.uniform(0.2, 1.0, n - 1))
        traj = simulate(model, x0, sched, duration)
        d = momentum_drift(model, traj)
        out.append(SuiteResult("momentum", d < tol, d, tol, "sinusoidal input"))
    return out


def suite_closed_loop(model: ChainModel, samples: int, seed: int, tol: float = 1e-9) -> SuiteResult:
    rng = np.random.default_rng(seed + 5)
    n = model.n
    q = rng.uniform(-np.pi, np.pi, (samples, n))
    qd = rng.uniform(-2, 2, (samples, n))
    u = rng.uniform(-2, 2, (samples, n - 1))
    tau = TorqueLaw(model)(q, qd, u)
    dyn = _Dynamics(model)
    acc = np.array([dyn.accelerations(q[i], qd[i], tau[i]) for i in range(samples)])
    act = [p for p in model.permutation[1:]]
    worst = float(np.abs(acc[:, act] - u).max())
    return SuiteResult("closed_loop", worst < tol, worst, tol, f"{samples} states")


def suite_scaling(model: ChainModel, seed: int, count: int = 20, max_degree: int | None = None) -> SuiteResult:
    fields = VectorFieldSet(model)
    if max_degree is None:
        max_degree = 5 if model.n == 2 else 4
    # brackets with two more controls than drifts vanish identically and carry no exponent
    pool = [e for e in right_nested(fields.symbols, max_degree) if e.degree >= 1 and e.excess <= 1]
    rng = np.random.default_rng(seed + 6)
    picks = [pool[i] for i in rng.choice(len(pool), size=min(count, len(pool)), replace=False)]
    x = random_states(model, 1, seed + 6)[0]
    worst, checked = 0.0, 0
    for e in picks:
        want = e.velocity_degrees
        for lam in (2.0, 3.0):
            got = scaling_exponents(fields, e, x, lam)
            for g, w in zip(got, want):
                if g is not None:
                    worst = max(worst, abs(g - w))
                    checked += 1
    return SuiteResult("scaling_law", worst < 1e-6, worst, 1e-6, f"{len(picks)} brackets, {checked} exponents")


def run_suites(model: ChainModel, samples: int = 200, seed: int = 0) -> list[SuiteResult]:
    out = [
        suite_p_a(model, samples, seed),
        suite_p_ab(model, samples, seed),
        suite_catalog(model, samples, seed),
        suite_q_a(model, samples, seed),
        suite_velocity_independence(model, min(samples, 50), seed),
        suite_closed_loop(model, min(samples, 50), seed),
        suite_scaling(model, seed),
    ]
    out.extend(suite_conservation(model, seed))
    return out
