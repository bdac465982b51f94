"""End-to-end acceptance checks, one test per criterion.

Each test prints a one-line verdict with the measured quantity; the
terminal summary collects pass/fail for all of them.
"""

import time

import numpy as np
import pytest

from planar_stlc import closed_forms, verify
from planar_stlc.accessibility import Distribution, algebra, involutivity_check, rank_batch, spanning_set
from planar_stlc.lie import BracketEvaluator, BracketExpr, right_nested
from planar_stlc.model import State, to_relabeled
from planar_stlc.pfl import VectorFieldSet
from planar_stlc.stlc import certificate_search
from planar_stlc.tolerances import bracket_zero_threshold


def report(criterion, ok, text):
    print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {text}")


def random_physical(model, count, rng, equilibrium=False, speed=2.0):
    n = model.n
    q = rng.uniform(-np.pi, np.pi, (count, n))
    v = np.zeros((count, n)) if equilibrium else rng.uniform(-speed, speed, (count, n))
    return np.concatenate([q, v], axis=-1)


def test_criterion_01_pendubot_spanning_rank(models):
    m = models["pendubot2"]
    rng = np.random.default_rng(1)
    dist = spanning_set(m)
    t0 = time.perf_counter()
    pool = random_physical(m, 1400, rng)
    keep = np.abs(np.sin(2 * pool[:, 1])) >= 0.05
    x = pool[keep][:1000]
    rank, _ = rank_batch(dist, to_relabeled(m, x))
    k = rng.integers(-4, 5, 200)
    sing = random_physical(m, 200, rng)
    sing[:, 1] = k * np.pi / 2
    sing[:100, 2:] = 0.0
    srank, _ = rank_batch(dist, to_relabeled(m, sing))
    elapsed = time.perf_counter() - t0
    ok = len(x) == 1000 and np.all(rank == 4) and np.all(srank < 4) and elapsed < 1.0
    report(1, ok, f"rank 4 at {np.sum(rank == 4)}/1000, rank<4 at {np.sum(srank < 4)}/200 singular, {elapsed:.2f}s")
    assert ok


def test_criterion_02_pendubot_no_certificate(models):
    m = models["pendubot2"]
    rng = np.random.default_rng(2)
    generic = rng.uniform(-np.pi, np.pi, (40, 2))
    generic = generic[np.abs(np.sin(2 * generic[:, 1])) > 0.05][:20]
    # [g1,[f,g1]] itself vanishes where sin(2 x2) = 0, so it cannot obstruct there
    singular = np.array([[0.0, 0.0], [0.5, np.pi / 2], [1.0, np.pi], [-2.0, -np.pi / 2]])
    gen = [certificate_search(m, State.from_physical(m, q)) for q in generic]
    sng = [certificate_search(m, State.from_physical(m, q)) for q in singular]
    none = all(c.verdict == "no certificate" for c in gen + sng)
    named = sum("[g1,[f,g1]]" in [e.label for e in c.obstructions] for c in gen)
    deficient = sum("spanning rank" in c.reason for c in sng)
    ok = none and named == len(gen) and deficient == len(sng)
    report(2, ok, f"{len(gen) + len(sng)} equilibria without certificate: {none}; obstruction [g1,[f,g1]] named at "
           f"{named}/{len(gen)} generic equilibria; spanning rank deficient at {deficient}/{len(sng)} with sin(2x2)=0")
    assert ok


def test_criterion_03_acrobot_algebra_rank(models):
    m = models["acrobot2"]
    rng = np.random.default_rng(3)
    dist = algebra(VectorFieldSet(m), max_degree=5)  # nesting depth 4
    r_gen, _ = rank_batch(dist, to_relabeled(m, random_physical(m, 1000, rng)))
    r_eq, _ = rank_batch(dist, to_relabeled(m, random_physical(m, 1000, rng, equilibrium=True)))
    ok = np.all(r_gen == 3) and np.all(r_eq == 2)
    report(3, ok, f"rank 3 at {np.sum(r_gen == 3)}/1000, rank 2 at {np.sum(r_eq == 2)}/1000 equilibria")
    assert ok


def test_criterion_04_acrobot_momentum(models):
    m = models["acrobot2"]
    x0 = np.array([0.3, -0.5, 0.4, -0.2])
    sched = verify.sinusoidal_input([1.5], [0.7])
    t0 = time.perf_counter()
    traj = verify.simulate(m, x0, sched, duration=5.0)
    elapsed = time.perf_counter() - t0
    drift = verify.momentum_drift(m, traj)
    ok = drift < 1e-7 and elapsed < 1.0
    report(4, ok, f"momentum drift {drift:.2e} over 5 s, {elapsed:.2f}s")
    assert ok


def test_criterion_05_config1_rank_and_certificates(models):
    m = models["three_link_config1"]
    rng = np.random.default_rng(5)
    x = random_physical(m, 1000, rng)
    x = np.concatenate([x, random_physical(m, 500, rng, equilibrium=True)])
    r1 = closed_forms.config1_R1(m.aggregates, x)
    big = np.abs(r1) > 1e-6
    rank, _ = rank_batch(spanning_set(m), to_relabeled(m, x[big]))
    rank_ok = bool(np.all(rank == 6))

    k3 = rng.integers(0, 4, 50)
    x2 = rng.uniform(0.2, np.pi - 0.2, 50) + np.pi * rng.integers(0, 2, 50)
    x1 = rng.uniform(-np.pi, np.pi, 50)
    found, degrees = 0, set()
    for i in range(50):
        c = certificate_search(m, State.from_physical(m, [x1[i], x2[i], k3[i] * np.pi / 2]))
        found += c.found
        if c.found:
            degrees.add(tuple(int(d) for d in c.theta_degrees))
    deg_ok = degrees <= {(4, 3, 5), (4, 5, 3)} and bool(degrees)
    ok = rank_ok and found == 50 and deg_ok
    report(5, ok, f"rank 6 at {np.sum(rank == 6)}/{big.sum()} states with |R1|>1e-6, "
           f"certificates {found}/50, theta-degrees {sorted(degrees)}")
    assert ok


def test_criterion_06_config3_involutive(models):
    m = models["three_link_config3"]
    rng = np.random.default_rng(6)
    fields = VectorFieldSet(m)
    x = to_relabeled(m, random_physical(m, 1000, rng))
    ev = BracketEvaluator(fields, x, 2)
    names = ["[g2,g3]"] + [f"[g{i},[f,g{j}]]" for i in (2, 3) for j in (2, 3)]
    thr = 1e-9
    vanish = max(float(np.abs(ev.value(e)).max()) for e in names)
    dist = Distribution(fields, tuple(BracketExpr.parse(s) for s in ("f", "g2", "g3", "[f,g2]", "[f,g3]")))
    inv = involutivity_check(dist, x[:200])
    rank, _ = rank_batch(algebra(fields, 4), x[:500])
    ok = vanish < thr and inv.involutive and int(rank.max()) <= 5
    report(6, ok, f"max |bracket| {vanish:.1e}, {inv.summary} (residual {inv.max_residual:.1e}), max rank {rank.max()}")
    assert ok


def test_criterion_07_nlink_closed_forms(models):
    t0 = time.perf_counter()
    lines, ok = [], True
    for name in ("pendubot4", "pendubot5"):
        m = models[name]
        pa = verify.suite_p_a(m, 500, seed=7)
        pab = verify.suite_p_ab(m, 500, seed=7)
        sens = verify.p_ab_velocity_sensitivity(m, 500, seed=7)
        ok &= pa.passed and pab.passed and sens < 1e-10
        lines.append(f"{name}: P_a {pa.max_residual:.1e}, P_ab {pab.max_residual:.1e}, d/dqdot {sens:.1e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10.0
    report(7, ok, "; ".join(lines) + f"; {elapsed:.1f}s")
    assert ok


def test_criterion_08_nlink_base_unactuated(models):
    lines, ok = [], True
    for name in ("acrobot4", "acrobot5"):
        m = models[name]
        n = m.n
        fields = VectorFieldSet(m)
        x = verify.random_states(m, 500, seed=8)
        ev = BracketEvaluator(fields, x, 2)
        idx = fields.control_indices
        p = max(float(np.abs(ev.value(f"[g{a},[f,g{b}]]")[:, n]).max()) for a in idx for b in idx)
        q = float(np.abs(verify.q_a_values(m, x)).max())
        rank, _ = rank_batch(algebra(fields, 4), x)
        ok &= p < 1e-9 and q < 1e-9 and int(rank.max()) <= 2 * n - 1
        lines.append(f"{name}: max|P_ab| {p:.1e}, max|Q_a| {q:.1e}, max rank {rank.max()}/{2 * n}")
    report(8, ok, "; ".join(lines))
    assert ok


@pytest.mark.parametrize("name,max_degree", [("pendubot2", 7), ("acrobot2", 7), ("three_link_config1", 7)])
def test_criterion_09_pruned_brackets_vanish(models, name, max_degree):
    m = models[name]
    fields = VectorFieldSet(m)
    pruned = [e for e in right_nested(fields.symbols, max_degree) if e.excess not in (0, 1)]
    neg = [e for e in pruned if e.excess <= -1]
    pos = [e for e in pruned if e.excess >= 2]
    x_eq = verify.random_states(m, 100, seed=9, equilibrium=True)
    x_gen = verify.random_states(m, 100, seed=10)
    worst = 0.0
    for exprs, x in ((neg, x_eq), (pos, x_gen)):
        if not exprs:
            continue
        ev = BracketEvaluator(fields, x, max(e.depth for e in exprs))
        thr = bracket_zero_threshold(fields.generator_norm(x))
        for e in exprs:
            worst = max(worst, float((np.abs(ev.value(e)).max(axis=-1) / thr).max()))
    ok = worst < 1.0
    report(9, ok, f"{name}: {len(neg)} brackets with l<=-1 at equilibria, {len(pos)} with l>=2, "
           f"max |value|/threshold {worst:.1e}")
    assert ok


@pytest.mark.parametrize("name", ["pendubot2", "three_link_config1"])
def test_criterion_10_scaling_law(models, name):
    m = models[name]
    res = verify.suite_scaling(m, seed=11, count=20, max_degree=5 if m.n == 2 else 4)
    ok = res.passed
    report(10, ok, f"{name}: {res.detail}, max exponent error {res.max_residual:.1e}")
    assert ok
