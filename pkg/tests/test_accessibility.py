import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planar_stlc.accessibility import (
    Distribution,
    StructuralRefusal,
    algebra,
    grid_states,
    involutivity_check,
    momentum_invariant,
    numerical_rank,
    rank_at,
    rank_batch,
    scan,
    singular_scan,
    spanning_set,
)
from planar_stlc.lie import BracketExpr
from planar_stlc.model import State, to_relabeled, uniform_chain
from planar_stlc.pfl import VectorFieldSet
from planar_stlc.verify import random_states, simulate, sinusoidal_input


def dist_of(model, *names):
    return Distribution(VectorFieldSet(model), tuple(BracketExpr.parse(s) for s in names))


def test_pendubot_rank_at_quarter_turn(models):
    m = models["pendubot2"]
    r = rank_at(spanning_set(m), State.from_physical(m, [0.0, np.pi / 4]))
    assert r.rank == 4 and r.verdict == "accessible"
    d = r.to_dict()
    assert d["rank"] == 4 and len(d["singular_values"]) == 4
    assert d["generators"] == ["g2", "[f,g2]", "[g2,[f,g2]]", "[f,[g2,[f,g2]]]"]


def test_acrobot_rank_three_generic_two_at_rest(models):
    m = models["acrobot2"]
    dist = algebra(VectorFieldSet(m), 5)
    assert rank_at(dist, random_states(m, 1, seed=1)[0]).rank == 3
    assert rank_at(dist, random_states(m, 1, seed=1, equilibrium=True)[0]).rank == 2


def test_pendubot_type_accessible_almost_everywhere(models):
    for name in ("pendubot2", "three_link_config1", "three_link_config2", "pendubot4"):
        m = models[name]
        rank, _ = rank_batch(spanning_set(m), random_states(m, 1000, seed=2))
        assert np.mean(rank == 2 * m.n) >= 0.99, name


def test_base_unactuated_never_full_rank(models):
    m = models["acrobot2"]
    dist = algebra(VectorFieldSet(m), 5)
    rank, _ = rank_batch(dist, random_states(m, 10_000, seed=3))
    assert rank.max() <= 3
    rank0, _ = rank_batch(dist, random_states(m, 10_000, seed=4, equilibrium=True))
    assert rank0.max() <= 2
    m3 = models["three_link_config3"]
    rank3, _ = rank_batch(algebra(VectorFieldSet(m3), 4), random_states(m3, 2000, seed=5))
    assert rank3.max() <= 5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 6))
def test_rank_monotone_in_generators(seed, k):
    m = uniform_chain(3, 3)
    pool = algebra(VectorFieldSet(m), 3).generators
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    small = Distribution(VectorFieldSet(m), tuple(pool[i] for i in order[:k]))
    big = small.extended(pool[i] for i in order[k : k + 3])
    x = random_states(m, 4, seed=seed)
    assert np.all(rank_batch(big, x)[0] >= rank_batch(small, x)[0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=6, max_size=6), st.integers(0, 2**16))
def test_rank_invariant_under_generator_scaling(scales, seed):
    m = uniform_chain(3, 2)
    dist = spanning_set(m)
    x = random_states(m, 3, seed=seed)
    A = dist.matrix(x)
    gn = dist.fields.generator_norm(x)
    r0, _ = numerical_rank(A, gn)
    r1, _ = numerical_rank(A * np.asarray(scales), gn)
    assert np.array_equal(r0, r1)


def test_numerical_rank_known_matrices():
    A = np.array([[1.0, 0.0, 1.0], [0.0, 1e-3, 0.0], [0.0, 0.0, 0.0]])
    r, sv = numerical_rank(A, 1.0)
    assert int(r) == 2 and sv.shape == (3,)
    r, _ = numerical_rank(np.zeros((3, 2)), 1.0)
    assert int(r) == 0
    r, _ = numerical_rank(np.array([[1.0, 1e-12], [0.0, 0.0]]), 1.0)
    assert int(r) == 1


def test_spanning_set_refused_for_passive_base(models):
    with pytest.raises(StructuralRefusal):
        spanning_set(models["acrobot2"])
    with pytest.raises(ValueError):
        spanning_set(models["three_link_config1"], (2, 4))


def test_rank_at_rejects_batch(models):
    m = models["pendubot2"]
    with pytest.raises(ValueError):
        rank_at(spanning_set(m), np.zeros((2, 4)))


def test_involutive_sets(models):
    ac = models["acrobot2"]
    rep = involutivity_check(dist_of(ac, "f", "g2", "[f,g2]"), random_states(ac, 200, seed=6))
    assert rep.involutive and rep.summary == "involutive on 200 samples"
    c3 = models["three_link_config3"]
    rep = involutivity_check(dist_of(c3, "f", "g2", "g3", "[f,g2]", "[f,g3]"), random_states(c3, 200, seed=7))
    assert rep.involutive and rep.max_residual < 1e-8


def test_pendubot_drift_and_control_not_involutive(models):
    m = models["pendubot2"]
    x = to_relabeled(m, np.array([0.3, np.pi / 4, 0.5, -0.2]))
    rep = involutivity_check(dist_of(m, "f", "g2"), x)
    assert not rep.involutive
    assert rep.worst_pair == ("f", "g2")
    assert "not involutive" in rep.summary


def test_involutivity_skips_dependent_samples(models):
    m = models["pendubot2"]
    x = random_states(m, 5, seed=8, equilibrium=True)
    with pytest.warns(UserWarning, match="skipped"):
        rep = involutivity_check(dist_of(m, "g2", "[g2,g2]"), x)
    assert rep.samples_skipped == 5 and rep.samples_used == 0


def test_involutivity_needs_two_generators(models):
    with pytest.raises(ValueError):
        involutivity_check(dist_of(models["pendubot2"], "f"), np.zeros(4))


def test_scan_single_point_and_singular_flags(models):
    m = models["pendubot2"]
    rows = scan(m, [[0.0, np.pi / 3]])
    assert len(rows) == 1 and not rows[0].singular
    rows = singular_scan(m, {2: np.linspace(0, 2 * np.pi, 9)})
    assert sorted(round(r.q[1] / (np.pi / 2)) for r in rows) == [0, 1, 2, 3, 4]
    assert all(r.predicate_zero for r in rows)


def test_grid_states_layout(models):
    m = models["three_link_config1"]
    q = grid_states(m, {2: [0.0, 1.0], 3: [0.0, 0.5, 1.0]})
    assert q.shape == (6, 3) and np.all(q[:, 0] == 0)
    assert q[1].tolist() == [0.0, 0.0, 0.5]
    with pytest.raises(ValueError):
        grid_states(m, {4: [0.0]})


def test_momentum_invariant(models):
    m = models["acrobot2"]
    traj = simulate(m, np.zeros(4), sinusoidal_input([1.0], [0.5]), duration=2.0)
    rep = momentum_invariant(m, traj)
    assert rep.initial == 0.0 and rep.max_deviation < 1e-8
    still = simulate(m, np.array([0.1, 0.2, 0.5, -0.3]), None, duration=2.0, mode="torque")
    rep = momentum_invariant(m, still)
    assert rep.initial != 0.0 and rep.max_deviation < 1e-8
    with pytest.raises(StructuralRefusal):
        momentum_invariant(models["pendubot2"], traj)
