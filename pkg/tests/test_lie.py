import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planar_stlc import jets
from planar_stlc.lie import (
    BracketDepthError,
    BracketEvaluator,
    BracketExpr,
    SmoothField,
    bracket,
    evaluate_expr,
    right_nested,
)
from planar_stlc.model import State, uniform_chain
from planar_stlc.pfl import VectorFieldSet
from planar_stlc.verify import fd_bracket_oracle, fd_jacobian, random_states


def linear_field(A, label):
    A = np.asarray(A, dtype=float)
    n = len(A)

    def comps(z):
        return [functools.reduce(jets.add, [jets.mul(float(A[i, j]), z[j]) for j in range(n)]) for i in range(n)]

    return SmoothField(n, comps, label=label)


def test_parse_roundtrip_and_counts():
    e = BracketExpr.parse(" [g2, [f, g3]] ")
    assert str(e) == "[g2,[f,g3]]"
    assert e.counts == {"g2": 1, "f": 1, "g3": 1}
    assert e.degree == 3 and e.depth == 2
    assert e.excess == 1 and e.velocity_degrees == (-1, 0)
    assert e.delta(("f", "g2", "g3")) == (1, 1, 1)
    assert list(e.leaves()) == ["g2", "f", "g3"]
    assert str(e.relabel({"g3": "g4"})) == "[g2,[f,g4]]"


@pytest.mark.parametrize("bad", ["", "[f,g2", "[f g2]", "f,g2", "[f,g2]]", "[[f],g2]"])
def test_parse_rejects_malformed(bad):
    with pytest.raises(ValueError):
        BracketExpr.parse(bad)


def test_delta_rejects_unknown_symbol():
    with pytest.raises(ValueError):
        BracketExpr.parse("[f,h]").delta(("f", "g2"))


def test_right_nested_enumeration():
    exprs = right_nested(("f", "g2"), 3)
    assert [str(e) for e in exprs] == ["f", "g2", "[f,g2]", "[f,[f,g2]]", "[g2,[f,g2]]"]
    full = right_nested(("f", "g2", "g3"), 4, canonical=False)
    # 6 ordered innermost pairs, then 3 choices at each of two outer levels
    assert sum(e.degree == 4 for e in full) == 6 * 3 * 3


def test_linear_field_bracket_is_commutator():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(2, 3, 3))
    X, Y = linear_field(A, "X"), linear_field(B, "Y")
    XY = bracket(X, Y)
    x = rng.normal(size=(5, 3))
    assert np.allclose(XY(x), x @ (B @ A - A @ B).T)
    assert XY.label == "[X,Y]"
    assert np.allclose(bracket(X, X)(x), 0.0)


def test_field_jacobian_matches_fd():
    rng = np.random.default_rng(1)
    fields = VectorFieldSet(uniform_chain(3, 2))
    f = fields.field("f")
    x = rng.normal(size=6)
    assert np.allclose(f.jacobian(x), fd_jacobian(f, x, h=1e-6), atol=1e-7)


def test_antisymmetry_and_jacobi(models):
    fields = VectorFieldSet(models["three_link_config2"])
    x = random_states(models["three_link_config2"], 20, seed=3)
    ev = BracketEvaluator(fields, x, 2)
    assert np.allclose(ev.value("[g2,f]"), -ev.value("[f,g2]"))
    jac = ev.value("[f,[g2,g3]]") + ev.value("[g2,[g3,f]]") + ev.value("[g3,[f,g2]]")
    assert np.allclose(jac, 0.0, atol=1e-10)


def test_jacobi_on_nested_brackets(models):
    fields = VectorFieldSet(models["pendubot2"])
    x = random_states(models["pendubot2"], 10, seed=4)
    ev = BracketEvaluator(fields, x, 3)
    a, b, c = "f", "g2", "[f,g2]"
    total = ev.value(f"[{a},[{b},{c}]]") + ev.value(f"[{b},[{c},{a}]]") + ev.value(f"[{c},[{a},{b}]]")
    assert np.allclose(total, 0.0, atol=1e-9)


@pytest.mark.parametrize("expr", ["[f,g2]", "[g3,[f,g2]]", "[f,[f,g3]]"])
def test_jets_match_finite_differences(models, expr):
    m = models["three_link_config1"]
    fields = VectorFieldSet(m)
    x = random_states(m, 10, seed=5)
    want = fd_bracket_oracle(fields, expr, x)
    got = BracketEvaluator(fields, x, 2).value(expr)
    assert np.allclose(got, want, atol=1e-6 * (1 + np.abs(want).max()))


def test_memoized_values_independent_of_request_order(models):
    fields = VectorFieldSet(models["pendubot4"])
    x = random_states(models["pendubot4"], 4, seed=6)
    e1 = BracketEvaluator(fields, x, 3)
    a = e1.value("[g2,[f,[f,g3]]]")
    e2 = BracketEvaluator(fields, x, 3)
    e2.value("[f,g3]")
    e2.value("[f,[f,g3]]")
    assert np.array_equal(a, e2.value("[g2,[f,[f,g3]]]"))


def test_single_state_and_state_object(models):
    m = models["pendubot2"]
    fields = VectorFieldSet(m)
    s = State.from_physical(m, [0.4, -0.9], [0.3, 0.1])
    v1 = evaluate_expr("[f,g2]", fields, s)
    v2 = evaluate_expr("[f,g2]", fields, s.vector)
    assert v1.shape == (4,) and np.allclose(v1, v2)


def test_depth_limit(models):
    fields = VectorFieldSet(models["pendubot2"])
    with pytest.raises(BracketDepthError):
        BracketEvaluator(fields, np.zeros(4), 7)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0), st.integers(0, 5))
def test_velocity_homogeneity(lam, k):
    m = uniform_chain(2, 2)
    fields = VectorFieldSet(m)
    exprs = [e for e in right_nested(fields.symbols, 4) if e.degree >= 2]
    e = exprs[k % len(exprs)]
    x = random_states(m, 1, seed=k)[0]
    xs = x.copy()
    xs[2:] *= lam
    ev = BracketEvaluator(fields, np.stack([x, xs]), e.depth)
    b0, b1 = ev.value(e)
    dq, dv = e.velocity_degrees
    assert np.allclose(b1[:2], lam**dq * b0[:2], atol=1e-9)
    assert np.allclose(b1[2:], lam**dv * b0[2:], atol=1e-9)
