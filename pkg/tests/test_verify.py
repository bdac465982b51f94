import csv

import numpy as np
import pytest

from planar_stlc.accessibility import StructuralRefusal
from planar_stlc.lie import BracketEvaluator
from planar_stlc.model import kinetic_energy
from planar_stlc.pfl import VectorFieldSet
from planar_stlc import verify
from planar_stlc.verify import (
    SimulationError,
    Trajectory,
    default_fd_step,
    export_trajectory_csv,
    fd_bracket_oracle,
    holonomic_residual,
    q_a_values,
    qa_vanishing_check,
    random_states,
    relative_error,
    scaled_error,
    scaling_exponents,
    simulate,
    simulate_rk4,
    sinusoidal_input,
    trajectory_header,
)


@pytest.mark.parametrize("mode", ["pfl", "torque"])
def test_rest_stays_at_rest(models, mode):
    m = models["three_link_config1"]
    x0 = np.array([0.3, -0.4, 1.0, 0, 0, 0])
    traj = simulate(m, x0, None, duration=2.0, mode=mode)
    assert np.allclose(traj.x, x0, atol=1e-12)


def test_pfl_actuated_velocity_integrates_input(models):
    m = models["three_link_config2"]
    amp, freq = np.array([0.8, -0.5]), np.array([0.6, 1.1])
    traj = simulate(m, np.zeros(6), sinusoidal_input(amp, freq), duration=3.0)
    w = 2 * np.pi * freq
    want = amp / w * (1 - np.cos(np.outer(traj.t, w)))
    actuated = [0, 2]
    assert np.allclose(traj.qdot[:, actuated], want, atol=1e-8)
    assert traj.u.shape == (len(traj.t), 2)


def test_energy_conserved_without_torque(models):
    m = models["pendubot2"]
    traj = simulate(m, np.array([0.2, -1.0, 1.5, -2.0]), None, duration=5.0, mode="torque")
    assert verify.energy_drift(m, traj) < 1e-7
    e = kinetic_energy(m, traj.q, traj.qdot)
    assert e[0] > 0.1


def test_momentum_conserved_acrobot(models):
    m = models["acrobot2"]
    traj = simulate(m, np.array([0.1, 0.2, 0.3, -0.4]), sinusoidal_input([1.2], [0.8]), duration=5.0)
    assert verify.momentum_drift(m, traj) < 1e-7
    with pytest.raises(StructuralRefusal):
        verify.momentum_drift(models["pendubot2"], traj)


def test_holonomic_curve_from_rest(models):
    m = models["acrobot2"]
    traj = simulate(m, np.array([0.4, -0.3, 0.0, 0.0]), sinusoidal_input([2.0], [0.4]), duration=4.0)
    assert holonomic_residual(m, traj) < 1e-7
    moving = simulate(m, np.array([0.4, -0.3, 0.5, 0.0]), None, duration=1.0)
    with pytest.raises(ValueError):
        holonomic_residual(m, moving)
    with pytest.raises(StructuralRefusal):
        holonomic_residual(models["pendubot2"], traj)


def test_rk4_agrees_with_adaptive(models):
    m = models["acrobot2"]
    sched = sinusoidal_input([1.0], [0.5])
    x0 = np.array([0.1, 0.2, 0.0, 0.3])
    a = simulate(m, x0, sched, duration=2.0, samples=201)
    b = simulate_rk4(m, x0, sched, duration=2.0, dt=1e-3)
    assert np.allclose(a.x[-1], b.x[-1], atol=1e-9)
    assert b.stats["method"] == "RK4"


def test_non_finite_input_raises_simulation_error(models):
    m = models["pendubot2"]
    bad = lambda t: np.array([np.nan if t > 0.5 else 0.0])
    with pytest.raises(SimulationError):
        simulate(m, np.zeros(4), bad, duration=2.0)
    with pytest.raises(SimulationError):
        simulate_rk4(m, np.zeros(4), bad, duration=1.0, dt=0.01)


def test_simulate_validates_arguments(models):
    m = models["pendubot2"]
    with pytest.raises(ValueError):
        simulate(m, np.zeros(4), mode="velocity")
    with pytest.raises(ValueError):
        simulate(m, np.zeros(3))
    with pytest.raises(ValueError):
        simulate(m, np.zeros(4), duration=0.0)
    with pytest.raises(ValueError):
        simulate_rk4(m, np.zeros(4), dt=0.0)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 4)), np.zeros((2, 1)), "pfl")
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.full((2, 4), np.nan), np.zeros((2, 1)), "pfl")


def test_csv_export(models, tmp_path):
    m = models["acrobot2"]
    traj = simulate_rk4(m, np.zeros(4), sinusoidal_input([1.0], [1.0]), duration=0.1, dt=0.01)
    path = tmp_path / "t.csv"
    export_trajectory_csv(m, traj, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "q1", "q2", "qdot1", "qdot2", "u2", "momentum", "energy"]
    assert len(rows) == 12
    assert abs(float(rows[-1][6])) < 1e-10
    again = tmp_path / "t2.csv"
    export_trajectory_csv(m, traj, again)
    assert path.read_bytes() == again.read_bytes()
    torque = simulate_rk4(m, np.zeros(4), None, duration=0.02, dt=0.01, mode="torque")
    assert trajectory_header(m, torque)[5:7] == ["tau1", "tau2"]


def test_fd_self_bracket_vanishes(models):
    m = models["three_link_config1"]
    fields = VectorFieldSet(m)
    x = random_states(m, 5, seed=40)
    assert np.abs(fd_bracket_oracle(fields, "[f,f]", x)).max() < 1e-12
    assert np.abs(fd_bracket_oracle(fields, "[[f,g2],[f,g2]]", x)).max() < 1e-12


@pytest.mark.parametrize("stencil,order", [(3, 2), (5, 4)])
def test_fd_error_order(models, stencil, order):
    m = models["pendubot2"]
    fields = VectorFieldSet(m)
    x = random_states(m, 1, seed=41)[0]
    exact = BracketEvaluator(fields, x, 1).value("[f,g2]")
    h = 2e-2 if stencil == 3 else 1e-1
    e1 = np.abs(fd_bracket_oracle(fields, "[f,g2]", x, h=h, stencil=stencil) - exact).max()
    e2 = np.abs(fd_bracket_oracle(fields, "[f,g2]", x, h=h / 2, stencil=stencil) - exact).max()
    assert 0.6 * order < np.log2(e1 / e2) < 1.4 * order


def test_fd_step_rule_and_validation(models):
    assert np.isclose(default_fd_step(1, stencil=3), 1e-5**0.5)
    assert np.isclose(default_fd_step(2, stencil=3), 1e-5 ** (1 / 3))
    assert default_fd_step(3) == 1e-3
    fields = VectorFieldSet(models["pendubot2"])
    with pytest.raises(ValueError):
        fd_bracket_oracle(fields, "[f,g2]", np.zeros(4), h=-1.0)
    with pytest.raises(ValueError):
        fd_bracket_oracle(fields, "[f,g2]", np.zeros(4), stencil=4)


def test_q_a_vanishes_only_with_passive_base(models):
    for name in ("acrobot2", "three_link_config3"):
        assert qa_vanishing_check(models[name], samples=100, seed=42) < 1e-9
    m = models["pendubot2"]
    assert np.abs(q_a_values(m, random_states(m, 1, seed=43))).max() > 1e-3
    with pytest.raises(StructuralRefusal):
        qa_vanishing_check(m)


def test_scaling_exponents_simple(models):
    m = models["pendubot2"]
    fields = VectorFieldSet(m)
    x = random_states(m, 1, seed=44)[0]
    assert scaling_exponents(fields, "[f,g2]", x, 2.0) == pytest.approx((0.0, 1.0), abs=1e-9)
    assert scaling_exponents(fields, "[f,[f,g2]]", x, 3.0) == pytest.approx((1.0, 2.0), abs=1e-9)
    dq, dv = scaling_exponents(fields, "g2", x, 2.0)
    assert dq is None and dv == pytest.approx(0.0, abs=1e-12)


def test_error_measures():
    assert np.allclose(relative_error(np.array([1.1, 1e-9]), np.array([1.0, 0.0])), [0.1, 1e-3])
    assert scaled_error(np.array([1e-8, 0.0]), np.zeros(2)) == 1e-8
    assert np.isclose(scaled_error(np.array([1.0, 2.1]), np.array([1.0, 2.0])), 0.1 / np.sqrt(2.5))


def test_suites_pass_on_small_models(models):
    for name in ("pendubot2", "acrobot2", "three_link_config3"):
        results = verify.run_suites(models[name], samples=40, seed=1)
        assert all(r.passed for r in results), [(r.name, r.max_residual) for r in results if not r.passed]
        assert {r.name for r in results} >= {"closed_form_P_a", "closed_form_P_ab", "energy", "scaling_law"}
