import io
import logging

import numpy as np
import pytest

from tclsteady import dynamics, manifold, models
from tclsteady.dynamics import IntegrationError
from tclsteady.models import GeneratorModel, GeneratorTerm, NonCommutingError
from tclsteady.operators import (SIGMA_MINUS, basis_state, is_density_operator, random_density,
                                 trace_distance)

from conftest import commuting_presets, noncommuting_presets


def test_amplitude_damping_closed_form():
    # excited population exp(-int_0^t gamma)
    model = models.preset_amplitude_damping("1+2*sin(t)")
    times = np.linspace(0, 5, 11)
    traj = dynamics.evolve_exact(model, basis_state(2, 1), times)
    expected = np.exp(-(times + 2 * (1 - np.cos(times))))
    assert np.allclose(traj.states[:, 1, 1].real, expected, atol=1e-13)
    ode = dynamics.evolve_ode(model, basis_state(2, 1), 5.0, 2000)
    assert np.allclose(ode.states[::200, 1, 1].real, expected, atol=1e-10)


def test_dephasing_coherence_closed_form():
    model = models.preset_pure_dephasing(1, "exp(-t)")
    rho = np.full((2, 2), 0.5, dtype=complex)
    traj = dynamics.evolve_exact(model, rho, [0.0, 1.0, 30.0])
    # coherence decays as exp(-2 int gamma) and freezes at exp(-2)
    assert traj.states[1, 0, 1] == pytest.approx(0.5 * np.exp(-2 * (1 - np.exp(-1))))
    assert traj.states[2, 0, 1] == pytest.approx(0.5 * np.exp(-2), rel=1e-10)


def test_noncommuting_model_integrates_with_rk4():
    model = noncommuting_presets()["double-dot-both"]
    traj = dynamics.evolve_ode(model, np.eye(4) / 4, 5.0, 1000)
    assert all(is_density_operator(rho, tol=1e-9) for rho in traj.states)
    with pytest.raises(NonCommutingError):
        dynamics.evolve_exact(model, np.eye(4) / 4, [1.0])


def test_positivity_loss_raises():
    # a strongly negative rate drives the state out of the state space
    model = GeneratorModel(2, (GeneratorTerm.dissipator(SIGMA_MINUS, -5.0),))
    with pytest.raises(IntegrationError, match="positivity"):
        dynamics.evolve_ode(model, np.diag([0.5, 0.5]), 5.0, 500)


def test_invalid_initial_state():
    model = models.preset_amplitude_damping(1.0)
    with pytest.raises(ValueError):
        dynamics.evolve_ode(model, np.diag([2.0, -1.0]), 1.0, 10)
    with pytest.raises(ValueError):
        dynamics.evolve_ode(model, np.eye(3) / 3, 1.0, 10)


def test_attraction_trace_monotone_for_markovian_decay():
    model = models.preset_amplitude_damping(1.0)
    proj = manifold.steady_projector(model)
    traj = dynamics.evolve_exact(model, basis_state(2, 1), np.linspace(0, 10, 101))
    tr = dynamics.attraction_trace(traj, proj)
    assert tr.monotone and tr.monotone_envelope
    assert tr.final_distance == pytest.approx(np.exp(-10.0), rel=1e-10)


def test_attraction_trace_non_monotone_with_backflow():
    # gamma = 1 + 2 sin t is negative on parts of each period, so the distance grows there
    model = models.preset_amplitude_damping("1+2*sin(t)")
    proj = manifold.steady_projector(model)
    traj = dynamics.evolve_exact(model, basis_state(2, 1), np.linspace(0, 10, 201))
    tr = dynamics.attraction_trace(traj, proj)
    assert not tr.monotone


def test_verify_attraction_verdicts():
    rep = dynamics.verify_attraction(models.preset_amplitude_damping("exp(-t)"))
    assert not rep.attracted and rep.consistent
    # last initial state is |1><1|, whose excited population freezes at 1/e
    assert rep.final_distances[-1] == pytest.approx(np.exp(-1), abs=1e-6)
    rep = dynamics.verify_attraction(models.preset_amplitude_damping(1.0))
    assert rep.attracted and rep.to_dict()["max_final_distance"] <= 1e-4


def test_trace_drift_is_logged(caplog):
    # a non-trace-preserving "generator" exercises the renormalization path
    model = GeneratorModel(2, (GeneratorTerm.hamiltonian(np.zeros((2, 2)), 1.0),))
    object.__setattr__(model.terms[0], "piece", -0.1 * np.eye(4))
    with caplog.at_level(logging.WARNING):
        traj = dynamics.evolve_ode(model, np.eye(2) / 2, 1.0, 10)
    assert "trace drift" in caplog.text
    assert np.trace(traj.final).real == pytest.approx(1.0)


def test_csv_export():
    model = models.preset_amplitude_damping(1.0)
    traj = dynamics.evolve_exact(model, basis_state(2, 1), [0.0, 0.5])
    buf = io.StringIO()
    text = dynamics.write_trajectory_csv(traj, buf, distances=[1.0, 0.6])
    lines = text.strip().splitlines()
    assert lines[0] == "t,re_0_0,im_0_0,re_0_1,im_0_1,re_1_0,im_1_0,re_1_1,im_1_1,manifold_distance"
    row = [float(x) for x in lines[2].split(",")]
    assert row[0] == 0.5
    assert row[7] == pytest.approx(np.exp(-0.5), rel=1e-15)
    assert buf.getvalue() == text


def test_max_trace_distance_requires_same_grid():
    model = models.preset_amplitude_damping(1.0)
    a = dynamics.evolve_exact(model, basis_state(2, 1), [0.0, 1.0])
    b = dynamics.evolve_exact(model, basis_state(2, 1), [0.0, 2.0])
    with pytest.raises(ValueError):
        dynamics.max_trace_distance(a, b)


@pytest.mark.parametrize("name", sorted(commuting_presets()))
def test_rk4_step_halving_in_asymptotic_regime(name):
    model = commuting_presets()[name]
    rho = random_density(model.dimension, np.random.default_rng(8))
    errs = []
    for steps in (1000, 2000):  # h = 1e-2, 5e-3
        traj = dynamics.evolve_ode(model, rho, 10.0, steps)
        sub = slice(None, None, steps // 100)
        exact = dynamics.evolve_exact(model, rho, traj.times[sub])
        errs.append(max(trace_distance(a, b) for a, b in zip(traj.states[sub], exact.states)))
        assert all(abs(np.trace(s) - 1) <= 1e-8 for s in traj.states)
    assert errs[0] / errs[1] >= 8
