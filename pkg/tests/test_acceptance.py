"""Acceptance criteria 1-9 at their stated tolerances.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import json
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

from conftest import PHI, commuting_presets
from tclsteady import cli, dynamics, manifold, models, spectral
from tclsteady.operators import (basis_state, is_cptp, is_density_operator, random_density,
                                 trace_distance, vectorize)

DATA = Path(__file__).parent / "data"
COMMUTING = sorted(commuting_presets())


def _random_times(seed, n=10, t_max=10.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, t_max, size=n) + 1e-3


def _quad_expm(model, t):
    """Oracle: for commuting pieces Lambda(t) = expm(sum_k int_0^t f_k G_k)."""
    total = np.zeros((model.dimension ** 2,) * 2, dtype=complex)
    for term in model.active_terms():
        integral = quad(lambda s: term.rate(s), 0.0, t, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        total += integral * term.piece
    return expm(total)


# -- 1 ---------------------------------------------------------------------

@pytest.mark.criterion_1
@pytest.mark.parametrize("name", COMMUTING)
def test_c1_propagators_are_cptp(name):
    model = commuting_presets()[name]
    for t in _random_times(1):
        rep = is_cptp(spectral.propagator(model, t))
        assert rep.min_choi_eigenvalue >= -1e-8
        assert rep.trace_preservation_error <= 1e-10


# -- 2 ---------------------------------------------------------------------

@pytest.mark.criterion_2
def test_c2_commutativity_verdicts():
    eq10 = models.preset_two_qubit_dephasing("1+0.5*sin(t)", "exp(-t)")
    assert models.check_commutativity(eq10).commuting

    both = models.preset_double_dot(PHI, 1.0, "exp(-t)", "1+sin(t)")
    rep = models.check_commutativity(both)
    assert not rep.commuting
    assert rep.max_pair_residual > 0.1
    # raw commutator of the two dissipator pieces, independent of the normalization
    g1, g2 = (term.piece for term in both.active_terms())
    assert np.linalg.norm(g1 @ g2 - g2 @ g1) > 0.1

    dark = models.preset_double_dot(PHI, 1.0, "exp(-t)", 0.0)
    assert models.check_commutativity(dark).commuting


# -- 3 ---------------------------------------------------------------------

@pytest.mark.criterion_3
@pytest.mark.parametrize("name", COMMUTING)
def test_c3_cesaro_identities(name):
    model = commuting_presets()[name]
    for t in _random_times(3, n=3):
        lam = spectral.propagator(model, t)
        p = manifold.cesaro_projector(lam, check_mean=False).map
        scale = 1e-9 * np.linalg.norm(p)
        assert np.linalg.norm(p @ lam - p) <= scale
        assert np.linalg.norm(lam @ p - p) <= scale
        assert np.linalg.norm(p @ p - p) <= scale


@pytest.mark.criterion_3
@pytest.mark.parametrize("name", COMMUTING)
def test_c3_finite_cesaro_mean_converges(name):
    lam = spectral.propagator(commuting_presets()[name], 1.0)
    p = manifold.cesaro_projector(lam, check_mean=False).map
    dists = [np.linalg.norm(manifold.cesaro_mean(lam, n) - p) for n in (128, 256, 512, 1024)]
    assert dists[-1] <= 0.05
    assert all(b < a for a, b in zip(dists, dists[1:]))


# -- 4 ---------------------------------------------------------------------

@pytest.mark.criterion_4
@pytest.mark.parametrize("name", COMMUTING)
def test_c4_existence_witness(name):
    model = commuting_presets()[name]
    times = manifold.default_grid(10.0)
    proj = manifold.steady_projector(model, sample_times=times)
    d = model.dimension
    rho = proj(np.eye(d) / d)
    assert is_density_operator(0.5 * (rho + rho.conj().T), tol=1e-10)
    assert np.linalg.norm(rho - rho.conj().T) <= 1e-10
    for lam in spectral.propagators(model, times):
        assert np.linalg.norm(lam @ vectorize(rho) - vectorize(rho)) <= 1e-8


# -- 5 ---------------------------------------------------------------------

def _structure(model):
    return manifold.structure_decomposition(manifold.steady_projector(model))


@pytest.mark.criterion_5
def test_c5_collective_dephasing():
    s = _structure(commuting_presets()["collective-dephasing"])
    assert sorted(s.block_dims) == [(1, 1), (1, 1), (2, 1)]
    assert s.steady_dimension == 6
    assert s.decaying_dim == 0
    assert s.diagnostics["reconstruction_residual"] <= 1e-8


@pytest.mark.criterion_5
def test_c5_independent_dephasing():
    s = _structure(commuting_presets()["independent-dephasing"])
    assert s.block_dims == [(1, 1)] * 4
    assert s.steady_dimension == 4
    assert s.diagnostics["reconstruction_residual"] <= 1e-8


@pytest.mark.criterion_5
def test_c5_amplitude_damping():
    s = _structure(commuting_presets()["amplitude-damping"])
    assert s.block_dims == [(1, 1)]
    assert s.decaying_dim == 1
    b = s.blocks[0]
    assert np.allclose(b.isometry @ b.isometry.conj().T, basis_state(2, 0), atol=1e-10)
    assert np.allclose(s.reference_state, basis_state(2, 0), atol=1e-10)
    assert s.diagnostics["reconstruction_residual"] <= 1e-8


@pytest.mark.criterion_5
def test_c5_double_dot_dark_block():
    s = _structure(commuting_presets()["double-dot-dark"])
    assert s.block_dims == [(2, 1)]
    assert s.decaying_dim == 2
    proj = s.blocks[0].projector
    vacuum = np.array([1, 0, 0, 0], dtype=complex)
    dark = np.array([0, -np.exp(-1j * PHI), 1, 0]) / np.sqrt(2)  # (|10> - e^{-i phi}|01>)/sqrt 2
    assert np.linalg.norm(proj @ vacuum - vacuum) <= 1e-10
    assert np.linalg.norm(proj @ dark - dark) <= 1e-10
    assert s.diagnostics["reconstruction_residual"] <= 1e-8


@pytest.mark.criterion_5
@pytest.mark.parametrize("name", ["collective-dephasing", "independent-dephasing",
                                  "amplitude-damping", "double-dot-dark"])
def test_c5_reconstruction_on_random_states(name, rng):
    proj = manifold.steady_projector(commuting_presets()[name])
    s = manifold.structure_decomposition(proj)
    w = s.support_isometry
    for _ in range(20):
        rho = w @ random_density(w.shape[1], rng) @ w.conj().T
        assert np.linalg.norm(proj(rho) - s.restricted_projection(rho)) <= 1e-8


# -- 6 ---------------------------------------------------------------------

@pytest.mark.criterion_6
@pytest.mark.parametrize("name", COMMUTING)
def test_c6_biorthonormal_and_matches_expm(name):
    model = commuting_presets()[name]
    basis = spectral.damping_basis(model)
    assert basis.biorthonormality_error() <= 1e-8
    for t in _random_times(6):
        assert np.abs(spectral.propagator(model, t, basis) - _quad_expm(model, t)).max() <= 1e-8


@pytest.mark.criterion_6
@pytest.mark.parametrize("gamma", [1.0, 0.37])
def test_c6_reference_spectra(gamma):
    ad = spectral.damping_basis(models.preset_amplitude_damping(gamma)).eigenvalues_at(0.0)
    assert np.allclose(np.sort_complex(ad), [-gamma, -gamma / 2, -gamma / 2, 0], atol=1e-10)
    dp = spectral.damping_basis(models.preset_pure_dephasing(1, gamma)).eigenvalues_at(0.0)
    assert np.allclose(np.sort_complex(dp), [-2 * gamma, -2 * gamma, 0, 0], atol=1e-10)


# -- 7 ---------------------------------------------------------------------

@pytest.mark.criterion_7
def test_c7_markovian_is_attractive():
    assert spectral.attractiveness(models.preset_amplitude_damping(1.0)).attractive


@pytest.mark.criterion_7
def test_c7_exponential_rate_plateaus():
    model = models.preset_amplitude_damping("exp(-t)")
    assert not spectral.attractiveness(model).attractive
    proj = manifold.steady_projector(model)
    traj = dynamics.evolve_exact(model, basis_state(2, 1), np.linspace(0, 50, 51))
    dist = dynamics.attraction_trace(traj, proj).final_distance
    # excited population decays to exp(-int_0^inf e^{-s} ds) = 1/e
    assert abs(dist - np.exp(-1)) <= 1e-4


@pytest.mark.criterion_7
def test_c7_oscillating_rate_is_attractive():
    model = models.preset_amplitude_damping("1+2*sin(t)")
    rep = spectral.attractiveness(model, horizon=50.0)
    assert rep.attractive
    decaying = [mu for mu, c in enumerate(rep.classification) if c == "decaying"]
    assert decaying
    for mu in decaying:
        assert rep.accumulated[mu, -1] - rep.accumulated[mu, -2] >= 1
    att = dynamics.verify_attraction(model, horizon=50.0, tol=1e-4)
    assert att.attracted and max(att.final_distances) <= 1e-4


# -- 8 ---------------------------------------------------------------------

@pytest.mark.criterion_8
@pytest.mark.parametrize("name", COMMUTING)
def test_c8_rk4_matches_exact(name):
    model = commuting_presets()[name]
    rho0 = random_density(model.dimension, np.random.default_rng(8))
    traj = dynamics.evolve_ode(model, rho0, 10.0, 10_000)
    sub = slice(None, None, 100)
    exact = dynamics.evolve_exact(model, rho0, traj.times[sub])
    assert max(trace_distance(a, b) for a, b in zip(traj.states[sub], exact.states)) <= 1e-6


@pytest.mark.criterion_8
@pytest.mark.parametrize("name", COMMUTING)
def test_c8_convergence_order(name):
    model = commuting_presets()[name]
    rho0 = random_density(model.dimension, np.random.default_rng(8))
    ref = dynamics.evolve_exact(model, rho0, [10.0]).final
    errs = [trace_distance(dynamics.evolve_ode(model, rho0, 10.0, n).final, ref) for n in (50, 100, 200)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.5), orders


# -- 9 ---------------------------------------------------------------------

def _run(capsys, *argv):
    code = cli.main(["--seed", "0", *map(str, argv)])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None), out


PRESET_COMMANDS = {
    "amplitude_damping_markov.json": ["amplitude-damping", "gamma=1"],
    "amplitude_damping_exp.json": ["amplitude-damping", "gamma=exp(-t)"],
    "amplitude_damping_sin.json": ["amplitude-damping", "gamma=1+2*sin(t)"],
    "independent_dephasing.json": ["two-qubit-dephasing", "gamma1=1+0.5*sin(t)", "gamma2=exp(-t)"],
    "collective_dephasing.json": ["two-qubit-dephasing", "gamma1=1", "gamma2=1"],
    "double_dot_dark.json": ["double-dot", "phi=0.7", "kappa=exp(-t)", "kappa_tilde=0"],
    "double_dot_both.json": ["double-dot", "phi=0.7", "kappa=exp(-t)", "kappa_tilde=1+sin(t)"],
}


@pytest.mark.criterion_9
@pytest.mark.parametrize("fname", sorted(PRESET_COMMANDS))
def test_c9_preset_reproduces_golden_file(fname, tmp_path, capsys):
    out = tmp_path / fname
    code, doc, _ = _run(capsys, "preset", *PRESET_COMMANDS[fname], "--out", out)
    assert code == 0 and doc["schema_version"] == 1
    assert out.read_bytes() == (DATA / fname).read_bytes()


@pytest.mark.criterion_9
def test_c9_pipeline_reproduces_verdicts_bit_stably(tmp_path, capsys):
    outputs = []
    for _ in range(2):
        run = {}
        for fname, argv in PRESET_COMMANDS.items():
            _run(capsys, "preset", *argv, "--out", tmp_path / fname)
        run["c2"] = [_run(capsys, "check-commute", tmp_path / f) for f in
                     ("independent_dephasing.json", "double_dot_both.json", "double_dot_dark.json")]
        run["c5"] = [_run(capsys, "structure", tmp_path / f) for f in
                     ("collective_dephasing.json", "independent_dephasing.json",
                      "amplitude_damping_markov.json", "double_dot_dark.json")]
        run["c7"] = [_run(capsys, "attract", tmp_path / f) for f in
                     ("amplitude_damping_markov.json", "amplitude_damping_exp.json",
                      "amplitude_damping_sin.json")]
        run["sim"] = [_run(capsys, "simulate", tmp_path / "amplitude_damping_exp.json", "--t-max", 50,
                           "--steps", 500, "--method", "exact", "--out", tmp_path / "traj.csv")]
        run["csv"] = (tmp_path / "traj.csv").read_text()
        outputs.append(run)
    a, b = outputs
    assert [r[2] for r in a["c2"] + a["c5"] + a["c7"] + a["sim"]] == \
        [r[2] for r in b["c2"] + b["c5"] + b["c7"] + b["sim"]]
    assert a["csv"] == b["csv"]

    assert [r[0] for r in a["c2"]] == [0, 1, 0]
    assert [r[1]["commuting"] for r in a["c2"]] == [True, False, True]
    dims = [sorted(tuple(x) for x in r[1]["block_dims"]) for r in a["c5"]]
    assert dims == [[(1, 1), (1, 1), (2, 1)], [(1, 1)] * 4, [(1, 1)], [(2, 1)]]
    assert [r[1]["decaying_dim"] for r in a["c5"]] == [0, 0, 1, 2]
    assert [r[0] for r in a["c7"]] == [0, 1, 0]
    sim = a["sim"][0][1]
    assert abs(sim["final_manifold_distance"] - np.exp(-1)) <= 1e-4


@pytest.mark.criterion_9
def test_c9_exit_codes_and_schemas(tmp_path, capsys):
    f = DATA / "amplitude_damping_sin.json"
    for argv in (["check-commute", f], ["steady", f], ["structure", f], ["spectrum", f],
                 ["attract", f], ["simulate", f, "--steps", 100], ["project", f, "--state", "mixed"],
                 ["preset", "double-dot", "hamiltonian=on"]):
        code, doc, _ = _run(capsys, *argv)
        assert code == 0, argv
        assert doc["schema_version"] == 1 and doc["command"] == argv[0]
    assert _run(capsys, "steady", DATA / "double_dot_both.json")[0] == 2
    assert _run(capsys, "steady", tmp_path / "missing.json")[0] == 2
    assert _run(capsys, "preset", "no-such-preset")[0] == 2
    assert _run(capsys, "no-such-command")[0] == 2
    assert _run(capsys, "attract", DATA / "amplitude_damping_exp.json")[0] == 1
