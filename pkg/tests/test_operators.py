import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tclsteady.operators import (OperatorSubspace, apply, basis_state, choi_matrix, devectorize,
                                 dual_map, hs_inner, is_cptp, is_density_operator, kron,
                                 null_space, partial_trace, random_density, require_density_operator,
                                 sandwich, support_projector, trace_distance, vectorize)


def _random_matrix(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def _kraus_superop(kraus):
    return sum(sandwich(k, k.conj().T) for k in kraus)


def test_vectorize_round_trip_and_column_stacking():
    x = np.arange(9).reshape(3, 3)
    v = vectorize(x)
    assert list(v[:3]) == [0, 3, 6]
    assert np.array_equal(devectorize(v), x)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_sandwich_identity(d, rng):
    a, b, x = (_random_matrix(rng, d) for _ in range(3))
    assert np.allclose(apply(sandwich(a, b), x), a @ x @ b)


def test_partial_trace_of_product(rng):
    a, b, c = random_density(2, rng), random_density(3, rng), random_density(2, rng)
    x = kron(a, b, c)
    assert np.allclose(partial_trace(x, [2, 3, 2], [1]), b)
    assert np.allclose(partial_trace(x, [2, 3, 2], [0, 2]), np.kron(a, c))
    assert np.allclose(partial_trace(x, [2, 3, 2], []), [[1.0]])


def test_partial_trace_bad_dims():
    with pytest.raises(ValueError):
        partial_trace(np.eye(4), [2, 3], [0])


def test_dual_map_is_hs_adjoint(rng):
    s = _random_matrix(rng, 9)
    x, y = _random_matrix(rng, 3), _random_matrix(rng, 3)
    assert hs_inner(apply(dual_map(s), x), y) == pytest.approx(hs_inner(x, apply(s, y)))


def test_choi_of_identity_is_unnormalized_bell_projector():
    choi = choi_matrix(np.eye(4))
    omega = np.zeros(4)
    omega[[0, 3]] = 1.0
    assert np.allclose(choi, np.outer(omega, omega))


def test_transpose_map_is_not_cp():
    d = 2
    transpose = np.zeros((4, 4))
    for i in range(d):
        for j in range(d):
            transpose[:, :] += np.outer(vectorize(np.outer(np.eye(d)[j], np.eye(d)[i])),
                                        vectorize(np.outer(np.eye(d)[i], np.eye(d)[j])))
    rep = is_cptp(transpose)
    assert not rep.is_cptp
    assert rep.min_choi_eigenvalue == pytest.approx(-1.0)
    assert rep.trace_preservation_error < 1e-12


def test_amplitude_damping_channel_is_cptp():
    p = 0.3
    k0 = np.array([[1, 0], [0, np.sqrt(1 - p)]])
    k1 = np.array([[0, np.sqrt(p)], [0, 0]])
    rep = is_cptp(_kraus_superop([k0, k1]))
    assert rep and rep.min_choi_eigenvalue >= -1e-12


def test_non_trace_preserving_detected():
    rep = is_cptp(0.5 * np.eye(4))
    assert not rep.is_cptp and rep.trace_preservation_error > 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_random_kraus_channels_are_cptp(d, n_kraus, seed):
    rng = np.random.default_rng(seed)
    g = np.concatenate([_random_matrix(rng, d) for _ in range(n_kraus)])
    q, _ = np.linalg.qr(g)  # isometry d -> n_kraus * d
    kraus = [q[k * d:(k + 1) * d] for k in range(n_kraus)]
    assert is_cptp(_kraus_superop(kraus))


def test_density_checks(rng):
    rho = random_density(3, rng)
    assert is_density_operator(rho)
    assert not is_density_operator(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError, match="trace"):
        require_density_operator(np.eye(2))
    assert np.allclose(support_projector(basis_state(3, 1)), basis_state(3, 1))


def test_trace_distance_values():
    assert trace_distance(basis_state(2, 0), basis_state(2, 1)) == pytest.approx(1.0)
    assert trace_distance(np.eye(2) / 2, basis_state(2, 0)) == pytest.approx(0.5)


def test_null_space_and_subspace():
    m = np.diag([1.0, 0.0, 2.0, 0.0])
    k = null_space(m)
    assert k.shape == (4, 2)
    assert np.allclose(m @ k, 0)
    sub = OperatorSubspace(np.array([np.eye(2) / np.sqrt(2)]))
    assert sub.contains(np.eye(2))
    assert not sub.contains(np.diag([1.0, -1.0]))
