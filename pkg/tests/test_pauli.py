import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from pecsim import pauli

ALL_GATES = list(pauli.GATE_SET_1) + ["MS_YY", "MS_ZZ", "X+pi/2|Y-pi", "I|Z-pi", "Y+pi/2|X-pi/2"]


def simplex(n_rates):
    return st.lists(st.floats(0.0, 1.0), min_size=n_rates, max_size=n_rates).filter(lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


@pytest.mark.parametrize("label", ALL_GATES)
def test_ideal_ptm_matches_trace_definition(label):
    u = oracle.unitary(label)
    n = 1 if u.shape[0] == 2 else 2
    expected = oracle.ptm_of(lambda m: u @ m @ u.conj().T, n)
    np.testing.assert_allclose(pauli.ideal_ptm(label), expected, atol=1e-12)
    assert pauli.is_orthogonal(pauli.ideal_ptm(label))


def test_ms_zz_is_ms_yy_conjugated_by_x_half_rotations():
    pre = pauli.ideal_ptm("X+pi/2|X+pi/2")
    post = pauli.ideal_ptm("X-pi/2|X-pi/2")
    np.testing.assert_allclose(post @ pauli.ideal_ptm("MS_YY") @ pre, pauli.ideal_ptm("MS_ZZ"), atol=1e-12)


def test_rotation_sign_convention():
    # X+pi/2 takes |0> to -Y
    out = pauli.ideal_ptm("X+pi/2") @ pauli.zero_state(1)
    np.testing.assert_allclose(out, pauli.bloch_vector(0, -1, 0), atol=1e-15)


@pytest.mark.parametrize("n", [1, 2])
def test_commutation_signs_from_matrices(n):
    labs = oracle.labels(n)
    for j, a in enumerate(labs):
        for k, b in enumerate(labs):
            pa, pb = oracle.pauli(a), oracle.pauli(b)
            commute = np.allclose(pa @ pb, pb @ pa)
            assert pauli.commutation_signs(n)[j, k] == (1.0 if commute else -1.0)


@settings(max_examples=25, deadline=None)
@given(simplex(4))
def test_channel_ptm_matches_kraus_sum(rates):
    expected = oracle.ptm_of(lambda m: oracle.pauli_channel(m, rates), 1)
    np.testing.assert_allclose(pauli.channel_ptm(rates), expected, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(simplex(16))
def test_two_qubit_channel_ptm_matches_kraus_sum(rates):
    expected = oracle.ptm_of(lambda m: oracle.pauli_channel(m, rates), 2)
    np.testing.assert_allclose(pauli.channel_ptm(rates), expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(simplex(16))
def test_rates_diagonal_round_trip(rates):
    np.testing.assert_allclose(pauli.rates_from_diagonal(np.diag(pauli.channel_ptm(rates))), rates, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(simplex(4), simplex(4))
def test_pauli_channels_compose_to_pauli_channel(p, q):
    composed = pauli.channel_ptm(p) @ pauli.channel_ptm(q)
    assert np.allclose(composed, np.diag(np.diag(composed)), atol=1e-15)
    rates = pauli.rates_from_diagonal(np.diag(composed))
    assert rates.min() > -1e-14 and abs(rates.sum() - 1) < 1e-13


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_state_vector_invariants(x, y, z):
    norm = np.sqrt(x * x + y * y + z * z)
    if norm > 1:
        x, y, z = x / norm, y / norm, z / norm
    vec = pauli.bloch_vector(x, y, z)
    assert vec[0] == pytest.approx(1 / np.sqrt(2))
    assert np.linalg.norm(vec) <= 1 + 1e-12
    np.testing.assert_allclose(vec, pauli.density_to_vector(oracle.bloch_state(x, y, z)), atol=1e-14)


def test_two_qubit_zero_state_identity_entry():
    assert pauli.zero_state(2)[0] == pytest.approx(0.5)


def test_expectation_is_trace():
    rho = oracle.bloch_state(0.3, -0.2, 0.5)
    u = oracle.unitary("Y+pi/2")
    e = oracle.effect([1, 0, 0, 1])
    expected = np.trace(e @ u @ rho @ u.conj().T).real
    got = pauli.expectation(pauli.zero_projector(1), [pauli.ideal_ptm("Y+pi/2")], pauli.bloch_vector(0.3, -0.2, 0.5))
    assert got == pytest.approx(expected, abs=1e-14)


def test_pauli_observable_expectation():
    assert pauli.pauli_observable("Z") @ pauli.zero_state(1) == pytest.approx(1.0)
    assert pauli.pauli_observable("ZZ") @ pauli.zero_state(2) == pytest.approx(1.0)
    assert pauli.pauli_observable("ZI") @ (pauli.ideal_ptm("X+pi|I") @ pauli.zero_state(2)) == pytest.approx(-1.0)


def test_process_fidelity_of_pauli_channel_is_identity_rate():
    p = np.array([0.97, 0.01, 0.015, 0.005])
    assert pauli.process_fidelity(pauli.channel_ptm(p), np.eye(4)) == pytest.approx(0.97)
    assert pauli.average_gate_fidelity(pauli.channel_ptm(p), np.eye(4)) == pytest.approx((2 * 0.97 + 1) / 3)


def test_marginal_of_product_state():
    a, b = pauli.bloch_vector(0.1, 0.2, 0.9), pauli.bloch_vector(-0.3, 0.0, 0.8)
    np.testing.assert_allclose(pauli.marginal(np.kron(a, b), 0), a, atol=1e-15)
    np.testing.assert_allclose(pauli.marginal(np.kron(a, b), 1), b, atol=1e-15)


@pytest.mark.parametrize("bad", ["X+pi/4", "W", "I|I|I", ""])
def test_unknown_labels_rejected(bad):
    with pytest.raises(pauli.GateLabelError):
        pauli.ideal_ptm(bad)


def test_invalid_rates_rejected():
    with pytest.raises(ValueError):
        pauli.channel_ptm([0.9, 0.2, -0.1, 0.0])
    with pytest.raises(ValueError):
        pauli.channel_ptm([0.9, 0.05, 0.0, 0.0])
    with pytest.raises(ValueError):
        pauli.compose(np.eye(4), np.eye(16))


def test_compose_all_applies_in_time_order():
    seq = [pauli.ideal_ptm("X+pi/2"), pauli.ideal_ptm("Y+pi/2")]
    np.testing.assert_allclose(pauli.compose_all(seq), seq[1] @ seq[0])
