import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from pecsim import pauli
from pecsim.config import load_preset
from pecsim.device import PauliChannel, make_device
from pecsim.qpd import (
    DecompositionError,
    Decompositions,
    QuasiDecomposition,
    decompose_initial_state,
    decompose_inverse,
    inverse_noise,
    pauli_name,
    sequence_cost,
)


def oracle_pauli_basis(n=1):
    return [oracle.ptm_of(lambda m, p=lab: oracle.pauli(p) @ m @ oracle.pauli(p), n) for lab in oracle.labels(n)]


def oracle_decomposition(rates):
    """Solve sum_j q_j P_j = N^-1 on the PTM diagonal: a 4x4 linear system."""
    noise = oracle.ptm_of(lambda m: oracle.pauli_channel(m, rates), 1)
    target = np.diag(np.linalg.inv(noise))
    basis = np.array([np.diag(b) for b in oracle_pauli_basis()]).T
    return np.linalg.solve(basis, target)


def test_depolarizing_example():
    rates = [0.97, 0.01, 0.01, 0.01]
    d = decompose_inverse(inverse_noise(pauli.channel_ptm(rates), np.eye(4)), oracle_pauli_basis())
    np.testing.assert_allclose(d.coefficients, oracle_decomposition(rates), atol=1e-12)
    np.testing.assert_allclose(d.coefficients, [1.03125, -1 / 96, -1 / 96, -1 / 96], atol=1e-12)
    assert d.one_norm == pytest.approx(1.0625, abs=1e-10)
    assert d.residual < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 0.05), min_size=3, max_size=3))
def test_pauli_inverse_matches_oracle_and_sums_to_one(errors):
    rates = np.r_[1 - sum(errors), errors]
    d = decompose_inverse(inverse_noise(pauli.channel_ptm(rates), np.eye(4)), oracle_pauli_basis())
    np.testing.assert_allclose(d.coefficients, oracle_decomposition(rates), atol=1e-10)
    assert d.coefficients.sum() == pytest.approx(1.0, abs=1e-12)
    assert d.residual < 1e-9
    assert d.one_norm >= 1.0 - 1e-12


@pytest.mark.parametrize("preset", ["single-qubit-paper", "two-qubit-paper"])
def test_device_decompositions_reconstruct_ideal_gates(preset):
    dev = load_preset(preset).replace(crosstalk_ratio=0.0)
    gates = ["X+pi/2", "Y-pi/2"] if dev.n == 1 else ["MS_YY", "MS_ZZ", "X+pi/2|Y+pi"]
    decomps = Decompositions(dev, gates)
    for g, d in decomps.gates.items():
        corrected = sum(q * dev.ptm(lab) for q, lab in zip(d.coefficients, d.labels)) @ dev.ptm(g)
        np.testing.assert_allclose(corrected, pauli.ideal_ptm(g), atol=1e-9)
        assert d.coefficients.sum() == pytest.approx(1.0, abs=1e-9)
    state = sum(q * dev.ptm(lab) @ dev.prep_state for q, lab in zip(decomps.state.coefficients, decomps.state.labels))
    np.testing.assert_allclose(state, pauli.zero_state(dev.n), atol=1e-12)
    assert decomps.state.coefficients.sum() == pytest.approx(1.0, abs=1e-12)


def test_noiseless_decomposition_is_trivial():
    decomps = Decompositions(make_device(1), ["X+pi/2"])
    np.testing.assert_allclose(decomps["X+pi/2"].coefficients, [1, 0, 0, 0], atol=1e-14)
    np.testing.assert_allclose(decomps.state.coefficients, [1, 0, 0, 0], atol=1e-14)
    assert decomps.cost(["X+pi/2"] * 5).total_C == pytest.approx(1.0)


def test_sequence_cost_is_product():
    a = QuasiDecomposition([1.1, -0.1], ("a", "b"))
    b = QuasiDecomposition([1.05, -0.05], ("a", "b"))
    cost = sequence_cost(a, [b, b])
    assert cost.total_C == pytest.approx(1.2 * 1.1 * 1.1)
    assert cost.per_element == pytest.approx((1.2, 1.1, 1.1))


def test_as_dict_names_paulis():
    decomps = Decompositions(make_device(2), ["MS_YY"])
    terms = decomps.as_dict()["gates"]["MS_YY"]["terms"]
    assert [t[0] for t in terms][:3] == ["II", "IX", "IY"]
    assert pauli_name("Y+pi") == "Y"
    assert pauli_name("X+pi/2") == "X+pi/2"


def test_singular_ptm_rejected():
    with pytest.raises(DecompositionError):
        inverse_noise(np.diag([1.0, 0.0, 0.5, 0.5]), np.eye(4))


def test_non_trace_preserving_target_rejected():
    with pytest.raises(DecompositionError):
        decompose_inverse(np.diag([1.1, 1, 1, 1]), oracle_pauli_basis())


def test_unreachable_target_rejected():
    # an off-diagonal target cannot be built from diagonal Pauli PTMs
    target = np.eye(4)
    target[1, 2] = 0.1
    with pytest.raises(DecompositionError):
        decompose_inverse(target, oracle_pauli_basis())


def test_dependent_states_rejected():
    z = pauli.zero_state(1)
    with pytest.raises(DecompositionError):
        decompose_initial_state(z, [z, z, pauli.bloch_vector(1, 0, 0), pauli.bloch_vector(0, 1, 0)])
    with pytest.raises(DecompositionError):
        decompose_initial_state(z, [z, z])


def test_coefficient_label_mismatch():
    with pytest.raises(DecompositionError):
        QuasiDecomposition([1.0], ("a", "b"))


def test_coefficients_are_read_only():
    d = QuasiDecomposition([1.0, 0.0], ("a", "b"))
    with pytest.raises(ValueError):
        d.coefficients[0] = 2.0


def test_heavier_noise_costs_more():
    light = Decompositions(make_device(1, {"X+pi/2": PauliChannel([0.99, 0.005, 0.0, 0.005])}), ["X+pi/2"])
    heavy = Decompositions(make_device(1, {"X+pi/2": PauliChannel([0.96, 0.02, 0.0, 0.02])}), ["X+pi/2"])
    assert heavy["X+pi/2"].one_norm > light["X+pi/2"].one_norm > 1.0


def test_crosstalk_device_has_no_exact_pauli_decomposition():
    with pytest.raises(DecompositionError, match="MS_YY"):
        Decompositions(load_preset("two-qubit-paper"), ["MS_YY"])
