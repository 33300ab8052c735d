"""Pauli-transfer-matrix algebra for one and two qubits.

Everything is expressed in the normalized Pauli basis ``P_j / sqrt(2**n)``,
labels ordered lexicographically over ``IXYZ`` with the leftmost qubit most
significant.  In this basis PTMs of unitaries are orthogonal and
``observable @ state == Tr(E rho)``.

PTMs, state vectors and observable vectors are plain ``numpy`` arrays; the
dimension carries the qubit count.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

AXES = "IXYZ"

_SIGMA = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# name -> (axis, angle); rotation convention exp(-i * angle * axis / 2)
SINGLE_QUBIT_GATES: dict[str, tuple[str, float]] = {
    "I": ("I", 0.0),
    "X+pi": ("X", np.pi),
    "X-pi": ("X", -np.pi),
    "Y+pi": ("Y", np.pi),
    "Y-pi": ("Y", -np.pi),
    "Z+pi": ("Z", np.pi),
    "Z-pi": ("Z", -np.pi),
    "X+pi/2": ("X", np.pi / 2),
    "X-pi/2": ("X", -np.pi / 2),
    "Y+pi/2": ("Y", np.pi / 2),
    "Y-pi/2": ("Y", -np.pi / 2),
}
GATE_SET_1 = tuple(SINGLE_QUBIT_GATES)
TWO_QUBIT_GATES = ("MS_YY", "MS_ZZ")

# prepare |0>, |1>, |1>_X, |1>_Y from |0>
FIDUCIALS = ("I", "X+pi", "Y-pi/2", "X+pi/2")
# physical gates implementing I, X, Y, Z
PAULI_GATES = ("I", "X+pi", "Y+pi", "Z+pi")

PRODUCT_SEP = "|"


class GateLabelError(ValueError):
    """Unknown or malformed gate label."""


def n_qubits(array: np.ndarray) -> int:
    """Qubit count of a PTM or Pauli vector from its leading dimension."""
    dim = array.shape[0]
    n = {4: 1, 16: 2}.get(dim)
    if n is None:
        raise ValueError(f"dimension {dim} is not 4**n for n in (1, 2)")
    return n


def pauli_labels(n: int) -> list[str]:
    return ["".join(p) for p in itertools.product(AXES, repeat=n)]


def label_index(label: str) -> int:
    idx = 0
    for ch in label:
        if ch not in AXES:
            raise ValueError(f"invalid Pauli label {label!r}")
        idx = 4 * idx + AXES.index(ch)
    return idx


def pauli_matrix(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, _SIGMA[ch])
    return out


@lru_cache(maxsize=None)
def _normalized_basis(n: int) -> np.ndarray:
    basis = np.array([pauli_matrix(lab) for lab in pauli_labels(n)])
    return basis / np.sqrt(2**n)


@lru_cache(maxsize=None)
def commutation_signs(n: int) -> np.ndarray:
    """``S[j, k] = +1`` if ``P_j`` and ``P_k`` commute, else ``-1``."""
    labels = pauli_labels(n)
    signs = np.empty((4**n, 4**n))
    for j, a in enumerate(labels):
        for k, b in enumerate(labels):
            anti = sum(x != "I" and y != "I" and x != y for x, y in zip(a, b))
            signs[j, k] = -1.0 if anti % 2 else 1.0
    signs.setflags(write=False)
    return signs


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def unitary_to_ptm(unitary: np.ndarray) -> np.ndarray:
    dim = unitary.shape[0]
    n = int(round(np.log2(dim)))
    basis = _normalized_basis(n)
    # R_ij = Tr(B_i U B_j U^dag)
    conj = np.einsum("ab,jbc,dc->jad", unitary, basis, unitary.conj())
    ptm = np.einsum("iba,jab->ij", basis, conj)
    return np.real_if_close(ptm, tol=1e6).real.copy()


def density_to_vector(rho: np.ndarray) -> np.ndarray:
    n = int(round(np.log2(rho.shape[0])))
    return np.einsum("jab,ba->j", _normalized_basis(n), rho).real.copy()


def operator_to_vector(op: np.ndarray) -> np.ndarray:
    """Row vector ``Tr(P_j E) / sqrt(2**n)`` of a Hermitian operator."""
    return density_to_vector(op)


def bloch_vector(x: float, y: float, z: float) -> np.ndarray:
    """Single-qubit Pauli vector of the state with Bloch vector (x, y, z)."""
    return np.array([1.0, x, y, z]) / np.sqrt(2)


def zero_state(n: int) -> np.ndarray:
    vec = bloch_vector(0, 0, 1)
    return vec if n == 1 else np.kron(vec, vec)


def zero_projector(n: int) -> np.ndarray:
    """Observable vector of ``|0...0><0...0|``."""
    return zero_state(n)


def identity_observable(n: int) -> np.ndarray:
    out = np.zeros(4**n)
    out[0] = np.sqrt(2**n)
    return out


def pauli_observable(label: str) -> np.ndarray:
    """Observable vector of the (unnormalized) Pauli operator ``label``."""
    out = np.zeros(4 ** len(label))
    out[label_index(label)] = np.sqrt(2 ** len(label))
    return out


def rotation_unitary(axis: str, angle: float) -> np.ndarray:
    return np.cos(angle / 2) * _SIGMA["I"] - 1j * np.sin(angle / 2) * _SIGMA[axis]


def rotation_ptm(axis: str, angle: float) -> np.ndarray:
    return unitary_to_ptm(rotation_unitary(axis, angle))


def product_label(*labels: str) -> str:
    return PRODUCT_SEP.join(labels)


def split_product(label: str) -> list[str]:
    return label.split(PRODUCT_SEP)


def gate_qubits(label: str) -> int:
    """Number of qubits a gate label acts on; raises on unknown labels."""
    if label in TWO_QUBIT_GATES:
        return 2
    parts = split_product(label)
    for part in parts:
        if part not in SINGLE_QUBIT_GATES:
            raise GateLabelError(f"unknown gate label {label!r}")
    if len(parts) > 2:
        raise GateLabelError(f"gate {label!r} acts on more than two qubits")
    return len(parts)


def gate_unitary(label: str) -> np.ndarray:
    gate_qubits(label)
    if label == "MS_YY":
        return _ms_unitary("YY")
    if label == "MS_ZZ":
        return _ms_unitary("ZZ")
    out = np.ones((1, 1), dtype=complex)
    for part in split_product(label):
        out = np.kron(out, rotation_unitary(*SINGLE_QUBIT_GATES[part]))
    return out


def _ms_unitary(axes: str) -> np.ndarray:
    # exp(-i pi/4 P) with P^2 = I
    p = pauli_matrix(axes)
    return (np.eye(4) - 1j * p) / np.sqrt(2)


@lru_cache(maxsize=None)
def ideal_ptm(label: str) -> np.ndarray:
    """Exact PTM of the noiseless gate ``label`` (read-only array).

    Single-qubit names are ``I``, ``X+pi``, ``Y-pi/2`` and so on; two-qubit
    products of them are written ``"X+pi/2|I"``; the entangling gates are
    ``MS_YY`` and ``MS_ZZ``.
    """
    ptm = unitary_to_ptm(gate_unitary(label))
    # entries of Clifford PTMs are exactly 0 or +-1
    ptm = np.where(np.abs(ptm) < 1e-14, 0.0, ptm)
    return _frozen(ptm)


def channel_ptm(rates, tol: float = 1e-12) -> np.ndarray:
    """Diagonal PTM of the Pauli channel ``rho -> sum_j p_j P_j rho P_j``."""
    p = np.asarray(getattr(rates, "rates", rates), dtype=float)
    check_simplex(p, tol)
    n = n_qubits(p)
    return np.diag(commutation_signs(n).T @ p)


def check_simplex(p: np.ndarray, tol: float = 1e-12) -> None:
    if p.ndim != 1 or p.shape[0] not in (4, 16):
        raise ValueError(f"expected 4 or 16 Pauli rates, got shape {p.shape}")
    if np.any(p < -tol):
        raise ValueError(f"negative Pauli rate {p.min():.3g}")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"Pauli rates sum to {p.sum():.15g}, not 1")


def rates_from_diagonal(diag: np.ndarray) -> np.ndarray:
    """Invert ``channel_ptm``: Pauli rates from the PTM diagonal."""
    n = n_qubits(diag)
    return commutation_signs(n) @ np.asarray(diag) / 4**n


def compose(second: np.ndarray, first: np.ndarray) -> np.ndarray:
    """PTM of applying ``first`` and then ``second``."""
    if second.shape != first.shape:
        raise ValueError(f"cannot compose shapes {second.shape} and {first.shape}")
    return second @ first


def compose_all(ops: Iterable[np.ndarray]) -> np.ndarray:
    """PTM of the sequence ``ops`` applied left to right in time."""
    ops = list(ops)
    if not ops:
        raise ValueError("empty operation sequence")
    out = ops[0]
    for op in ops[1:]:
        out = compose(op, out)
    return out


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != (4, 4) or b.shape != (4, 4):
        raise ValueError("tensor expects two single-qubit PTMs")
    return np.kron(a, b)


def expectation(E: np.ndarray, ops: Sequence[np.ndarray], rho: np.ndarray) -> float:
    """``E . R_last ... R_first . rho`` for the operations applied in order."""
    dim = rho.shape[0]
    if E.shape != (dim,):
        raise ValueError(f"observable of shape {E.shape} does not match state {rho.shape}")
    vec = rho
    for op in ops:
        if op.shape != (dim, dim):
            raise ValueError(f"operation of shape {op.shape} does not match state {rho.shape}")
        vec = op @ vec
    return float(E @ vec)


def marginal(vector: np.ndarray, qubit: int) -> np.ndarray:
    """Reduced single-qubit Pauli vector of a two-qubit state."""
    mat = np.asarray(vector).reshape(4, 4)
    # Tr_other picks the identity component of the traced qubit (factor sqrt 2)
    return np.sqrt(2) * (mat[:, 0] if qubit == 0 else mat[0, :])


def is_orthogonal(ptm: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(ptm.T @ ptm - np.eye(ptm.shape[0]))) < tol)


def process_fidelity(ptm: np.ndarray, ideal: np.ndarray) -> float:
    d2 = ptm.shape[0]
    return float(np.trace(ideal.T @ ptm) / d2)


def average_gate_fidelity(ptm: np.ndarray, ideal: np.ndarray) -> float:
    d = int(round(np.sqrt(ptm.shape[0])))
    return (d * process_fidelity(ptm, ideal) + 1) / (d + 1)
