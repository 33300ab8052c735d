"""Quasi-probability decompositions of inverse noise and of the initial state.

Each characterized gate ``R`` is corrected by ``N_inv = R_ideal R^-1``,
expanded over the experimental (noisy) Pauli operations ``B_j`` so that
``sum_j q_j B_j R = R_ideal``.  The ideal initial state is expanded over the
fiducial-prepared experimental states.  Costs multiply along a sequence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import pauli
from .pauli import FIDUCIALS, PAULI_GATES, product_label

MAX_CONDITION = 1e8
RECONSTRUCTION_TOL = 1e-9

_PAULI_NAME = dict(zip(PAULI_GATES, "IXYZ"))


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class QuasiDecomposition:
    """Real coefficients ``q`` over labelled basis elements.

    ``labels`` are the device operations realizing each basis element (gate
    labels for gate corrections, fiducial labels for the initial state).
    """

    coefficients: np.ndarray
    labels: tuple[str, ...]
    residual: float = 0.0

    def __post_init__(self):
        q = np.array(self.coefficients, dtype=float)
        if q.shape != (len(self.labels),):
            raise DecompositionError(f"{q.shape[0]} coefficients for {len(self.labels)} labels")
        q.setflags(write=False)
        object.__setattr__(self, "coefficients", q)

    @property
    def one_norm(self) -> float:
        return float(np.abs(self.coefficients).sum())

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.coefficients) / self.one_norm

    @property
    def signs(self) -> np.ndarray:
        return np.where(self.coefficients < 0, -1.0, 1.0)

    def as_dict(self) -> dict:
        return {
            "terms": [[pauli_name(lab), float(q)] for lab, q in zip(self.labels, self.coefficients)],
            "one_norm": self.one_norm,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class SequenceCost:
    total_C: float
    per_element: tuple[float, ...]


def pauli_name(label: str) -> str:
    """``"X+pi|I"`` -> ``"XI"``; labels that are not Pauli gates pass through."""
    parts = pauli.split_product(label)
    if all(p in _PAULI_NAME for p in parts):
        return "".join(_PAULI_NAME[p] for p in parts)
    return label


def inverse_noise(experimental: np.ndarray, ideal: np.ndarray, max_condition: float = MAX_CONDITION) -> np.ndarray:
    """``ideal @ experimental^-1``, the correction that follows the noisy gate."""
    experimental = np.asarray(experimental, dtype=float)
    cond = np.linalg.cond(experimental)
    if not np.isfinite(cond) or cond > max_condition:
        raise DecompositionError(f"experimental PTM is ill-conditioned (condition number {cond:.3g} > {max_condition:g})")
    # solve X @ experimental = ideal
    return np.linalg.solve(experimental.T, np.asarray(ideal, dtype=float).T).T


def _solve(target: np.ndarray, columns: np.ndarray, what: str, tol: float) -> tuple[np.ndarray, float]:
    q, *_ = np.linalg.lstsq(columns, target, rcond=None)
    residual = float(np.max(np.abs(columns @ q - target)))
    if residual > tol:
        raise DecompositionError(f"{what}: basis cannot reconstruct the target (max residual {residual:.3g} > {tol:g})")
    total = q.sum()
    if abs(total - 1.0) > tol:
        raise DecompositionError(f"{what}: coefficients sum to {total:.12g}; target is not trace preserving")
    return q, residual


def decompose_inverse(
    n_inv: np.ndarray,
    basis: Sequence[np.ndarray],
    labels: Sequence[str] | None = None,
    tol: float = RECONSTRUCTION_TOL,
) -> QuasiDecomposition:
    """Coefficients with ``sum_j q_j basis[j] == n_inv``."""
    basis = [np.asarray(b, dtype=float) for b in basis]
    labels = tuple(labels) if labels is not None else tuple(str(j) for j in range(len(basis)))
    columns = np.stack([b.ravel() for b in basis], axis=1)
    q, residual = _solve(np.asarray(n_inv, dtype=float).ravel(), columns, "inverse-noise decomposition", tol)
    return QuasiDecomposition(q, labels, residual)


def decompose_initial_state(
    ideal_state: np.ndarray,
    experimental_states: Sequence[np.ndarray],
    labels: Sequence[str] | None = None,
    tol: float = RECONSTRUCTION_TOL,
    max_condition: float = MAX_CONDITION,
) -> QuasiDecomposition:
    """Coefficients with ``sum_i q_i experimental_states[i] == ideal_state``."""
    columns = np.stack([np.asarray(s, dtype=float) for s in experimental_states], axis=1)
    if columns.shape[0] != columns.shape[1]:
        raise DecompositionError(f"need {columns.shape[0]} experimental states, got {columns.shape[1]}")
    cond = np.linalg.cond(columns)
    if not np.isfinite(cond) or cond > max_condition:
        raise DecompositionError(f"experimental states are linearly dependent (condition number {cond:.3g})")
    labels = tuple(labels) if labels is not None else tuple(str(j) for j in range(columns.shape[1]))
    q, residual = _solve(np.asarray(ideal_state, dtype=float), columns, "initial-state decomposition", tol)
    return QuasiDecomposition(q, labels, residual)


def sequence_cost(state_decomp: QuasiDecomposition, gate_decomps: Iterable[QuasiDecomposition]) -> SequenceCost:
    per = (state_decomp.one_norm,) + tuple(d.one_norm for d in gate_decomps)
    return SequenceCost(float(np.prod(per)), per)


# -- decompositions for a characterized gate set -------------------------------------


def compensation_labels(n: int) -> tuple[str, ...]:
    """Device gates realizing the n-qubit Pauli basis, in ``IXYZ`` order."""
    if n == 1:
        return PAULI_GATES
    return tuple(product_label(a, b) for a, b in itertools.product(PAULI_GATES, repeat=2))


def preparation_labels(n: int) -> tuple[str, ...]:
    if n == 1:
        return FIDUCIALS
    return tuple(product_label(a, b) for a, b in itertools.product(FIDUCIALS, repeat=2))


class Decompositions:
    """State and per-gate decompositions built from one characterized model.

    ``model`` is anything exposing ``n``, ``prep_state`` and ``ptm(label)``:
    a fitted :class:`~pecsim.model.GateSetModel` or, for oracle runs, the
    true :class:`~pecsim.device.DeviceSpec`.  Gate decompositions are
    computed on first use and cached.
    """

    def __init__(self, model, gates: Iterable[str] = ()):
        self.model = model
        self.n = model.n
        self.compensation = compensation_labels(self.n)
        self.preparation = preparation_labels(self.n)
        self._basis = [np.asarray(model.ptm(lab), dtype=float) for lab in self.compensation]
        states = [model.ptm(lab) @ model.prep_state for lab in self.preparation]
        self.state = decompose_initial_state(pauli.zero_state(self.n), states, self.preparation)
        self._gates: dict[str, QuasiDecomposition] = {}
        for g in gates:
            self[g]

    def __getitem__(self, label: str) -> QuasiDecomposition:
        if label not in self._gates:
            n_inv = inverse_noise(self.model.ptm(label), pauli.ideal_ptm(label))
            try:
                self._gates[label] = decompose_inverse(n_inv, self._basis, self.compensation)
            except DecompositionError as exc:
                raise DecompositionError(f"gate {label!r}: {exc}") from None
        return self._gates[label]

    def __contains__(self, label: str) -> bool:
        return label in self._gates

    @property
    def gates(self) -> Mapping[str, QuasiDecomposition]:
        return dict(self._gates)

    def cost(self, sequence: Sequence[str]) -> SequenceCost:
        return sequence_cost(self.state, [self[g] for g in sequence])

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "state": {"terms": [[lab, float(q)] for lab, q in zip(self.state.labels, self.state.coefficients)], "one_norm": self.state.one_norm},
            "gates": {g: d.as_dict() for g, d in sorted(self._gates.items())},
        }
