"""Characterized gate-set models (the experimenter's view of the device)."""

from __future__ import annotations

from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import pauli
from .device import outcome_effects


class GateSetModel:
    """PTMs plus SPAM for a characterized gate set.

    ``ptms`` maps full gate labels to PTMs.  For two qubits, product labels
    such as ``"X+pi|I"`` not present in ``ptms`` are built by tensoring the
    per-qubit PTMs in ``single_qubit``.  Measurement is the ideal
    computational-basis projector unless ``zero_effects`` is given.
    """

    readout_confusion = None

    def __init__(
        self,
        n: int,
        prep_state: np.ndarray,
        ptms: Mapping[str, np.ndarray] | None = None,
        single_qubit: Sequence[Mapping[str, np.ndarray]] | None = None,
        zero_effects: Sequence[np.ndarray] | None = None,
    ):
        self.n = n
        self.prep_state = np.asarray(prep_state, dtype=float)
        self._ptms = dict(ptms or {})
        self._single = [dict(s) for s in (single_qubit or [])]
        if zero_effects is None:
            zero_effects = [pauli.zero_projector(1)] * n
        self.zero_effects = tuple(np.asarray(e, dtype=float) for e in zero_effects)

    @cached_property
    def effects(self) -> np.ndarray:
        return outcome_effects(self.zero_effects)

    def ptm(self, label: str) -> np.ndarray:
        if label in self._ptms:
            return self._ptms[label]
        if self.n == 2 and self._single:
            parts = pauli.split_product(label)
            if len(parts) == 2:
                try:
                    out = np.kron(self._single[0][parts[0]], self._single[1][parts[1]])
                except KeyError:
                    pass
                else:
                    self._ptms[label] = out
                    return out
        raise KeyError(f"gate {label!r} is not characterized in this model")

    def with_ptm(self, label: str, ptm: np.ndarray) -> "GateSetModel":
        out = GateSetModel(self.n, self.prep_state, self._ptms, self._single, self.zero_effects)
        out._ptms[label] = np.asarray(ptm)
        return out

    def outcome_probabilities(self, gates: Sequence[str]) -> np.ndarray:
        vec = self.prep_state
        for g in gates:
            vec = self.ptm(g) @ vec
        return self.effects @ vec


def pauli_model(channels: Mapping[str, np.ndarray], prep_state: np.ndarray) -> GateSetModel:
    """Single-qubit model from Pauli rates per gate (ideal gate then channel)."""
    ptms = {g: pauli.channel_ptm(p) @ pauli.ideal_ptm(g) for g, p in channels.items()}
    return GateSetModel(1, prep_state, ptms)
