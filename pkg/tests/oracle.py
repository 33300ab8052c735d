"""Independent density-matrix reference used by the tests.

Nothing here imports the package: gates come from matrix exponentials,
channels from Kraus sums, and PTMs from their trace definition.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm

SIGMA = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
ANGLES = {"pi": np.pi, "pi/2": np.pi / 2}


def pauli(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in label:
        out = np.kron(out, SIGMA[c])
    return out


def labels(n: int) -> list[str]:
    return ["".join(p) for p in itertools.product("IXYZ", repeat=n)]


def single_unitary(name: str) -> np.ndarray:
    if name == "I":
        return np.eye(2, dtype=complex)
    axis, sign, angle = name[0], name[1], name[2:]
    theta = ANGLES[angle] * (1 if sign == "+" else -1)
    return expm(-0.5j * theta * SIGMA[axis])


def unitary(name: str) -> np.ndarray:
    if name == "MS_YY":
        return expm(-0.25j * np.pi * pauli("YY"))
    if name == "MS_ZZ":
        return expm(-0.25j * np.pi * pauli("ZZ"))
    out = np.ones((1, 1), dtype=complex)
    for part in name.split("|"):
        out = np.kron(out, single_unitary(part))
    return out


def pauli_channel(rho: np.ndarray, rates) -> np.ndarray:
    n = int(round(np.log2(rho.shape[0])))
    return sum(p * pauli(lab) @ rho @ pauli(lab).conj().T for p, lab in zip(rates, labels(n)))


def ptm_of(channel, n: int) -> np.ndarray:
    """``R_ij = Tr(P_i channel(P_j)) / 2**n``."""
    labs = labels(n)
    out = np.empty((4**n, 4**n))
    for j, b in enumerate(labs):
        image = channel(pauli(b))
        for i, a in enumerate(labs):
            out[i, j] = np.trace(pauli(a) @ image).real / 2**n
    return out


def bloch_state(x: float, y: float, z: float) -> np.ndarray:
    return 0.5 * (SIGMA["I"] + x * SIGMA["X"] + y * SIGMA["Y"] + z * SIGMA["Z"])


def effect(e) -> np.ndarray:
    """``(eI I + eX X + eY Y + eZ Z) / 2`` from the 4-vector ``e``."""
    return 0.5 * sum(c * SIGMA[a] for c, a in zip(e, "IXYZ"))


class DensityDevice:
    """Reference simulator: ideal unitary then Pauli channel for every gate.

    ``noise`` maps gate keys (as in the package: ``label`` for one qubit,
    ``label@q`` and ``MS_YY`` for two) to rate vectors.  Single-qubit
    rotations on a two-qubit device rotate the neighbour by ``ratio`` times
    the angle about the same axis.
    """

    def __init__(self, n, noise, prep_bloch, effects, confusion=None, ratio=0.0):
        self.n = n
        self.noise = noise
        rho = np.ones((1, 1), dtype=complex)
        for b in prep_bloch:
            rho = np.kron(rho, bloch_state(*b))
        self.rho = rho
        self.effects = [effect(e) for e in effects]
        self.confusion = np.eye(2**n) if confusion is None else np.asarray(confusion)
        self.ratio = ratio

    def _rates(self, key):
        return self.noise.get(key, np.eye(4 ** (2 if key == "MS_YY" else 1))[0])

    def _single_on(self, rho, name, target):
        u_t = single_unitary(name)
        if name == "I":
            u_n = np.eye(2, dtype=complex)
        else:
            axis, sign, angle = name[0], name[1], name[2:]
            theta = ANGLES[angle] * (1 if sign == "+" else -1)
            u_n = expm(-0.5j * theta * self.ratio * SIGMA[axis])
        u = np.kron(u_t, u_n) if target == 0 else np.kron(u_n, u_t)
        rho = u @ rho @ u.conj().T
        rates = self._rates(f"{name}@{target}")
        lab = [("I" + p if target == 1 else p + "I") for p in "IXYZ"]
        return sum(p * pauli(l) @ rho @ pauli(l).conj().T for p, l in zip(rates, lab))

    def apply(self, rho, name):
        if self.n == 1:
            u = unitary(name)
            return pauli_channel(u @ rho @ u.conj().T, self._rates(name))
        if name == "MS_YY":
            u = unitary("MS_YY")
            return pauli_channel(u @ rho @ u.conj().T, self._rates("MS_YY"))
        if name == "MS_ZZ":
            rho = self.apply(rho, "X+pi/2|X+pi/2")
            rho = self.apply(rho, "MS_YY")
            return self.apply(rho, "X-pi/2|X-pi/2")
        a, b = name.split("|")
        rho = self._single_on(rho, a, 0)
        return self._single_on(rho, b, 1)

    def probabilities(self, gates) -> np.ndarray:
        rho = self.rho
        for g in gates:
            rho = self.apply(rho, g)
        ident = np.eye(2, dtype=complex)
        per_qubit = [(e, ident - e) for e in self.effects]
        probs = []
        for bits in itertools.product((0, 1), repeat=self.n):
            op = np.ones((1, 1), dtype=complex)
            for q, bit in enumerate(bits):
                op = np.kron(op, per_qubit[q][bit])
            probs.append(np.trace(op @ rho).real)
        return self.confusion @ np.array(probs)
