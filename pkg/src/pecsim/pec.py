"""Signed Monte-Carlo sampling of quasi-probability decompositions.

A mitigated circuit for target operations ``a_0 .. a_{T-1}`` prepares the
fiducial state ``F_i``, then applies each ``a_l`` followed by the
compensation gate ``B_{b_l}``, and measures ``Z`` (one qubit) or ``Z Z``
(two qubits).  Circuits are drawn with probability ``|q_0,i prod q_{a_l,b_l}| / C``
and their outcomes multiplied by the sign of that product and by ``C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import pauli
from .device import DeviceSpec, batch_outcomes
from .qpd import Decompositions

DEFAULT_SHOTS_PER_CIRCUIT = 100
MAX_ENUMERATION = 10**7


class SamplingError(ValueError):
    pass


def observable_signs(n: int) -> np.ndarray:
    """Eigenvalue of ``Z`` (n=1) or ``Z Z`` (n=2) for each outcome index."""
    if n == 1:
        return np.array([1.0, -1.0])
    return np.array([1.0, -1.0, -1.0, 1.0])


def corrected_expectation(probs: np.ndarray, confusion: np.ndarray | None) -> np.ndarray:
    """``<Z>``/``<ZZ>`` from outcome frequencies after undoing readout confusion."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    n = 1 if probs.shape[1] == 2 else 2
    if confusion is not None and not np.array_equal(confusion, np.eye(confusion.shape[0])):
        probs = np.linalg.solve(confusion, probs.T).T
    return probs @ observable_signs(n)


@dataclass(frozen=True)
class SampledCircuits:
    """A batch of sampled mitigated circuits for one target sequence.

    ``init`` holds fiducial indices ``i`` (N,), ``compensation`` the Pauli
    indices ``b`` (N, T) and ``sign`` the product of coefficient signs.
    """

    targets: tuple[str, ...]
    init: np.ndarray
    compensation: np.ndarray
    sign: np.ndarray
    total_C: float

    def __len__(self) -> int:
        return len(self.init)

    def gate_sequences(self, decomps: Decompositions) -> list[list[str]]:
        out = []
        for i, b in zip(self.init, self.compensation):
            gates = [decomps.preparation[i]]
            for a, bl in zip(self.targets, b):
                gates += [a, decomps.compensation[bl]]
            out.append(gates)
        return out


@dataclass(frozen=True)
class MitigatedEstimate:
    value: float
    std_error: float
    n_circuits: int
    shots_per_circuit: int
    total_C: float
    circuits: SampledCircuits | None = None
    zeros: np.ndarray | None = None


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF draw; the last bin absorbs rounding in cum[-1]
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, len(cum) - 1)


def sample_circuits(targets: Sequence[str], decomps: Decompositions, count: int, rng: np.random.Generator) -> SampledCircuits:
    """Draw ``count`` circuits from the product distribution ``|q| / C``."""
    targets = tuple(targets)
    state = decomps.state
    init = _draw(np.cumsum(state.probabilities), rng.random(count))
    sign = state.signs[init].copy()
    comp = np.empty((count, len(targets)), dtype=np.intp)
    u = rng.random((count, len(targets)))
    for col, a in enumerate(targets):
        d = decomps[a]
        comp[:, col] = _draw(np.cumsum(d.probabilities), u[:, col])
        sign *= d.signs[comp[:, col]]
    total_c = decomps.cost(targets).total_C
    return SampledCircuits(targets, init, comp, sign, total_c)


def sample_circuit(targets: Sequence[str], decomps: Decompositions, rng: np.random.Generator) -> SampledCircuits:
    return sample_circuits(targets, decomps, 1, rng)


def circuit_probabilities(device: DeviceSpec, circuits: SampledCircuits, decomps: Decompositions, t: float = 0.0) -> np.ndarray:
    """Exact outcome distributions (N, 2**n) of each sampled circuit on ``device``."""
    labels = list(decomps.preparation) + list(decomps.compensation)
    n_prep = len(decomps.preparation)
    offset = {}
    for a in circuits.targets:
        if a not in offset:
            offset[a] = len(labels)
            labels.append(a)
    n_rows = len(circuits)
    seqs = np.empty((n_rows, 1 + 2 * len(circuits.targets)), dtype=np.intp)
    seqs[:, 0] = circuits.init
    for col, a in enumerate(circuits.targets):
        seqs[:, 1 + 2 * col] = offset[a]
        seqs[:, 2 + 2 * col] = n_prep + circuits.compensation[:, col]
    return batch_outcomes(device, seqs, labels, t=t)


def _sample_counts(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    probs = np.clip(probs, 0.0, None)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return rng.multinomial(shots, probs)


def estimate_mitigated(
    device: DeviceSpec,
    targets: Sequence[str],
    decomps: Decompositions,
    n_circuits: int,
    shots: int = DEFAULT_SHOTS_PER_CIRCUIT,
    rng: np.random.Generator | None = None,
    keep_circuits: bool = False,
    t: float = 0.0,
) -> MitigatedEstimate:
    """Unbiased signed estimate of the ideal ``<Z>`` / ``<ZZ>`` of ``targets``.

    ``t`` is the run progress at which the device executes the circuits
    (only matters for drifting devices).
    """
    if n_circuits < 2:
        raise SamplingError("n_circuits must be at least 2 to estimate a variance")
    if shots < 1:
        raise SamplingError("shots must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(device.seed)
    circuits = sample_circuits(targets, decomps, n_circuits, rng)
    probs = circuit_probabilities(device, circuits, decomps, t)
    counts = _sample_counts(probs, shots, rng)
    z = corrected_expectation(counts / shots, device.readout_confusion)
    contrib = circuits.total_C * circuits.sign * z
    value = math.fsum(contrib) / n_circuits
    std_error = float(np.std(contrib, ddof=1) / np.sqrt(n_circuits))
    return MitigatedEstimate(
        value=value,
        std_error=std_error,
        n_circuits=n_circuits,
        shots_per_circuit=shots,
        total_C=circuits.total_C,
        circuits=circuits if keep_circuits else None,
        zeros=counts[:, 0] if keep_circuits else None,
    )


# -- exact evaluation -------------------------------------------------------------------


def _observable(device: DeviceSpec) -> np.ndarray:
    return observable_signs(device.n) @ device.effects


def exact_mitigated(device: DeviceSpec, targets: Sequence[str], decomps: Decompositions, max_terms: int = MAX_ENUMERATION) -> float:
    """Enumerate every weighted setting ``(i, b)`` and sum its exact expectation.

    Readout confusion is taken as perfectly corrected.  The number of
    settings is ``4**(n * (T + 1))`` for ``T`` targets and must not exceed
    ``max_terms``.
    """
    targets = tuple(targets)
    dim = 4**device.n
    n_terms = dim ** (len(targets) + 1)
    if n_terms > max_terms:
        raise SamplingError(f"{n_terms} settings exceed the enumeration bound {max_terms}")
    prep = [device.ptm(lab) @ device.prep_state for lab in decomps.preparation]
    vecs = np.array(prep)
    weights = decomps.state.coefficients.copy()
    basis = np.stack([device.ptm(lab) for lab in decomps.compensation])
    for a in targets:
        q = decomps[a].coefficients
        vecs = vecs @ device.ptm(a).T
        # every branch times every compensation choice
        vecs = np.einsum("bij,mj->mbi", basis, vecs).reshape(-1, dim)
        weights = (weights[:, None] * q[None, :]).ravel()
    values = vecs @ _observable(device)
    return math.fsum(weights * values)


def enumerate_mitigated(
    device: DeviceSpec,
    sequences: np.ndarray,
    labels: Sequence[str],
    decomps: Decompositions,
    chunk: int = 64,
) -> np.ndarray:
    """:func:`exact_mitigated` for many equal-length sequences at once.

    ``sequences`` indexes ``labels`` (N, T).  Every weighted setting is still
    evaluated on its own: the state after the first half of the circuit
    (one vector per choice of preparation and early compensations) is
    contracted with the measurement pulled back through the second half (one
    row per choice of late compensations), giving the full
    ``4**(n (T + 1))`` table of setting expectations before the weighted sum.
    """
    seqs = np.atleast_2d(np.asarray(sequences, dtype=np.intp))
    n_gates = seqs.shape[1]
    ptm = np.stack([device.ptm(lab) for lab in labels])
    q = np.stack([decomps[lab].coefficients for lab in labels])
    basis = np.stack([device.ptm(lab) for lab in decomps.compensation])
    prep = np.array([device.ptm(lab) @ device.prep_state for lab in decomps.preparation])
    # gates 1..split-1 go forward with the preparation, the rest backward
    split = (n_gates + 1) // 2
    out = np.empty(len(seqs))

    def apply(vecs: np.ndarray, labs: np.ndarray, mats: np.ndarray, side: str) -> np.ndarray:
        moved = np.empty_like(vecs)
        for u in np.unique(labs):
            rows = labs == u
            moved[rows] = vecs[rows] @ (mats[u].T if side == "forward" else mats[u])
        return moved

    for start in range(0, len(seqs), chunk):
        block = seqs[start : start + chunk]
        n_rows = len(block)
        fwd = np.broadcast_to(prep, (n_rows,) + prep.shape).copy()
        w_fwd = np.broadcast_to(decomps.state.coefficients, (n_rows, len(prep))).copy()
        for col in range(split - 1):
            labs = block[:, col]
            fwd = apply(fwd, labs, ptm, "forward")
            fwd = np.einsum("smj,bij->smbi", fwd, basis).reshape(n_rows, -1, fwd.shape[-1])
            w_fwd = (w_fwd[:, :, None] * q[labs][:, None, :]).reshape(n_rows, -1)
        bwd = np.broadcast_to(_observable(device), (n_rows, 1, basis.shape[1])).copy()
        w_bwd = np.ones((n_rows, 1))
        for col in range(n_gates - 1, split - 2, -1):
            labs = block[:, col]
            bwd = np.einsum("smi,bij->smbj", bwd, basis).reshape(n_rows, -1, bwd.shape[-1])
            bwd = apply(bwd, labs, ptm, "backward")
            w_bwd = (w_bwd[:, :, None] * q[labs][:, None, :]).reshape(n_rows, -1)
        # values[s, p, r]: expectation of the setting with forward choice p and backward choice r
        values = fwd @ bwd.transpose(0, 2, 1)
        out[start : start + n_rows] = np.einsum("sp,spr,sr->s", w_fwd, values, w_bwd)
    return out


def factored_mitigated(device: DeviceSpec, targets: Sequence[str], decomps: Decompositions) -> float:
    """The same weighted sum as :func:`exact_mitigated`, summed gate by gate."""
    vec = sum(q * (device.ptm(lab) @ device.prep_state) for q, lab in zip(decomps.state.coefficients, decomps.preparation))
    for a in targets:
        d = decomps[a]
        corr = sum(q * device.ptm(lab) for q, lab in zip(d.coefficients, d.labels))
        vec = corr @ device.ptm(a) @ vec
    return float(_observable(device) @ vec)


def ideal_expectation(targets: Sequence[str], n: int) -> float:
    vec = pauli.zero_state(n)
    for a in targets:
        vec = pauli.ideal_ptm(a) @ vec
    return float(pauli.pauli_observable("Z" * n) @ vec)
