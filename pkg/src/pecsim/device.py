"""The simulated noisy device: true noise, SPAM, crosstalk and shot sampling.

A :class:`DeviceSpec` is the ground truth the rest of the package tries to
characterize and mitigate.  Gates are an ideal unitary followed by a Pauli
channel; two-qubit devices additionally leak every single-qubit rotation onto
the neighbouring qubit with a fixed ratio (a coherent error, deliberately
outside the Pauli model).
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import pauli
from .pauli import (
    FIDUCIALS,
    GATE_SET_1,
    SINGLE_QUBIT_GATES,
    channel_ptm,
    ideal_ptm,
    split_product,
)


class DeviceError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """An exact probability fell outside [0, 1] beyond round-off."""


@dataclass(frozen=True, eq=False)
class PauliChannel:
    """Pauli error rates ``p_j`` over the ``4**n`` Pauli labels."""

    rates: np.ndarray

    def __post_init__(self):
        p = np.array(self.rates, dtype=float)
        pauli.check_simplex(p)
        p.setflags(write=False)
        object.__setattr__(self, "rates", p)

    @classmethod
    def identity(cls, n: int = 1) -> "PauliChannel":
        p = np.zeros(4**n)
        p[0] = 1.0
        return cls(p)

    @classmethod
    def from_errors(cls, errors: Mapping[str, float], n: int = 1) -> "PauliChannel":
        """Channel from non-identity rates keyed by Pauli label."""
        p = np.zeros(4**n)
        for label, value in errors.items():
            if len(label) != n:
                raise ValueError(f"Pauli label {label!r} has wrong length for n={n}")
            p[pauli.label_index(label)] += value
        p[0] = 1.0 - p[1:].sum()
        return cls(p)

    @property
    def n(self) -> int:
        return pauli.n_qubits(self.rates)

    @property
    def error(self) -> float:
        return float(1.0 - self.rates[0])

    def ptm(self) -> np.ndarray:
        return channel_ptm(self.rates)

    def as_dict(self) -> dict[str, float]:
        return {lab: float(v) for lab, v in zip(pauli.pauli_labels(self.n), self.rates)}


@dataclass(frozen=True)
class Drift:
    """Linear ramp of one Pauli rate on every gate across a run.

    At run progress ``t`` in [0, 1] the rate of ``pauli`` grows by
    ``amount * t`` (taken from the identity component).
    """

    pauli: str = "Z"
    amount: float = 0.0

    def apply(self, channel: PauliChannel, t: float) -> PauliChannel:
        if self.amount == 0.0 or t == 0.0:
            return channel
        n = channel.n
        label = self.pauli * n if len(self.pauli) == 1 else self.pauli
        p = channel.rates.copy()
        shift = self.amount * t
        p[pauli.label_index(label)] += shift
        p[0] -= shift
        return PauliChannel(p)


@dataclass(frozen=True, eq=False)
class DeviceSpec:
    """Ground-truth configuration of an ``n``-qubit device (n = 1 or 2).

    ``gate_noise`` holds the true channel of every native gate: for n = 1
    keys are single-qubit labels; for n = 2 keys are ``"<label>@<qubit>"``
    for single-qubit gates and ``"MS_YY"``.  ``MS_ZZ`` is always realized as
    ``MS_YY`` sandwiched by ``X-+pi/2`` pulses on both qubits.

    ``prep_state`` is the true prepared Pauli vector, ``zero_effects`` the
    per-qubit observable vectors of the "0" outcome, and
    ``readout_confusion[observed, true]`` is column stochastic.
    """

    n: int
    gate_noise: Mapping[str, PauliChannel]
    prep_state: np.ndarray
    zero_effects: tuple[np.ndarray, ...]
    readout_confusion: np.ndarray
    crosstalk_ratio: float = 0.0
    seed: int = 0
    drift: Drift | None = None
    name: str = ""

    def __post_init__(self):
        if self.n not in (1, 2):
            raise DeviceError(f"n must be 1 or 2, got {self.n}")
        if self.prep_state.shape != (4**self.n,):
            raise DeviceError("prep_state has the wrong dimension")
        if len(self.zero_effects) != self.n:
            raise DeviceError("need one zero-outcome effect per qubit")
        conf = np.asarray(self.readout_confusion, dtype=float)
        if conf.shape != (2**self.n, 2**self.n):
            raise DeviceError(f"readout_confusion must be {2**self.n}x{2**self.n}")
        if np.any(conf < 0) or np.max(np.abs(conf.sum(axis=0) - 1)) > 1e-12:
            raise DeviceError("readout_confusion columns must be probability vectors")
        if self.crosstalk_ratio < 0:
            raise DeviceError("crosstalk_ratio must be >= 0")
        for key in self._native_keys():
            if key not in self.gate_noise:
                raise DeviceError(f"no noise configured for native gate {key!r}")
        for arr in (self.prep_state, conf, *self.zero_effects):
            arr.setflags(write=False)
        object.__setattr__(self, "readout_confusion", conf)

    def _native_keys(self) -> list[str]:
        if self.n == 1:
            return list(GATE_SET_1)
        keys = [f"{g}@{q}" for q in range(2) for g in GATE_SET_1]
        return keys + ["MS_YY"]

    def replace(self, **changes) -> "DeviceSpec":
        return dataclasses.replace(self, **changes)

    # -- gate PTMs ---------------------------------------------------------

    def channel(self, key: str, t: float = 0.0) -> PauliChannel:
        try:
            ch = self.gate_noise[key]
        except KeyError:
            raise DeviceError(f"gate {key!r} is not configured on this device") from None
        if self.drift is not None:
            ch = self.drift.apply(ch, t)
        return ch

    def ptm(self, label: str, t: float = 0.0) -> np.ndarray:
        """True (noisy) PTM of ``label`` at run progress ``t``."""
        if t == 0.0:
            return self._ptm_cached(label)
        return self._build_ptm(label, t)

    @cached_property
    def _cache(self) -> dict:
        return {}

    def _ptm_cached(self, label: str) -> np.ndarray:
        cache = self._cache
        if label not in cache:
            ptm = self._build_ptm(label, 0.0)
            ptm.setflags(write=False)
            cache[label] = ptm
        return cache[label]

    def _build_ptm(self, label: str, t: float) -> np.ndarray:
        nq = gate_arity(label)
        if nq != self.n:
            raise DeviceError(f"gate {label!r} does not act on {self.n} qubit(s)")
        if self.n == 1:
            return self.channel(label, t).ptm() @ ideal_ptm(label)
        if label == "MS_YY":
            return self.channel("MS_YY", t).ptm() @ ideal_ptm("MS_YY")
        if label == "MS_ZZ":
            pre = self._build_ptm("X+pi/2|X+pi/2", t)
            post = self._build_ptm("X-pi/2|X-pi/2", t)
            return post @ self._build_ptm("MS_YY", t) @ pre
        g0, g1 = split_product(label)
        # pulses on qubit 0 then qubit 1, each leaking onto the neighbour
        return crosstalk_gate_ptm(self, g1, 1, t) @ crosstalk_gate_ptm(self, g0, 0, t)

    # -- measurement ------------------------------------------------------

    @cached_property
    def effects(self) -> np.ndarray:
        """Observable vectors of the ``2**n`` computational outcomes."""
        return outcome_effects(self.zero_effects)

    def outcome_probabilities(self, gates: Sequence[str], t: float = 0.0) -> np.ndarray:
        vec = self.prep_state
        for g in gates:
            vec = self.ptm(g, t) @ vec
        probs = self.readout_confusion @ (self.effects @ vec)
        return _checked(probs)

    def marginal_device(self, qubit: int) -> "DeviceSpec":
        """The single-qubit device seen by ``qubit`` when its neighbour idles."""
        if self.n != 2:
            raise DeviceError("marginal_device needs a two-qubit device")
        # exact when the 4x4 confusion is a product of per-qubit matrices
        conf1 = _marginal_confusion(self.readout_confusion, qubit)
        noise = {g: self.gate_noise[f"{g}@{qubit}"] for g in GATE_SET_1}
        return DeviceSpec(
            n=1,
            gate_noise=noise,
            prep_state=pauli.marginal(self.prep_state, qubit),
            zero_effects=(self.zero_effects[qubit],),
            readout_confusion=conf1,
            crosstalk_ratio=0.0,
            seed=self.seed,
            drift=self.drift,
            name=f"{self.name}[q{qubit}]",
        )


def _marginal_confusion(conf: np.ndarray, qubit: int) -> np.ndarray:
    c = conf.reshape(2, 2, 2, 2)  # (obs0, obs1, true0, true1)
    if qubit == 0:
        out = c.sum(axis=1)[:, :, 0]
    else:
        out = c.sum(axis=0)[:, 0, :]
    return np.ascontiguousarray(out)


def gate_arity(label: str) -> int:
    try:
        return pauli.gate_qubits(label)
    except pauli.GateLabelError as exc:
        raise DeviceError(str(exc)) from None


def outcome_effects(zero_effects: Sequence[np.ndarray]) -> np.ndarray:
    n = len(zero_effects)
    ident = pauli.identity_observable(1)
    per_qubit = [(e, ident - e) for e in zero_effects]
    rows = []
    for bits in np.ndindex(*(2,) * n):
        row = np.ones(1)
        for q, b in enumerate(bits):
            row = np.kron(row, per_qubit[q][b])
        rows.append(row)
    return np.array(rows)


def _checked(probs: np.ndarray) -> np.ndarray:
    if np.any(probs < -1e-9) or np.any(probs > 1 + 1e-9):
        raise ConsistencyError(f"outcome probabilities {probs} outside [0, 1]")
    return np.clip(probs, 0.0, 1.0)


def crosstalk_gate_ptm(device: DeviceSpec, gate: str, target: int, t: float = 0.0) -> np.ndarray:
    """PTM of single-qubit ``gate`` on ``target`` of a two-qubit device.

    The target rotates by ``theta`` about the gate axis while the neighbour
    rotates by ``theta * crosstalk_ratio`` about the same axis; the gate's
    Pauli channel then acts on the target.
    """
    if device.n != 2:
        raise DeviceError("crosstalk needs a two-qubit device")
    if gate not in SINGLE_QUBIT_GATES:
        raise DeviceError(f"crosstalk applies to single-qubit rotations, not {gate!r}")
    axis, theta = SINGLE_QUBIT_GATES[gate]
    if axis == "I":
        target_rot = neighbour_rot = np.eye(4)
    else:
        target_rot = ideal_ptm(gate)
        neighbour_rot = pauli.rotation_ptm(axis, theta * device.crosstalk_ratio)
    noise = device.channel(f"{gate}@{target}", t).ptm()
    if target == 0:
        return np.kron(noise @ target_rot, neighbour_rot)
    return np.kron(neighbour_rot, noise @ target_rot)


# -- experiments ------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentalSetting:
    """One circuit: prepare, run ``gate_sequence`` in order, measure.

    ``gate_sequence`` is the full executed sequence, fiducials included;
    ``init_index``/``gate_index``/``meas_fiducial`` record which design
    slot the setting fills (-1 when not applicable).
    """

    gate_sequence: tuple[str, ...]
    shots: int = 10000
    init_index: int = -1
    gate_index: int = -1
    meas_fiducial: int = -1

    def __post_init__(self):
        if int(self.shots) < 1:
            raise ValueError("shots must be >= 1")
        object.__setattr__(self, "gate_sequence", tuple(self.gate_sequence))

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.init_index, self.gate_index, self.meas_fiducial)


@dataclass(frozen=True)
class ShotRecord:
    setting: ExperimentalSetting
    counts: tuple[int, ...]

    @property
    def shots(self) -> int:
        return int(sum(self.counts))

    @property
    def zeros_count(self) -> int:
        return int(self.counts[0])


def stream_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the named sub-stream ``keys`` of ``seed``."""
    spawn = tuple(_key_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed) % 2**64, spawn_key=spawn))


def _key_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    return int(key)


def _as_rng(device: DeviceSpec, stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if not isinstance(stream, tuple):
        stream = (stream,)
    return stream_rng(device.seed, *stream)


def exact_setting_probability(device: DeviceSpec, setting: ExperimentalSetting, t: float = 0.0) -> float:
    """Shot-free probability of the all-zeros outcome."""
    return float(device.outcome_probabilities(setting.gate_sequence, t)[0])


def run_setting(device: DeviceSpec, setting: ExperimentalSetting, stream=0, t: float = 0.0) -> ShotRecord:
    """Sample ``setting.shots`` outcomes; reproducible for a given stream."""
    probs = device.outcome_probabilities(setting.gate_sequence, t)
    rng = _as_rng(device, stream)
    counts = rng.multinomial(setting.shots, probs / probs.sum())
    return ShotRecord(setting, tuple(int(c) for c in counts))


def run_settings(device: DeviceSpec, settings: Sequence[ExperimentalSetting], stream=0, t: float = 0.0) -> list[ShotRecord]:
    rng = _as_rng(device, stream)
    return [run_setting(device, s, rng, t) for s in settings]


# -- batched exact simulation ------------------------------------------------


def batch_outcomes(model, sequences: np.ndarray, labels: Sequence[str], prep: np.ndarray | None = None, t: float = 0.0) -> np.ndarray:
    """Outcome distributions for many equal-length gate sequences at once.

    ``sequences`` is an integer array (N, T) indexing ``labels``; ``model``
    is anything with ``ptm(label)``, ``prep_state`` and ``effects`` (a
    :class:`DeviceSpec` or a characterized gate-set model).  ``prep`` may
    give per-row initial vectors (N, d).  Readout confusion is applied when
    the model has one.
    """
    table = np.stack([_ptm_at(model, lab, t) for lab in labels])
    seqs = np.asarray(sequences, dtype=np.intp)
    if seqs.ndim == 1:
        seqs = seqs[None, :]
    n_rows = seqs.shape[0]
    if prep is None:
        vec = np.broadcast_to(model.prep_state, (n_rows, model.prep_state.shape[0])).copy()
    else:
        vec = np.array(prep, dtype=float)
    for col in range(seqs.shape[1]):
        labs = seqs[:, col]
        uniq = np.unique(labs)
        if len(uniq) == 1:
            vec = vec @ table[uniq[0]].T
        elif len(uniq) * 8 < n_rows:
            # few distinct gates in this column: one matrix product per gate
            out = np.empty_like(vec)
            for u in uniq:
                rows = labs == u
                out[rows] = vec[rows] @ table[u].T
            vec = out
        else:
            vec = np.einsum("nij,nj->ni", table[labs], vec)
    probs = vec @ model.effects.T
    conf = getattr(model, "readout_confusion", None)
    if conf is not None:
        probs = probs @ conf.T
    return probs


def _ptm_at(model, label: str, t: float) -> np.ndarray:
    if t and isinstance(model, DeviceSpec):
        return model.ptm(label, t)
    return model.ptm(label)


def ideal_device(n: int = 1, seed: int = 0) -> DeviceSpec:
    """Noiseless device with perfect SPAM."""
    return make_device(n, single_qubit_noise={}, seed=seed, name="noiseless")


def make_device(
    n: int,
    single_qubit_noise: Mapping[str, PauliChannel] | Sequence[Mapping[str, PauliChannel]] = (),
    ms_noise: PauliChannel | None = None,
    prep_bloch: Sequence[Sequence[float]] | None = None,
    measure_zero: Sequence[Sequence[float]] | None = None,
    readout_confusion: np.ndarray | None = None,
    crosstalk_ratio: float = 0.0,
    seed: int = 0,
    drift: Drift | None = None,
    default_noise: PauliChannel | None = None,
    name: str = "",
) -> DeviceSpec:
    """Convenience constructor filling unspecified gates with ``default_noise``.

    ``single_qubit_noise`` is one mapping (shared by all qubits) or one per
    qubit.  SPAM is given per qubit as Bloch vectors of the prepared state and
    ``[eI, eX, eY, eZ]`` of the zero-outcome effect ``(eI + e.sigma)/2``.
    """
    default = default_noise or PauliChannel.identity(1)
    if isinstance(single_qubit_noise, Mapping):
        per_qubit = [single_qubit_noise] * n
    else:
        per_qubit = list(single_qubit_noise) or [{}] * n
    noise: dict[str, PauliChannel] = {}
    for q in range(n):
        for g in GATE_SET_1:
            ch = per_qubit[q].get(g, default)
            noise[g if n == 1 else f"{g}@{q}"] = ch
    if n == 2:
        noise["MS_YY"] = ms_noise or PauliChannel.identity(2)
    blochs = prep_bloch or [(0.0, 0.0, 1.0)] * n
    prep = np.ones(1)
    for b in blochs:
        prep = np.kron(prep, pauli.bloch_vector(*b))
    meas = measure_zero or [(1.0, 0.0, 0.0, 1.0)] * n
    effects = tuple(np.asarray(m, dtype=float) / np.sqrt(2) for m in meas)
    conf = np.eye(2**n) if readout_confusion is None else np.asarray(readout_confusion, dtype=float)
    return DeviceSpec(
        n=n,
        gate_noise=noise,
        prep_state=prep,
        zero_effects=effects,
        readout_confusion=conf,
        crosstalk_ratio=crosstalk_ratio,
        seed=seed,
        drift=drift,
        name=name,
    )


__all__ = [
    "FIDUCIALS",
    "ConsistencyError",
    "DeviceError",
    "DeviceSpec",
    "Drift",
    "ExperimentalSetting",
    "PauliChannel",
    "ShotRecord",
    "batch_outcomes",
    "crosstalk_gate_ptm",
    "exact_setting_probability",
    "ideal_device",
    "make_device",
    "run_setting",
    "run_settings",
    "stream_rng",
]
