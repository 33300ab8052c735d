"""Gate set tomography under the Pauli-error ansatz.

Single-qubit characterization fits 3 Pauli rates per gate plus the prepared
Bloch vector by maximum likelihood over ``4 x 11 x 3`` settings.  Two-qubit
characterization tensors per-qubit results and then solves a 15-unknown
linear system for the ``MS_YY`` Pauli channel; ``MS_ZZ`` follows by
composition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, optimize

from . import pauli
from .device import DeviceSpec, ExperimentalSetting, PauliChannel, ShotRecord
from .model import GateSetModel
from .pauli import FIDUCIALS, GATE_SET_1, commutation_signs, ideal_ptm, product_label

log = logging.getLogger(__name__)

# measurement fiducials for Z, X and Y; X+pi (measuring -Z) is redundant
MEAS_FIDUCIALS = ("I", "Y-pi/2", "X+pi/2")
GRAM_ROWS = ("I", "X", "Y", "Z")
DEFAULT_SHOTS = 10000
MS_SHOTS = 3000
N_MS_EQUATIONS = 15


class GstError(ValueError):
    pass


class ConditioningError(GstError):
    """The selected linear system is rank deficient."""


class ModelViolationError(GstError):
    """Estimated Pauli rates are negative beyond tolerance."""


# -- experiment design --------------------------------------------------------


def design_experiments(
    n: int = 1,
    gate_set: str | Sequence[str] | None = None,
    shots: int | None = None,
    include_spam: bool = True,
) -> list[ExperimentalSetting]:
    """Settings for single-qubit GST or the two-qubit MS step.

    ``n=1`` gives the 132 gate settings ``(F_i, G_j, F_k)`` over the 11-gate
    set followed, when ``include_spam`` is true, by the 12 SPAM settings
    ``(F_i, F_k)`` (``gate_index == -1``) that fix the Gram matrix.  Without
    them, uniform gate depolarization and state shrinkage are
    indistinguishable because every gate setting has the same length.

    ``n=2`` with ``gate_set="MS_YY"`` gives the 15 best-conditioned settings
    out of the 16 x 9 candidates.
    """
    if n == 1 and gate_set in (None, "G1", tuple(GATE_SET_1), list(GATE_SET_1)):
        shots = DEFAULT_SHOTS if shots is None else shots
        settings = [
            ExperimentalSetting((fi, g, fk), shots, i, j, k)
            for i, fi in enumerate(FIDUCIALS)
            for j, g in enumerate(GATE_SET_1)
            for k, fk in enumerate(MEAS_FIDUCIALS)
        ]
        if include_spam:
            settings += [
                ExperimentalSetting((fi, fk), shots, i, -1, k)
                for i, fi in enumerate(FIDUCIALS)
                for k, fk in enumerate(MEAS_FIDUCIALS)
            ]
        return settings
    if n == 2 and gate_set in ("MS_YY", "MS"):
        shots = MS_SHOTS if shots is None else shots
        candidates = ms_candidate_settings(shots)
        rows, _, pred = _ms_rows(candidates, _ideal_singles_model())
        chosen = select_equations(rows, pred, N_MS_EQUATIONS)
        return [candidates[c] for c in sorted(chosen)]
    raise GstError(f"unsupported design (n={n}, gate_set={gate_set!r})")


def ms_candidate_settings(shots: int = MS_SHOTS) -> list[ExperimentalSetting]:
    preps = [product_label(a, b) for a in FIDUCIALS for b in FIDUCIALS]
    meas = [product_label(a, b) for a in MEAS_FIDUCIALS for b in MEAS_FIDUCIALS]
    return [
        ExperimentalSetting((fi, "MS_YY", fk), shots, i, 0, k)
        for i, fi in enumerate(preps)
        for k, fk in enumerate(meas)
    ]


def embed_setting(setting: ExperimentalSetting, qubit: int) -> ExperimentalSetting:
    """Run a single-qubit setting on one qubit of a two-qubit device."""
    gates = tuple(product_label(g, "I") if qubit == 0 else product_label("I", g) for g in setting.gate_sequence)
    return ExperimentalSetting(gates, setting.shots, setting.init_index, setting.gate_index, setting.meas_fiducial)


# -- data ---------------------------------------------------------------------


def correct_readout(probs: np.ndarray, confusion: np.ndarray | None) -> np.ndarray:
    """Undo a calibrated readout confusion matrix (``observed = C @ true``)."""
    if confusion is None:
        return np.asarray(probs, dtype=float)
    return np.linalg.solve(confusion, np.asarray(probs, dtype=float).T).T


@dataclass
class GstDataset:
    """Observed zero-outcome frequencies keyed by design slot ``(i, j, k)``.

    ``zeros`` holds raw counts (for exact data, ``shots * probability``);
    ``freqs`` holds readout-corrected frequencies used by the estimators.
    """

    n: int
    settings: list[ExperimentalSetting]
    shots: np.ndarray
    zeros: np.ndarray
    freqs: np.ndarray
    exact: bool = False

    def __post_init__(self):
        keys = [s.key for s in self.settings]
        self.index = {k: idx for idx, k in enumerate(keys)}

    def __len__(self) -> int:
        return len(self.settings)

    @classmethod
    def from_records(cls, records: Sequence[ShotRecord], n: int = 1, confusion: np.ndarray | None = None, qubit: int | None = None) -> "GstDataset":
        """Build from shot records.

        With ``qubit`` set, records come from a two-qubit device and the
        zero frequency of that qubit is marginalized after readout
        correction.  Otherwise the all-zeros outcome is used.
        """
        settings = [r.setting for r in records]
        shots = np.array([r.shots for r in records], dtype=float)
        counts = np.array([r.counts for r in records], dtype=float)
        freqs_all = counts / shots[:, None]
        return cls._build(n, settings, shots, counts, freqs_all, confusion, qubit, exact=False)

    @classmethod
    def exact(cls, device: DeviceSpec, settings: Sequence[ExperimentalSetting], qubit: int | None = None, n: int | None = None) -> "GstDataset":
        """Infinite-shot dataset carrying exact probabilities."""
        settings = list(settings)
        shots = np.array([s.shots for s in settings], dtype=float)
        probs = np.array([device.outcome_probabilities(s.gate_sequence) for s in settings])
        n = n if n is not None else (1 if qubit is not None else device.n)
        return cls._build(n, settings, shots, probs * shots[:, None], probs, device.readout_confusion, qubit, exact=True)

    @classmethod
    def _build(cls, n, settings, shots, counts, freqs_all, confusion, qubit, exact):
        if confusion is not None and np.allclose(confusion, np.eye(confusion.shape[0]), atol=0, rtol=0):
            confusion = None
        corrected = correct_readout(freqs_all, confusion)
        if qubit is None:
            raw0 = counts[:, 0]
            freqs = corrected[:, 0]
        else:
            half = corrected.reshape(-1, 2, 2)
            raw = counts.reshape(-1, 2, 2)
            if qubit == 0:
                freqs, raw0 = half[:, 0, :].sum(axis=1), raw[:, 0, :].sum(axis=1)
            else:
                freqs, raw0 = half[:, :, 0].sum(axis=1), raw[:, :, 0].sum(axis=1)
        return cls(n, list(settings), shots, raw0, np.asarray(freqs, dtype=float), exact)

    def variances(self) -> np.ndarray:
        """Binomial variance estimate with a one-count floor."""
        m = np.clip(self.freqs, 0.0, 1.0)
        return np.maximum(m * (1 - m) / self.shots, 1.0 / self.shots**2)

    def require(self, keys) -> np.ndarray:
        missing = [k for k in keys if k not in self.index]
        if missing:
            raise GstError(f"dataset is missing settings {missing[:5]}{'...' if len(missing) > 5 else ''}")
        return np.array([self.index[k] for k in keys])


# -- Gram matrix ---------------------------------------------------------------


def estimate_gram(data: GstDataset) -> np.ndarray:
    """Expectations of ``I, X, Y, Z`` (rows) on the four fiducial states (columns).

    Uses the SPAM settings ``(F_i, F_k)`` when present, otherwise the gate
    settings whose middle gate is the identity gate.
    """
    j = -1 if (0, -1, 0) in data.index else GATE_SET_1.index("I")
    # rows X, Y, Z are measured with fiducials Y-pi/2, X+pi/2, I
    meas_for_row = {1: 1, 2: 2, 3: 0}
    gram = np.ones((4, 4))
    for row, k in meas_for_row.items():
        idx = data.require([(i, j, k) for i in range(4)])
        gram[row] = 2 * data.freqs[idx] - 1
    return gram


# -- single-qubit maximum likelihood --------------------------------------------


@dataclass
class GstEstimate:
    """Pauli rates per gate plus the estimated prepared state."""

    gate_rates: dict[str, PauliChannel]
    state_params: np.ndarray
    gram: np.ndarray
    log_likelihood: float
    converged: bool = True
    message: str = ""
    n_evaluations: int = 0

    def prep_state(self) -> np.ndarray:
        return pauli.bloch_vector(*self.state_params)

    def ptm(self, label: str) -> np.ndarray:
        return self.gate_rates[label].ptm() @ ideal_ptm(label)

    def ptms(self) -> dict[str, np.ndarray]:
        return {g: self.ptm(g) for g in self.gate_rates}

    def model(self) -> GateSetModel:
        return GateSetModel(1, self.prep_state(), self.ptms())


def _softmax_rates(logits: np.ndarray) -> np.ndarray:
    """Map (..., 3) unconstrained values onto the 4-simplex, identity logit 0."""
    full = np.concatenate([np.zeros(logits.shape[:-1] + (1,)), logits], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def _rates_to_logits(rates: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    r = np.maximum(np.asarray(rates, dtype=float), floor)
    return np.log(r[..., 1:]) - np.log(r[..., :1])


class _SingleQubitAnsatz:
    """Vectorized ansatz predictions for the single-qubit design."""

    n_params = 3 * len(GATE_SET_1) + 3

    def __init__(self, data: GstDataset):
        self.fid_idx = np.array([GATE_SET_1.index(f) for f in FIDUCIALS])
        self.meas_idx = np.array([GATE_SET_1.index(f) for f in MEAS_FIDUCIALS])
        self.ideal = np.stack([ideal_ptm(g) for g in GATE_SET_1])
        self.signs = commutation_signs(1)
        self.e0 = pauli.zero_projector(1)
        n_gates = len(GATE_SET_1)
        gate_keys = [(i, j, k) for i in range(4) for j in range(n_gates) for k in range(3)]
        data.require(gate_keys)
        # flat position of each record in concat(gate predictions, spam predictions)
        pos = []
        for i, j, k in (s.key for s in data.settings):
            if j == -1:
                pos.append(4 * n_gates * 3 + 3 * i + k)
            else:
                pos.append((i * n_gates + j) * 3 + k)
        self.pos = np.array(pos)
        self.observed = data.freqs
        self.sigma = np.sqrt(data.variances())

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rates = _softmax_rates(x[:-3].reshape(len(GATE_SET_1), 3))
        return rates, x[-3:]

    def pack(self, rates: np.ndarray, bloch: np.ndarray) -> np.ndarray:
        return np.concatenate([_rates_to_logits(rates).ravel(), bloch])

    def predict_from(self, rates: np.ndarray, bloch: np.ndarray) -> np.ndarray:
        diag = rates @ self.signs  # (11, 4); signs symmetric
        noisy = diag[:, :, None] * self.ideal
        rho = pauli.bloch_vector(*bloch)
        prepared = np.einsum("iab,b->ia", noisy[self.fid_idx], rho)  # (4, 4)
        evolved = np.einsum("jab,ib->ija", noisy, prepared)  # (4, 11, 4)
        effects = np.einsum("a,kab->kb", self.e0, noisy[self.meas_idx])  # (3, 4)
        gate = np.einsum("kb,ijb->ijk", effects, evolved).ravel()
        spam = np.einsum("kb,ib->ik", effects, prepared).ravel()
        return np.concatenate([gate, spam])[self.pos]

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_from(*self.unpack(x)) - self.observed) / self.sigma


def likelihood(params: tuple[Mapping[str, object], Sequence[float]], data: GstDataset) -> float:
    """Log-likelihood ``-sum (m - mbar)^2 / Delta^2`` of candidate parameters.

    ``params`` is ``(rates_by_gate, bloch_vector)``; rates may be
    :class:`PauliChannel` objects or 4-vectors and must lie on the simplex.
    """
    rates_by_gate, bloch = params
    rates = []
    for g in GATE_SET_1:
        p = np.asarray(getattr(rates_by_gate[g], "rates", rates_by_gate[g]), dtype=float)
        pauli.check_simplex(p, tol=1e-9)
        rates.append(p)
    ansatz = _SingleQubitAnsatz(data)
    r = (ansatz.predict_from(np.array(rates), np.asarray(bloch, dtype=float)) - ansatz.observed) / ansatz.sigma
    return float(-np.sum(r**2))


def fit_single_qubit(
    data: GstDataset,
    initial_error: float = 1e-3,
    max_nfev: int | None = None,
    x0: np.ndarray | None = None,
    gauge: str | None = "target",
) -> GstEstimate:
    """Maximum-likelihood Pauli rates for the 11 single-qubit gates.

    Rates are parameterized through a normalized exponential so every iterate
    stays on the simplex.  The optimizer is deterministic; non-convergence is
    reported through ``converged``/``message`` with the best point found.
    With ``gauge="target"`` the result is moved to the gauge closest to the
    ideal gate set (see :func:`fix_gauge`); ``None`` returns the raw optimum.
    """
    if data.n != 1:
        raise GstError("fit_single_qubit needs single-qubit data")
    ansatz = _SingleQubitAnsatz(data)
    gram = estimate_gram(data)
    if x0 is None:
        start_rates = np.tile([1 - 3 * initial_error] + [initial_error] * 3, (len(GATE_SET_1), 1))
        start_bloch = np.clip(gram[1:, 0], -1, 1)
        x0 = ansatz.pack(start_rates, start_bloch)
    res = optimize.least_squares(
        ansatz.residuals,
        x0,
        method="lm",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=max_nfev,
        x_scale=1.0,
    )
    # lm stops on tolerances it cannot reach in floating point; those are fine
    converged = bool(res.status > 0)
    rates, bloch = ansatz.unpack(res.x)
    if not converged:
        log.warning("single-qubit GST did not converge: %s", res.message)
    est = GstEstimate(
        gate_rates={g: PauliChannel(rates[j] / rates[j].sum()) for j, g in enumerate(GATE_SET_1)},
        state_params=np.array(bloch),
        gram=gram,
        log_likelihood=float(-np.sum(res.fun**2)),
        converged=converged,
        message=str(res.message),
        n_evaluations=int(res.nfev),
    )
    if gauge == "target":
        est = fix_gauge(est)[0]
    elif gauge is not None:
        raise GstError(f"unknown gauge option {gauge!r}")
    return est


# -- gauge ----------------------------------------------------------------------
#
# With the measurement fixed to the ideal Z projector, the similarity
# transform D = diag(1, a, b, 1) maps every Pauli-ansatz gate set to another
# Pauli-ansatz gate set with identical predictions for every circuit.  It
# rescales the Y/Z split of the X+-pi/2 channels and the X/Z split of the
# Y+-pi/2 channels, and the x, y components of the prepared state.  Those
# individual rates are therefore not identifiable; the estimate is reported
# in the gauge closest to a target gate set.


def gauge_transform(estimate: GstEstimate, a: float, b: float) -> GstEstimate:
    """The same physical gate set expressed in the gauge ``diag(1, a, b, 1)``."""
    d = np.array([1.0, a, b, 1.0])
    rates = {}
    for g, ch in estimate.gate_rates.items():
        ptm = d[:, None] * estimate.ptm(g) / d[None, :]
        diag = np.diag(ptm @ ideal_ptm(g).T)
        p = pauli.rates_from_diagonal(diag)
        if p.min() < 0:
            p = np.maximum(p, 0.0)
            p /= p.sum()
        rates[g] = PauliChannel(p)
    x, y, z = estimate.state_params
    return replace(estimate, gate_rates=rates, state_params=np.array([a * x, b * y, z]))


def fix_gauge(estimate: GstEstimate, target: Mapping[str, np.ndarray] | None = None) -> tuple[GstEstimate, tuple[float, float]]:
    """Move ``estimate`` to the gauge minimizing its distance to ``target``.

    ``target`` maps gate labels to PTMs (default: the ideal gates).  Returns
    the transformed estimate and the gauge parameters ``(a, b)``.
    """
    labels = list(estimate.gate_rates)
    est = np.stack([estimate.ptm(g) for g in labels])
    tgt = np.stack([np.asarray(target[g]) if target is not None else ideal_ptm(g) for g in labels])

    def resid(logs):
        d = np.exp(np.array([0.0, logs[0], logs[1], 0.0]))
        return (d[None, :, None] * est / d[None, None, :] - tgt).ravel()

    res = optimize.least_squares(resid, np.zeros(2), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, b = np.exp(res.x)
    return gauge_transform(estimate, a, b), (float(a), float(b))


# -- two-qubit step ---------------------------------------------------------------


def _ideal_singles_model() -> GateSetModel:
    single = {g: ideal_ptm(g) for g in GATE_SET_1}
    return singles_model([single, single], [pauli.zero_state(1)] * 2)


def singles_model(single_ptms: Sequence[Mapping[str, np.ndarray]], preps: Sequence[np.ndarray]) -> GateSetModel:
    prep = np.kron(preps[0], preps[1])
    return GateSetModel(2, prep, single_qubit=single_ptms)


def _as_singles_model(singles) -> GateSetModel:
    if isinstance(singles, GateSetModel):
        return singles
    if isinstance(singles, GstEstimate):
        singles = (singles, singles)
    ests = list(singles)
    return singles_model([e.ptms() for e in ests], [e.prep_state() for e in ests])


def _ms_rows(settings: Sequence[ExperimentalSetting], model: GateSetModel):
    """Linear rows for the 15 non-identity MS rates.

    The ansatz probability is ``c . p`` with ``c = a S`` and
    ``a_l = (E R_Fk)_l (R_MS R_Fi rho)_l``; eliminating ``p_II`` gives
    ``m - c_0 = (c_1: - c_0) . p_1:``.  Returns rows, offsets and the
    prediction at the identity channel.
    """
    signs = commutation_signs(2)
    e00 = pauli.zero_projector(2)
    ms = ideal_ptm("MS_YY")
    rows, offsets, preds = [], [], []
    for s in settings:
        fi, g, fk = s.gate_sequence
        if g != "MS_YY":
            raise GstError(f"MS setting has middle gate {g!r}")
        left = e00 @ model.ptm(fk)
        right = ms @ model.ptm(fi) @ model.prep_state
        c = (left * right) @ signs
        rows.append(c[1:] - c[0])
        offsets.append(c[0])
        preds.append(c[0])
    return np.array(rows), np.array(offsets), np.array(preds)


def select_equations(rows: np.ndarray, predicted: np.ndarray, count: int = N_MS_EQUATIONS, eps: float = 1e-3) -> list[int]:
    """Greedy column-pivoted choice of ``count`` well-conditioned rows.

    Rows are scaled by the inverse binomial spread of their predicted
    probability, which favours settings whose outcome is nearly certain.
    """
    p = np.clip(predicted, 0, 1)
    weight = 1.0 / np.sqrt(p * (1 - p) + eps)
    _, _, piv = linalg.qr((rows * weight[:, None]).T, pivoting=True, mode="economic")
    return [int(i) for i in piv[:count]]


def characterize_ms(
    data: GstDataset,
    singles,
    n_equations: int = N_MS_EQUATIONS,
    negative_tol: float = 1e-4,
    n_sigma: float = 5.0,
) -> PauliChannel:
    """Solve for the 16 Pauli rates of the experimental ``MS_YY`` gate.

    ``singles`` are the per-qubit characterizations (two
    :class:`GstEstimate` objects, one shared estimate, or a two-qubit
    :class:`GateSetModel` of the single-qubit gates).  When the dataset holds
    more than ``n_equations`` settings the best-conditioned subset is used.

    A rate is rejected as negative only below ``-max(negative_tol, n_sigma *
    sd)``, where ``sd`` propagates the binomial shot noise of the selected
    settings (zero for exact data).  ``sd`` ignores the error of the
    single-qubit estimates, which at equal budgets is comparable, hence the
    wide default band.  Tolerated negatives are clipped.
    """
    if data.n != 2:
        raise GstError("characterize_ms needs two-qubit data")
    model = _as_singles_model(singles)
    rows, offsets, pred = _ms_rows(data.settings, model)
    observed = data.freqs
    if len(rows) > n_equations:
        chosen = select_equations(rows, pred, n_equations)
    else:
        chosen = list(range(len(rows)))
    a = rows[chosen]
    b = observed[chosen] - offsets[chosen]
    sv = np.linalg.svd(a, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * 1e-10)) if sv.size else 0
    if rank < 15:
        raise ConditioningError(
            f"MS system has rank {rank} < 15 from {len(chosen)} settings; "
            f"singular values {np.array2string(sv, precision=3)}"
        )
    if a.shape[0] == 15:
        x = np.linalg.solve(a, b)
    else:
        x = np.linalg.lstsq(a, b, rcond=None)[0]
    rates = np.concatenate([[1.0 - x.sum()], x])
    tol = np.full(16, negative_tol)
    if not data.exact:
        solve = np.linalg.pinv(a)
        cov_x = solve @ np.diag(data.variances()[chosen]) @ solve.T
        jac = np.vstack([-np.ones(15), np.eye(15)])
        sd = np.sqrt(np.clip(np.diag(jac @ cov_x @ jac.T), 0.0, None))
        tol = np.maximum(tol, n_sigma * sd)
    bad = rates < -tol
    if bad.any():
        worst = int(np.argmin(rates + tol))
        raise ModelViolationError(
            f"MS rate for {pauli.pauli_labels(2)[worst]} is {rates[worst]:.3g}, below the tolerance -{tol[worst]:.3g}"
        )
    if rates.min() < 0:
        rates = np.maximum(rates, 0.0)
        rates /= rates.sum()
    return PauliChannel(rates)


def derive_ms_zz(singles, ms_yy: np.ndarray) -> np.ndarray:
    """Experimental ``MS_ZZ`` PTM from characterized ``X+-pi/2`` and ``MS_YY``."""
    model = _as_singles_model(singles)
    pre = model.ptm(product_label("X+pi/2", "X+pi/2"))
    post = model.ptm(product_label("X-pi/2", "X-pi/2"))
    return pauli.compose_all([pre, ms_yy, post])


@dataclass
class TwoQubitEstimate:
    """Per-qubit single-qubit estimates plus the characterized MS channel."""

    singles: tuple[GstEstimate, GstEstimate]
    ms_yy: PauliChannel
    extras: dict = field(default_factory=dict)

    def model(self) -> GateSetModel:
        base = _as_singles_model(self.singles)
        ms_yy = self.ms_yy.ptm() @ ideal_ptm("MS_YY")
        return base.with_ptm("MS_YY", ms_yy).with_ptm("MS_ZZ", derive_ms_zz(base, ms_yy))


# -- convenience drivers ----------------------------------------------------------


def characterize_single_qubit(device: DeviceSpec, shots: int = DEFAULT_SHOTS, stream=("gst",), exact: bool = False) -> tuple[GstDataset, GstEstimate]:
    """Collect the GST dataset on a one-qubit device and fit it."""
    from .device import run_settings

    settings = design_experiments(1, shots=shots)
    if exact:
        data = GstDataset.exact(device, settings)
    else:
        data = GstDataset.from_records(run_settings(device, settings, stream), confusion=device.readout_confusion)
    return data, fit_single_qubit(data)


def characterize_two_qubit(
    device: DeviceSpec,
    shots: int = DEFAULT_SHOTS,
    ms_shots: int = MS_SHOTS,
    stream=("gst",),
    exact: bool = False,
) -> tuple[dict[str, GstDataset], TwoQubitEstimate]:
    """Two-step characterization: per-qubit GST, then the MS linear solve."""
    from .device import run_settings

    datasets: dict[str, GstDataset] = {}
    singles = []
    base = design_experiments(1, shots=shots)
    for q in range(2):
        settings = [embed_setting(s, q) for s in base]
        if exact:
            data = GstDataset.exact(device, settings, qubit=q)
        else:
            records = run_settings(device, settings, tuple(stream) + (f"q{q}",))
            data = GstDataset.from_records(records, n=1, confusion=device.readout_confusion, qubit=q)
        datasets[f"q{q}"] = data
        singles.append(fit_single_qubit(data))
    ms_settings = design_experiments(2, "MS_YY", shots=ms_shots)
    if exact:
        ms_data = GstDataset.exact(device, ms_settings)
    else:
        ms_data = GstDataset.from_records(run_settings(device, ms_settings, tuple(stream) + ("ms",)), n=2, confusion=device.readout_confusion)
    datasets["ms"] = ms_data
    ms = characterize_ms(ms_data, singles)
    return datasets, TwoQubitEstimate((singles[0], singles[1]), ms)
