"""Post-selected randomized benchmarking, raw and error-mitigated.

A length-``L`` sequence alternates ``L + 1`` interleaving operations with
``L`` computational gates, ``I0 G1 I1 ... GL IL``.  Only sequences whose
ideal final state is an eigenstate of ``Z`` (``Z Z`` for two qubits) are
kept, so the ideal outcome is a definite ``+-1`` and the survival fidelity
is ``(1 + outcome * <Z>) / 2``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from . import pauli
from .device import DeviceSpec, batch_outcomes, stream_rng
from .pauli import GATE_SET_1, product_label
from .pec import corrected_expectation, estimate_mitigated
from .qpd import Decompositions

log = logging.getLogger(__name__)

COMPUTATIONAL = {1: ("X+pi/2", "X-pi/2", "Y+pi/2", "Y-pi/2"), 2: ("MS_YY", "MS_ZZ")}
INTERLEAVED = {
    1: ("I", "X+pi", "X-pi", "Y+pi", "Y-pi", "Z+pi", "Z-pi"),
    2: tuple(product_label(a, b) for a in GATE_SET_1 for b in GATE_SET_1),
}
MAX_REJECTIONS = 10**6
EXPONENT_CONVENTION = "per computational gate: F(L) = A p^L + B"


class FitError(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RBSequence:
    n: int
    computational: tuple[str, ...]
    interleaved: tuple[str, ...]
    ideal_outcome: int

    @property
    def L(self) -> int:
        return len(self.computational)

    @property
    def gates(self) -> tuple[str, ...]:
        out = [self.interleaved[0]]
        for g, i in zip(self.computational, self.interleaved[1:]):
            out += [g, i]
        return tuple(out)


def _ideal_values(n: int, ops: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    table = np.stack([pauli.ideal_ptm(lab) for lab in labels])
    vec = np.broadcast_to(pauli.zero_state(n), (ops.shape[0], 4**n)).copy()
    for col in range(ops.shape[1]):
        vec = np.einsum("nij,nj->ni", table[ops[:, col]], vec)
    return vec @ pauli.pauli_observable("Z" * n)


def all_candidates(n: int, L: int) -> np.ndarray:
    """Every operation-index row ``(I0, G1, I1, ...)`` over the combined label table."""
    comp, inter = COMPUTATIONAL[n], INTERLEAVED[n]
    axes = [range(len(comp), len(comp) + len(inter)) if k % 2 == 0 else range(len(comp)) for k in range(2 * L + 1)]
    return np.array(list(itertools.product(*axes)), dtype=np.intp).reshape(-1, 2 * L + 1)


@lru_cache(maxsize=None)
def has_sequences(n: int, L: int, limit: int = 200_000) -> bool:
    """Whether any post-selected sequence exists; assumed true for large spaces."""
    size = len(COMPUTATIONAL[n]) ** L * len(INTERLEAVED[n]) ** (L + 1)
    if size > limit:
        return True
    ops = all_candidates(n, L)
    values = _ideal_values(n, ops, list(COMPUTATIONAL[n]) + list(INTERLEAVED[n]))
    return bool(np.any(np.abs(np.abs(values) - 1.0) < 1e-9))


def generate_sequences(
    n: int,
    L: int,
    count: int,
    rng: np.random.Generator,
    max_rejections: int = MAX_REJECTIONS,
) -> list[RBSequence]:
    """Draw uniform candidates and keep the first ``count`` with a definite ideal outcome."""
    if L < 1:
        raise ValueError("sequence length L must be at least 1")
    if not has_sequences(n, L):
        raise GenerationError(f"no length-{L} sequence on {n} qubit(s) ends in a definite outcome")
    comp, inter = COMPUTATIONAL[n], INTERLEAVED[n]
    labels = list(comp) + list(inter)
    kept: list[RBSequence] = []
    rejected = 0
    batch = max(4 * count, 64)
    while len(kept) < count:
        c = rng.integers(len(comp), size=(batch, L))
        i = rng.integers(len(inter), size=(batch, L + 1))
        ops = np.empty((batch, 2 * L + 1), dtype=np.intp)
        ops[:, 0::2] = len(comp) + i
        ops[:, 1::2] = c
        values = _ideal_values(n, ops, labels)
        for row in range(batch):
            v = values[row]
            if abs(abs(v) - 1.0) < 1e-9:
                kept.append(RBSequence(n, tuple(comp[k] for k in c[row]), tuple(inter[k] for k in i[row]), int(round(v))))
                if len(kept) == count:
                    break
            else:
                rejected += 1
        if rejected > max_rejections:
            raise GenerationError(f"more than {max_rejections} candidates rejected for n={n}, L={L}")
    return kept


# -- fitting ---------------------------------------------------------------------


@dataclass(frozen=True)
class RBPoint:
    L: int
    mean: float
    std_error: float
    n_sequences: int
    total_C: float | None = None


@dataclass(frozen=True)
class DecayFit:
    """Fit of ``A p^L + B``; ``error_rate`` is ``(d - 1)(1 - p)/d``."""

    A: float
    p: float
    B: float
    A_err: float
    p_err: float
    B_err: float
    covariance: np.ndarray
    n: int
    chi2_red: float
    fixed_b: bool

    @property
    def error_rate(self) -> float:
        return depolarizing_rate(self.p, self.n)

    @property
    def error_rate_err(self) -> float:
        d = 2**self.n
        return (d - 1) / d * self.p_err

    @property
    def decay_rate(self) -> float:
        """``1 - p`` without the dimension conversion."""
        return 1.0 - self.p

    @property
    def per_operation_rate(self) -> float:
        """Converted rate if each of the ``2L + 1`` operations decayed equally."""
        d = 2**self.n
        return (d - 1) / d * (1.0 - np.sign(self.p) * abs(self.p) ** 0.5)

    def as_dict(self) -> dict:
        return {
            "A": self.A,
            "A_err": self.A_err,
            "p": self.p,
            "p_err": self.p_err,
            "B": self.B,
            "B_err": self.B_err,
            "B_fixed": self.fixed_b,
            "chi2_red": self.chi2_red,
            "error_rate": self.error_rate,
            "error_rate_err": self.error_rate_err,
            "decay_rate": self.decay_rate,
            "per_operation_rate": float(self.per_operation_rate),
            "exponent": EXPONENT_CONVENTION,
        }


def depolarizing_rate(p: float, n: int) -> float:
    d = 2**n
    return (d - 1) / d * (1.0 - p)


def fit_decay(
    points: Sequence[RBPoint],
    n: int = 1,
    fix_b: float | None = 0.5,
    absolute_sigma: bool = False,
) -> DecayFit:
    """Weighted least-squares fit of ``F(L) = A p^L + B``.

    ``B`` is held at ``fix_b`` unless it is ``None``.  Uncertainties come from
    the fit covariance, inflated by the reduced chi-square when it exceeds 1
    unless ``absolute_sigma`` is set.  ``p`` may exceed 1, as mitigated
    points can sit above the ideal within their errors.
    """
    if len({pt.L for pt in points}) < 3:
        raise FitError("need at least 3 distinct sequence lengths")
    x = np.array([pt.L for pt in points], dtype=float)
    y = np.array([pt.mean for pt in points], dtype=float)
    err = np.array([pt.std_error for pt in points], dtype=float)
    sigma = None if np.all(err <= 0) else np.maximum(err, max(err[err > 0].min() * 1e-3, 1e-12))

    b0 = 0.5 if fix_b is None else fix_b
    lo, hi = np.argmin(x), np.argmax(x)
    ratio = (y[hi] - b0) / (y[lo] - b0) if abs(y[lo] - b0) > 1e-12 else 1.0
    p0 = float(np.clip(ratio, 1e-3, 1.5) ** (1.0 / max(x[hi] - x[lo], 1.0)))
    a0 = float((y[lo] - b0) / p0 ** x[lo]) if p0 > 0 else 0.5

    if fix_b is None:
        model = lambda L, a, p, b: a * p**L + b  # noqa: E731
        start, bounds = [a0, p0, b0], ([-2.0, 0.0, -1.0], [2.0, 2.0, 2.0])
    else:
        model = lambda L, a, p: a * p**L + fix_b  # noqa: E731
        start, bounds = [a0, p0], ([-2.0, 0.0], [2.0, 2.0])
    start = np.clip(start, np.array(bounds[0]) + 1e-9, np.array(bounds[1]) - 1e-9)
    try:
        popt, pcov = optimize.curve_fit(
            model, x, y, p0=start, sigma=sigma, absolute_sigma=True, bounds=bounds, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"decay fit failed: {exc}") from None
    resid = y - model(x, *popt)
    dof = max(len(x) - len(popt), 1)
    chi2 = float(np.sum((resid / (sigma if sigma is not None else 1.0)) ** 2) / dof)
    if sigma is None:
        pcov = pcov * chi2
    elif not absolute_sigma:
        pcov = pcov * max(1.0, chi2)
    if not np.all(np.isfinite(pcov)):
        raise FitError(f"decay fit covariance is not finite; residuals {np.array2string(resid, precision=3)}")
    errs = np.sqrt(np.clip(np.diag(pcov), 0, None))
    if fix_b is None:
        (a, p, b), (ae, pe, be) = popt, errs
    else:
        (a, p), (ae, pe) = popt, errs
        b, be = fix_b, 0.0
    return DecayFit(float(a), float(p), float(b), float(ae), float(pe), float(be), pcov, n, chi2, fix_b is not None)


# -- running -------------------------------------------------------------------------


@dataclass
class RBResult:
    n: int
    mitigated: bool
    points: list[RBPoint]
    fit: DecayFit
    sequences: dict[int, list[RBSequence]] = field(default_factory=dict)
    # per-length per-sequence fidelities, in sequence order
    fidelities: dict[int, np.ndarray] = field(default_factory=dict)
    # per-length mitigated estimates, kept only when requested
    estimates: dict[int, list] = field(default_factory=dict)

    @property
    def error_rate(self) -> float:
        return self.fit.error_rate


def sequences_for(n: int, lengths: Sequence[int], count: int, seed: int, stream=("rb",)) -> dict[int, list[RBSequence]]:
    """The sequences every run with the same seed uses, one stream per length."""
    return {L: generate_sequences(n, L, count, stream_rng(seed, *stream, "sequences", n, L)) for L in lengths}


def _labels_and_ops(seqs: Sequence[RBSequence]) -> tuple[list[str], np.ndarray]:
    labels: list[str] = []
    index: dict[str, int] = {}
    ops = []
    for s in seqs:
        row = []
        for g in s.gates:
            if g not in index:
                index[g] = len(labels)
                labels.append(g)
            row.append(index[g])
        ops.append(row)
    return labels, np.array(ops, dtype=np.intp)


def sequence_expectations(model, seqs: Sequence[RBSequence], shots: int | None, rng: np.random.Generator | None, t: float = 0.0) -> np.ndarray:
    """``<Z>``/``<ZZ>`` per sequence; exact when ``shots`` is ``None``."""
    labels, ops = _labels_and_ops(seqs)
    probs = batch_outcomes(model, ops, labels, t=t)
    conf = getattr(model, "readout_confusion", None)
    if shots is None:
        return corrected_expectation(probs, conf)
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum(axis=1, keepdims=True)
    counts = rng.multinomial(shots, probs)
    return corrected_expectation(counts / shots, conf)


def _point(L: int, fid: np.ndarray, within: np.ndarray, total_c: float | None = None) -> RBPoint:
    # spread between sequences, or the propagated within-sequence error if larger
    count = len(fid)
    between = float(np.std(fid, ddof=1) / np.sqrt(count)) if count > 1 else 0.0
    propagated = float(np.sqrt(np.sum(within**2)) / count)
    return RBPoint(L, float(np.mean(fid)), max(between, propagated), count, total_c)


def run_rb(
    device,
    lengths: Sequence[int],
    count: int,
    shots: int | None = 1000,
    mitigated: bool = False,
    decomps: Decompositions | None = None,
    n_circuits: int = 2000,
    shots_per_circuit: int = 100,
    seed: int | None = None,
    stream=("rb",),
    sequences: dict[int, list[RBSequence]] | None = None,
    fix_b: float | None = 0.5,
    times: Mapping[int, float] | None = None,
    keep_circuits: bool = False,
) -> RBResult:
    """Raw or mitigated RB over ``lengths`` with ``count`` sequences per length.

    Raw runs measure each sequence with ``shots`` shots (``None`` for exact
    probabilities).  Mitigated runs need ``decomps`` and spend ``n_circuits``
    sampled circuits of ``shots_per_circuit`` shots on every sequence.
    ``times`` gives the run progress at which each length executes on a
    drifting device (0 by default).
    """
    n = device.n
    seed = getattr(device, "seed", 0) if seed is None else seed
    sequences = sequences or sequences_for(n, lengths, count, seed, stream)
    if mitigated and decomps is None:
        raise ValueError("mitigated RB needs decompositions")
    points, fids, kept = [], {}, {}
    for L in lengths:
        seqs = sequences[L]
        t = float(times.get(L, 0.0)) if times else 0.0
        outcome = np.array([s.ideal_outcome for s in seqs], dtype=float)
        if not mitigated:
            rng = stream_rng(seed, *stream, "raw", L)
            values = sequence_expectations(device, seqs, shots, rng, t)
            fid = (1 + outcome * values) / 2
            within = np.sqrt(np.clip(fid * (1 - fid), 0, None) / shots) if shots else np.zeros_like(fid)
            points.append(_point(L, fid, within))
        else:
            vals, errs, costs = [], [], []
            for k, s in enumerate(seqs):
                rng = stream_rng(seed, *stream, "mitigated", L, k)
                est = estimate_mitigated(device, s.gates, decomps, n_circuits, shots_per_circuit, rng, keep_circuits, t)
                if keep_circuits:
                    kept.setdefault(L, []).append(est)
                vals.append(est.value)
                errs.append(est.std_error)
                costs.append(est.total_C)
            fid = (1 + outcome * np.array(vals)) / 2
            points.append(_point(L, fid, np.array(errs) / 2, float(np.mean(costs))))
        fids[L] = fid
    fit = fit_decay(points, n, fix_b=fix_b)
    return RBResult(n, mitigated, points, fit, dict(sequences), fids, kept)


# -- Pauli-assumption validation --------------------------------------------------------------


@dataclass
class PauliValidation:
    experimental: RBResult
    simulated: RBResult
    difference: float
    difference_err: float

    @property
    def significance(self) -> float:
        return self.difference / self.difference_err if self.difference_err > 0 else float("inf")

    def as_dict(self) -> dict:
        return {
            "experimental_rate": self.experimental.error_rate,
            "experimental_rate_err": self.experimental.fit.error_rate_err,
            "simulated_rate": self.simulated.error_rate,
            "simulated_rate_err": self.simulated.fit.error_rate_err,
            "difference": self.difference,
            "difference_err": self.difference_err,
        }


def _refit(result: RBResult, keep: np.ndarray, fix_b) -> float:
    pts = []
    for pt in result.points:
        f = result.fidelities[pt.L][keep]
        pts.append(RBPoint(pt.L, float(np.mean(f)), float(np.std(f, ddof=1) / np.sqrt(len(f))), len(f)))
    return fit_decay(pts, result.n, fix_b=fix_b).error_rate


def validate_pauli_assumption(
    device: DeviceSpec,
    characterized,
    lengths: Sequence[int],
    count: int,
    shots: int = 1000,
    seed: int | None = None,
    stream=("validate",),
    fix_b: float | None = 0.5,
) -> PauliValidation:
    """Compare shot-sampled RB on ``device`` with exact RB on the characterized model.

    Both runs use the same sequences.  The uncertainty of the rate
    difference is a leave-one-sequence-out jackknife over the paired data,
    so sequence-to-sequence spread common to both runs cancels.
    """
    seed = device.seed if seed is None else seed
    seqs = sequences_for(device.n, lengths, count, seed, stream)
    exp = run_rb(device, lengths, count, shots, seed=seed, stream=stream, sequences=seqs, fix_b=fix_b)
    sim = run_rb(characterized, lengths, count, None, seed=seed, stream=stream, sequences=seqs, fix_b=fix_b)
    diff = exp.error_rate - sim.error_rate
    if count >= 3:
        jack = []
        for drop in range(count):
            keep = np.arange(count) != drop
            jack.append(_refit(exp, keep, fix_b) - _refit(sim, keep, fix_b))
        jack = np.array(jack)
        err = float(np.sqrt((count - 1) / count * np.sum((jack - jack.mean()) ** 2)))
    else:
        err = float(np.hypot(exp.fit.error_rate_err, sim.fit.error_rate_err))
    return PauliValidation(exp, sim, float(diff), err)


# -- crosstalk ------------------------------------------------------------------------


@dataclass(frozen=True)
class FidelityPoint:
    ratio: float
    gate: str
    raw: float
    mitigated: float


def mitigated_state_fidelity(device: DeviceSpec, gate: str, decomps: Decompositions) -> tuple[float, float]:
    """Raw and mitigated output-state fidelity of ``gate`` on ``|0...0>``.

    The mitigated map applies the true (crosstalk-affected) gate followed
    by the decomposition's compensation basis as characterized.
    """
    ideal_out = pauli.ideal_ptm(gate) @ pauli.zero_state(device.n)
    true = device.ptm(gate)
    d = decomps[gate]
    correction = sum(q * decomps.model.ptm(lab) for q, lab in zip(d.coefficients, d.labels))
    start = pauli.zero_state(device.n)
    raw = float(ideal_out @ true @ start)
    mit = float(ideal_out @ correction @ true @ start)
    return raw, mit


def state_fidelity_sweep(device: DeviceSpec, ratios: Sequence[float], gates: Sequence[str] = ("MS_YY", "MS_ZZ")) -> list[FidelityPoint]:
    """Fidelities versus crosstalk ratio, mitigating with the crosstalk-free characterization."""
    reference = Decompositions(device.replace(crosstalk_ratio=0.0), gates)
    out = []
    for r in ratios:
        dev = device.replace(crosstalk_ratio=float(r))
        for g in gates:
            raw, mit = mitigated_state_fidelity(dev, g, reference)
            out.append(FidelityPoint(float(r), g, raw, mit))
    return out


def crosstalk_error(device: DeviceSpec, ratio: float, gate: str = "MS_ZZ") -> float:
    """Mitigated infidelity of ``gate`` caused by crosstalk at ``ratio``."""
    reference = Decompositions(device.replace(crosstalk_ratio=0.0), [gate])
    _, mit = mitigated_state_fidelity(device.replace(crosstalk_ratio=float(ratio)), gate, reference)
    return 1.0 - mit


def calibrate_crosstalk(device: DeviceSpec, target: float = 0.68e-3, gate: str = "MS_ZZ", upper: float = 0.5) -> float:
    """Crosstalk ratio at which the mitigated ``gate`` infidelity equals ``target``."""
    f = lambda r: crosstalk_error(device, r, gate) - target  # noqa: E731
    if f(upper) < 0:
        raise ValueError(f"crosstalk error stays below {target:g} up to ratio {upper:g}")
    return float(optimize.brentq(f, 0.0, upper, xtol=1e-14, rtol=1e-14))
