"""Stage orchestration: characterize, decompose, benchmark, validate, sweep, report.

Each stage writes plain-text artifacts under its own directory of the
output folder and reads upstream stages only through those files, so stages
can be run one at a time.  All randomness derives from the configured seed
through per-stage named streams.
"""

from __future__ import annotations

import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, gst, pauli
from .config import REQUIRES, STAGES, PipelineConfig, device_to_dict
from .device import DeviceError, DeviceSpec, PauliChannel
from .io import read_json, read_table, write_json, write_table
from .pec import SamplingError
from .qpd import DecompositionError, Decompositions, pauli_name
from .rb import (
    COMPUTATIONAL,
    INTERLEAVED,
    FitError,
    GenerationError,
    RBResult,
    calibrate_crosstalk,
    crosstalk_error,
    run_rb,
    sequences_for,
    state_fidelity_sweep,
    validate_pauli_assumption,
)

log = logging.getLogger(__name__)

STAGE_DIRS = {
    "gst": "gst",
    "qpd": "qpd",
    "rb-raw": "rb_raw",
    "rb-mitigated": "rb_mitigated",
    "validate": "validate",
    "crosstalk-sweep": "crosstalk",
}
# the file whose presence marks a finished stage
STAGE_MARKERS = {
    "gst": "rates.json",
    "qpd": "decompositions.json",
    "rb-raw": "fit.json",
    "rb-mitigated": "fits.json",
    "validate": "validation.json",
    "crosstalk-sweep": "calibration.json",
}
REPORT_FILE = "report.json"
METADATA_FILE = "metadata.json"
RESIDUAL_SOURCES = ("pauli-model gap", "crosstalk", "drift")
# errors a stage turns into a StageError instead of a traceback
_EXPECTED = (gst.GstError, DecompositionError, SamplingError, FitError, GenerationError, DeviceError, ValueError, np.linalg.LinAlgError)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


class MissingArtifactError(StageError):
    pass


def stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.output_dir / STAGE_DIRS[stage]


def _require(cfg: PipelineConfig, stage: str, needed: str) -> Path:
    path = stage_dir(cfg, needed) / STAGE_MARKERS[needed]
    if not path.is_file():
        raise MissingArtifactError(stage, f"needs output of stage {needed!r} ({path} not found); run `pecsim run --stage {needed}` first")
    return path


def _run_progress(cfg: PipelineConfig, lengths) -> dict[int, float] | None:
    # a drifting device ramps across the benchmark, lengths in execution order
    if cfg.device.drift is None or cfg.device.drift.amount == 0 or len(lengths) < 2:
        return None
    return {L: k / (len(lengths) - 1) for k, L in enumerate(lengths)}


def _write_device(cfg: PipelineConfig) -> None:
    write_json(cfg.output_dir / "device.json", {"reference": cfg.device_ref, "device": device_to_dict(cfg.device)})


# -- gst ---------------------------------------------------------------------------


def _rates_doc(est: gst.GstEstimate) -> dict:
    return {
        "gates": {g: ch.as_dict() for g, ch in est.gate_rates.items()},
        "state": est.state_params,
        "gram": est.gram,
        "log_likelihood": est.log_likelihood,
        "converged": est.converged,
    }


def _dataset_rows(group: str, data: gst.GstDataset):
    for s, shots, zeros, freq in zip(data.settings, data.shots, data.zeros, data.freqs):
        i, j, k = s.key
        yield (group, i, j, k, " ".join(s.gate_sequence), int(shots), float(zeros), float(freq))


def _ptm_rows(group: str, ptms: dict[str, np.ndarray]):
    for g, m in ptms.items():
        ideal = pauli.ideal_ptm(g)
        labels = pauli.pauli_labels(1 if m.shape[0] == 4 else 2)
        for r in range(m.shape[0]):
            for c in range(m.shape[1]):
                yield (group, g, labels[r], labels[c], float(m[r, c]), float(ideal[r, c]), float(m[r, c] - ideal[r, c]))


def stage_gst(cfg: PipelineConfig) -> dict:
    b = cfg.budgets["gst"]
    out = stage_dir(cfg, "gst")
    dev = cfg.device
    if dev.n == 1:
        data, est = gst.characterize_single_qubit(dev, b["shots"], stream=("gst",), exact=b["exact"])
        datasets, singles, ms = {"q0": data}, [est], None
        ptms = {"q0": est.ptms()}
    else:
        datasets, two = gst.characterize_two_qubit(dev, b["shots"], b["ms_shots"], stream=("gst",), exact=b["exact"])
        singles, ms = list(two.singles), two.ms_yy
        model = two.model()
        ptms = {"q0": singles[0].ptms(), "q1": singles[1].ptms(), "ms": {g: model.ptm(g) for g in ("MS_YY", "MS_ZZ")}}
    cols = ("group", "init", "gate", "meas", "sequence", "shots", "zeros", "frequency")
    rows = [r for group, data in datasets.items() for r in _dataset_rows(group, data)]
    write_table(out / "dataset.tsv", cols, rows, ["readout-corrected zero-outcome frequency per setting; gate -1 marks SPAM settings"])
    gram_rows = []
    for q, est in enumerate(singles):
        for r, obs in enumerate(gst.GRAM_ROWS):
            gram_rows.append((f"q{q}", obs, *[float(x) for x in est.gram[r]]))
    write_table(out / "gram.tsv", ("group", "observable", "F0", "F1", "F2", "F3"), gram_rows, ["expectation of each observable on each fiducial-prepared state"])
    ptm_rows = [r for group, table in ptms.items() for r in _ptm_rows(group, table)]
    write_table(out / "ptm_diff.tsv", ("group", "gate", "row", "col", "estimated", "ideal", "difference"), ptm_rows)
    doc = {"n": dev.n, "qubits": [_rates_doc(e) for e in singles]}
    if ms is not None:
        doc["ms_yy"] = ms.as_dict()
    write_json(out / "rates.json", doc)
    return {"settings": sum(len(d) for d in datasets.values()), "converged": all(e.converged for e in singles)}


def _estimate_from_doc(doc: dict) -> gst.GstEstimate:
    labels = pauli.pauli_labels(1)
    rates = {g: PauliChannel(np.array([r[lab] for lab in labels])) for g, r in doc["gates"].items()}
    return gst.GstEstimate(rates, np.array(doc["state"]), np.array(doc["gram"]), doc["log_likelihood"], doc["converged"])


def load_characterization(output_dir: Path):
    """Characterized gate-set model rebuilt from ``gst/rates.json``."""
    doc = read_json(Path(output_dir) / STAGE_DIRS["gst"] / STAGE_MARKERS["gst"])
    singles = [_estimate_from_doc(q) for q in doc["qubits"]]
    if doc["n"] == 1:
        return singles[0].model()
    ms = PauliChannel(np.array([doc["ms_yy"][lab] for lab in pauli.pauli_labels(2)]))
    return gst.TwoQubitEstimate((singles[0], singles[1]), ms).model()


# -- qpd ---------------------------------------------------------------------------


def benchmark_gates(n: int) -> tuple[str, ...]:
    return tuple(COMPUTATIONAL[n]) + tuple(INTERLEAVED[n])


def _decomposition_model(cfg: PipelineConfig, source: str):
    if source == "true":
        # oracle: the device's own Pauli noise, blind to crosstalk
        return cfg.device.replace(crosstalk_ratio=0.0, drift=None)
    return load_characterization(cfg.output_dir)


def stage_qpd(cfg: PipelineConfig) -> dict:
    source = cfg.budgets["qpd"]["model"]
    if source == "characterized":
        _require(cfg, "qpd", "gst")
    decomps = Decompositions(_decomposition_model(cfg, source), benchmark_gates(cfg.device.n))
    out = stage_dir(cfg, "qpd")
    write_json(out / "decompositions.json", {"model": source, **decomps.as_dict()})
    rows = [("state", decomps.state.one_norm, float(-decomps.state.coefficients[decomps.state.coefficients < 0].sum()))]
    for g, d in sorted(decomps.gates.items()):
        rows.append((g, d.one_norm, float(-d.coefficients[d.coefficients < 0].sum())))
    write_table(out / "costs.tsv", ("element", "C", "negative_mass"), rows, ["C is the 1-norm of the quasi-probability coefficients"])
    return {"model": source, "gates": len(decomps.gates), "max_C": max(r[1] for r in rows)}


def load_decompositions(cfg: PipelineConfig, stage: str) -> Decompositions:
    doc = read_json(_require(cfg, stage, "qpd"))
    source = doc["model"]
    if source == "characterized":
        _require(cfg, stage, "gst")
    decomps = Decompositions(_decomposition_model(cfg, source), benchmark_gates(cfg.device.n))
    for g, d in doc["gates"].items():
        if abs(decomps[g].one_norm - d["one_norm"]) > 1e-12:
            raise StageError(stage, f"qpd output is stale for gate {g!r}; rerun stage 'qpd'")
    return decomps


# -- benchmarks ------------------------------------------------------------------------


def _sequence_rows(result: RBResult, other: RBResult | None = None):
    for L, seqs in result.sequences.items():
        for k, s in enumerate(seqs):
            row = [L, k, s.ideal_outcome, float(result.fidelities[L][k])]
            if other is not None:
                row.append(float(other.fidelities[L][k]))
            yield (*row, " ".join(s.gates))


def stage_rb_raw(cfg: PipelineConfig) -> dict:
    b = cfg.budgets["rb-raw"]
    res = run_rb(cfg.device, b["lengths"], b["sequences"], b["shots"], seed=cfg.seed, stream=("rb-raw",), times=_run_progress(cfg, b["lengths"]))
    out = stage_dir(cfg, "rb-raw")
    write_table(out / "survival.tsv", ("L", "mean", "std_error", "n_sequences"), [(p.L, p.mean, p.std_error, p.n_sequences) for p in res.points])
    write_table(out / "sequences.tsv", ("L", "index", "ideal_outcome", "fidelity", "gates"), _sequence_rows(res))
    write_json(out / "fit.json", {"n": res.n, "fit": res.fit.as_dict()})
    return {"error_rate": res.error_rate}


def stage_rb_mitigated(cfg: PipelineConfig) -> dict:
    b = cfg.budgets["rb-mitigated"]
    decomps = load_decompositions(cfg, "rb-mitigated")
    dev, lengths, stream = cfg.device, b["lengths"], ("rb-mitigated",)
    times = _run_progress(cfg, lengths)
    seqs = sequences_for(dev.n, lengths, b["sequences"], cfg.seed, stream)
    raw = run_rb(dev, lengths, b["sequences"], b["shots"], seed=cfg.seed, stream=stream, sequences=seqs, times=times)
    mit = run_rb(
        dev,
        lengths,
        b["sequences"],
        mitigated=True,
        decomps=decomps,
        n_circuits=b["circuits"],
        shots_per_circuit=b["shots_per_circuit"],
        seed=cfg.seed,
        stream=stream,
        sequences=seqs,
        times=times,
        keep_circuits=b["record_circuits"],
    )
    out = stage_dir(cfg, "rb-mitigated")
    cols = ("L", "raw_mean", "raw_std_error", "mitigated_mean", "mitigated_std_error", "n_sequences", "total_C")
    rows = [(r.L, r.mean, r.std_error, m.mean, m.std_error, m.n_sequences, m.total_C) for r, m in zip(raw.points, mit.points)]
    write_table(out / "survival.tsv", cols, rows, ["mitigated means are unclipped; total_C is the mean sampling cost per sequence"])
    write_table(out / "sequences.tsv", ("L", "index", "ideal_outcome", "raw_fidelity", "mitigated_fidelity", "gates"), _sequence_rows(raw, mit))
    if b["record_circuits"]:
        _write_circuits(out / "circuits.tsv", mit, decomps)
    # a mitigated rate at or below zero has no finite ratio
    suppression = raw.error_rate / mit.error_rate if mit.error_rate > 0 else None
    write_json(out / "fits.json", {"n": dev.n, "raw": raw.fit.as_dict(), "mitigated": mit.fit.as_dict(), "suppression": suppression})
    return {"raw_rate": raw.error_rate, "mitigated_rate": mit.error_rate}


def _write_circuits(path: Path, result: RBResult, decomps: Decompositions) -> None:
    names = [pauli_name(lab) for lab in decomps.compensation]

    def rows():
        for L, ests in result.estimates.items():
            for k, est in enumerate(ests):
                c = est.circuits
                for i, comp, sign, zeros in zip(c.init, c.compensation, c.sign, est.zeros):
                    yield (L, k, int(i), " ".join(names[b] for b in comp), int(sign), int(zeros), est.shots_per_circuit)

    write_table(path, ("L", "sequence", "init", "compensation", "sign", "zeros", "shots"), rows(), ["one sampled circuit per line; init indexes the preparation fiducials"])


def stage_validate(cfg: PipelineConfig) -> dict:
    _require(cfg, "validate", "gst")
    b = cfg.budgets["validate"]
    model = load_characterization(cfg.output_dir)
    v = validate_pauli_assumption(cfg.device, model, b["lengths"], b["sequences"], b["shots"], seed=cfg.seed, stream=("validate",))
    out = stage_dir(cfg, "validate")
    rows = [(e.L, e.mean, e.std_error, s.mean, s.std_error) for e, s in zip(v.experimental.points, v.simulated.points)]
    write_table(out / "survival.tsv", ("L", "experimental_mean", "experimental_std_error", "simulated_mean", "simulated_std_error"), rows)
    write_json(out / "validation.json", {**v.as_dict(), "significance": v.significance})
    return {"difference": v.difference, "difference_err": v.difference_err}


def stage_crosstalk(cfg: PipelineConfig) -> dict:
    if cfg.device.n != 2:
        raise StageError("crosstalk-sweep", "the crosstalk sweep needs a two-qubit device")
    b = cfg.budgets["crosstalk-sweep"]
    pts = state_fidelity_sweep(cfg.device, b["ratios"], b["gates"])
    out = stage_dir(cfg, "crosstalk-sweep")
    write_table(out / "sweep.tsv", ("ratio", "gate", "raw_fidelity", "mitigated_fidelity"), [(p.ratio, p.gate, p.raw, p.mitigated) for p in pts])
    calibrated = calibrate_crosstalk(cfg.device, b["target_error"])
    doc = {
        "target_error": b["target_error"],
        "calibrated_ratio": calibrated,
        "device_ratio": cfg.device.crosstalk_ratio,
        "device_error": crosstalk_error(cfg.device, cfg.device.crosstalk_ratio),
        "gate": "MS_ZZ",
    }
    write_json(out / "calibration.json", doc)
    return {"calibrated_ratio": calibrated}


STAGE_FUNCS: dict[str, Callable[[PipelineConfig], dict]] = {
    "gst": stage_gst,
    "qpd": stage_qpd,
    "rb-raw": stage_rb_raw,
    "rb-mitigated": stage_rb_mitigated,
    "validate": stage_validate,
    "crosstalk-sweep": stage_crosstalk,
}


def order_stages(stages) -> list[str]:
    """Requested stages in dependency order, duplicates removed."""
    wanted = set(stages)
    return [s for s in STAGES if s in wanted]


def run_stage(cfg: PipelineConfig, stage: str) -> dict:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for needed in REQUIRES.get(stage, ()):
        if stage == "qpd" and cfg.budgets["qpd"]["model"] == "true":
            continue
        _require(cfg, stage, needed)
    _write_device(cfg)
    log.info("running stage %s", stage)
    try:
        return STAGE_FUNCS[stage](cfg)
    except StageError:
        raise
    except _EXPECTED as exc:
        raise StageError(stage, str(exc)) from exc


def write_metadata(cfg: PipelineConfig, stages, argv=None) -> Path:
    """Run metadata (timestamps, versions); the only non-deterministic output."""
    return write_json(
        cfg.output_dir / METADATA_FILE,
        {
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "pecsim_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "argv": list(argv if argv is not None else sys.argv),
            "config": cfg.source,
            "stages": list(stages),
        },
    )


# -- report ------------------------------------------------------------------------


def _maybe_json(path: Path) -> dict | None:
    return read_json(path) if path.is_file() else None


def _gate_errors(rates: dict) -> dict:
    out = {}
    for q, doc in enumerate(rates["qubits"]):
        out[f"q{q}"] = {g: 1.0 - r["I"] for g, r in doc["gates"].items()}
    if "ms_yy" in rates:
        out["MS_YY"] = 1.0 - rates["ms_yy"]["II"]
    return out


def build_report(output_dir: Path) -> dict:
    """Summary of whatever stage outputs exist under ``output_dir``."""
    output_dir = Path(output_dir)
    files = {s: output_dir / STAGE_DIRS[s] / STAGE_MARKERS[s] for s in STAGES}
    present = [s for s in STAGES if files[s].is_file()]
    report: dict = {"stages": present}
    device = _maybe_json(output_dir / "device.json")
    if device:
        report["device"] = {"reference": device["reference"], "n": device["device"]["n"], "crosstalk_ratio": device["device"]["crosstalk_ratio"]}
    if "gst" in present:
        rates = read_json(files["gst"])
        report["physical_gate_errors"] = _gate_errors(rates)
    if "qpd" in present:
        _, rows = read_table(output_dir / STAGE_DIRS["qpd"] / "costs.tsv")
        report["costs"] = {r[0]: float(r[1]) for r in rows}
    rates_out: dict = {}
    if "rb-raw" in present:
        fit = read_json(files["rb-raw"])["fit"]
        rates_out["raw_benchmark"] = {"rate": fit["error_rate"], "err": fit["error_rate_err"]}
    if "rb-mitigated" in present:
        fits = read_json(files["rb-mitigated"])
        rates_out["physical"] = {"rate": fits["raw"]["error_rate"], "err": fits["raw"]["error_rate_err"]}
        rates_out["effective"] = {"rate": fits["mitigated"]["error_rate"], "err": fits["mitigated"]["error_rate_err"]}
        rates_out["suppression"] = fits["suppression"]
        _, rows = read_table(output_dir / STAGE_DIRS["rb-mitigated"] / "survival.tsv")
        report["total_C_per_length"] = {r[0]: float(r[6]) for r in rows}
    if rates_out:
        report["error_rates"] = rates_out
    report["residual_breakdown"] = _residuals(output_dir, files, present, device)
    return report


def _residuals(output_dir: Path, files: dict, present: list, device: dict | None) -> list[dict]:
    rows = {s: {"source": s, "value": None, "err": None, "basis": "not measured"} for s in RESIDUAL_SOURCES}
    if "validate" in present:
        v = read_json(files["validate"])
        rows["pauli-model gap"].update(value=v["difference"], err=v["difference_err"], basis="sampled minus characterized-model RB error rate")
    if "crosstalk-sweep" in present:
        c = read_json(files["crosstalk-sweep"])
        rows["crosstalk"].update(value=c["device_error"], err=0.0, basis="mitigated MS_ZZ infidelity from crosstalk at the device ratio")
    elif device is not None and device["device"]["crosstalk_ratio"] == 0:
        rows["crosstalk"].update(value=0.0, err=0.0, basis="device has no crosstalk")
    if device is not None:
        drift = device["device"].get("drift")
        amount = drift["amount"] if drift else 0.0
        # linear ramp over the benchmark after characterization at its start
        rows["drift"].update(value=amount / 2, err=0.0, basis="mean added Pauli error per gate over the benchmark run")
    return [rows[s] for s in RESIDUAL_SOURCES]


def write_report(output_dir: Path) -> Path:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    return write_json(output_dir / REPORT_FILE, build_report(output_dir))


def check_thresholds(cfg: PipelineConfig) -> list[str]:
    """Messages for every configured threshold the current outputs violate."""
    failures = []
    th = cfg.thresholds
    fits = _maybe_json(stage_dir(cfg, "rb-mitigated") / STAGE_MARKERS["rb-mitigated"])
    if fits is not None:
        rate = fits["mitigated"]["error_rate"]
        if "max_mitigated_rate" in th and rate > th["max_mitigated_rate"]:
            failures.append(f"mitigated error rate {rate:.3g} exceeds {th['max_mitigated_rate']:g}")
        raw_rate = fits["raw"]["error_rate"]
        if "min_suppression" in th and rate * th["min_suppression"] > raw_rate:
            failures.append(f"mitigated rate {rate:.3g} is not {th['min_suppression']:g}x below raw {raw_rate:.3g}")
    val = _maybe_json(stage_dir(cfg, "validate") / STAGE_MARKERS["validate"])
    if val is not None and "max_validation_sigma" in th and abs(val["significance"]) > th["max_validation_sigma"]:
        failures.append(f"validation difference at {val['significance']:.2f} sigma exceeds {th['max_validation_sigma']:g}")
    missing = [k for k, stage in (("max_mitigated_rate", "rb-mitigated"), ("min_suppression", "rb-mitigated"), ("max_validation_sigma", "validate")) if k in th and not (stage_dir(cfg, stage) / STAGE_MARKERS[stage]).is_file()]
    failures += [f"threshold {k} set but its stage has no output" for k in missing]
    return failures


def run_pipeline(cfg: PipelineConfig, stages=None, argv=None) -> dict:
    """Run ``stages`` (default: the configured ones) in order, then the report."""
    todo = order_stages(stages if stages else cfg.stages)
    summaries = {}
    for s in todo:
        summaries[s] = run_stage(cfg, s)
    write_report(cfg.output_dir)
    write_metadata(cfg, todo, argv)
    return summaries
