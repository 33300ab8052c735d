"""YAML configuration for devices and pipeline runs.

Schema problems are reported as ``ConfigError`` with the file and line of
the offending entry.  Device presets ship as package data and are referenced
by name.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import pauli
from .device import DeviceSpec, Drift, PauliChannel, make_device
from .pauli import GATE_SET_1

CONFIG_PATH_ENV = "PECSIM_CONFIG_PATH"
DEFAULT_CONFIG_NAME = "pecsim.yaml"
STAGES = ("gst", "qpd", "rb-raw", "rb-mitigated", "validate", "crosstalk-sweep")
# stage -> stages whose outputs it reads
REQUIRES = {"qpd": ("gst",), "rb-mitigated": ("qpd",), "validate": ("gst",)}


class ConfigError(ValueError):
    pass


# -- located YAML -------------------------------------------------------------


class Located:
    """Parsed YAML plus the source line of every mapping key and list item."""

    def __init__(self, text: str, source: str = "<config>"):
        self.source = source
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{source}:{mark.line + 1}" if mark else source
            raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
        self.lines: dict[tuple, int] = {}
        if root is not None:
            self._walk(root, ())

    def _walk(self, node, path: tuple) -> None:
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = path + (key.value,)
                self._walk(value, sub)
                self.lines[sub] = key.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for idx, item in enumerate(node.value):
                self._walk(item, path + (idx,))

    def line(self, path: tuple) -> int | None:
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path: tuple, message: str) -> ConfigError:
        line = self.line(path)
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(p) for p in path) or "<root>"
        return ConfigError(f"{where}: {dotted}: {message}")


def _load(path: Path) -> Located:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return Located(text, str(path))


class _Checker:
    def __init__(self, doc: Located, base: tuple = ()):
        self.doc = doc
        self.base = base

    def fail(self, path: tuple, message: str):
        raise self.doc.error(self.base + path, message)

    def mapping(self, value, path: tuple, allowed) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        for key in value:
            if key not in allowed:
                self.fail(path + (key,), f"unknown key {key!r}; expected one of {sorted(allowed)}")
        return value

    def number(self, value, path: tuple, lo: float | None = None, hi: float | None = None) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            self.fail(path, f"value {value!r} outside [{lo}, {hi}]")
        return float(value)

    def integer(self, value, path: tuple, lo: int | None = None) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {value}")
        return int(value)

    def vector(self, value, path: tuple, length: int) -> list[float]:
        if not isinstance(value, list) or len(value) != length:
            self.fail(path, f"expected a list of {length} numbers")
        return [self.number(v, path + (i,)) for i, v in enumerate(value)]

    def int_list(self, value, path: tuple, lo: int = 1) -> list[int]:
        if not isinstance(value, list) or not value:
            self.fail(path, "expected a non-empty list of integers")
        return [self.integer(v, path + (i,), lo) for i, v in enumerate(value)]


# -- devices --------------------------------------------------------------------

DEVICE_KEYS = {"name", "n", "seed", "gates", "ms_yy", "prep_bloch", "measure_zero", "readout_confusion", "crosstalk_ratio", "drift"}


def preset_names() -> list[str]:
    files = resources.files("pecsim").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".yaml"))


def _preset_doc(name: str) -> Located:
    ref = resources.files("pecsim").joinpath("presets", f"{name}.yaml")
    if not ref.is_file():
        raise ConfigError(f"unknown device preset {name!r}; available: {', '.join(preset_names())}")
    return Located(ref.read_text(), f"preset:{name}")


def load_preset(name: str) -> DeviceSpec:
    doc = _preset_doc(name)
    return parse_device(doc.data, doc)


def _channel(ck: _Checker, value, path: tuple, n: int) -> PauliChannel:
    labels = pauli.pauli_labels(n)[1:]
    errors = ck.mapping(value, path, labels)
    rates = {k: ck.number(v, path + (k,), 0.0, 1.0) for k, v in errors.items()}
    if sum(rates.values()) > 1.0:
        ck.fail(path, "error rates sum above 1")
    return PauliChannel.from_errors(rates, n)


def parse_device(data: Mapping[str, Any], doc: Located | None = None, base: tuple = ()) -> DeviceSpec:
    """Build a :class:`DeviceSpec` from its mapping form (see :func:`device_to_dict`)."""
    ck = _Checker(doc or Located("", "<device>"), base)
    data = ck.mapping(data, (), DEVICE_KEYS)
    if "n" not in data:
        ck.fail((), "missing required key 'n'")
    n = ck.integer(data["n"], ("n",), 1)
    if n not in (1, 2):
        ck.fail(("n",), f"n must be 1 or 2, got {n}")
    gates = ck.mapping(data.get("gates"), ("gates",), [f"qubit{q}" for q in range(n)] if n == 2 else GATE_SET_1)
    per_qubit = []
    if n == 1:
        per_qubit.append({g: _channel(ck, v, ("gates", g), 1) for g, v in gates.items()})
    else:
        for q in range(2):
            key = f"qubit{q}"
            sub = ck.mapping(gates.get(key), ("gates", key), GATE_SET_1)
            per_qubit.append({g: _channel(ck, v, ("gates", key, g), 1) for g, v in sub.items()})
    ms = None
    if "ms_yy" in data:
        if n != 2:
            ck.fail(("ms_yy",), "ms_yy needs a two-qubit device")
        ms = _channel(ck, data["ms_yy"], ("ms_yy",), 2)
    prep = data.get("prep_bloch")
    if prep is not None:
        if not isinstance(prep, list) or len(prep) != n:
            ck.fail(("prep_bloch",), f"expected {n} Bloch vectors")
        prep = [ck.vector(v, ("prep_bloch", q), 3) for q, v in enumerate(prep)]
        for q, v in enumerate(prep):
            if np.linalg.norm(v) > 1 + 1e-12:
                ck.fail(("prep_bloch", q), "Bloch vector longer than 1")
    meas = data.get("measure_zero")
    if meas is not None:
        if not isinstance(meas, list) or len(meas) != n:
            ck.fail(("measure_zero",), f"expected {n} effect vectors")
        meas = [ck.vector(v, ("measure_zero", q), 4) for q, v in enumerate(meas)]
    conf = data.get("readout_confusion")
    if conf is not None:
        d = 2**n
        if not isinstance(conf, list) or len(conf) != d:
            ck.fail(("readout_confusion",), f"expected a {d}x{d} matrix")
        conf = np.array([ck.vector(r, ("readout_confusion", i), d) for i, r in enumerate(conf)])
        if np.any(conf < 0) or np.max(np.abs(conf.sum(axis=0) - 1)) > 1e-12:
            ck.fail(("readout_confusion",), "columns must be probability vectors")
    ratio = ck.number(data.get("crosstalk_ratio", 0.0), ("crosstalk_ratio",), 0.0)
    if ratio and n != 2:
        ck.fail(("crosstalk_ratio",), "crosstalk needs a two-qubit device")
    drift = None
    if data.get("drift") is not None:
        dd = ck.mapping(data["drift"], ("drift",), {"pauli", "amount"})
        label = dd.get("pauli", "Z")
        if label not in ("X", "Y", "Z") and not (len(label) == n and set(label) <= set("IXYZ")):
            ck.fail(("drift", "pauli"), f"invalid Pauli label {label!r}")
        drift = Drift(label, ck.number(dd.get("amount", 0.0), ("drift", "amount"), 0.0, 1.0))
    seed = ck.integer(data.get("seed", 0), ("seed",), 0)
    return make_device(
        n,
        per_qubit,
        ms_noise=ms,
        prep_bloch=prep,
        measure_zero=meas,
        readout_confusion=conf,
        crosstalk_ratio=ratio,
        seed=seed,
        drift=drift,
        name=str(data.get("name", "")),
    )


def _errors(channel: PauliChannel) -> dict[str, float]:
    return {k: v for k, v in channel.as_dict().items() if set(k) != {"I"}}


def device_to_dict(device: DeviceSpec) -> dict:
    """Mapping form of ``device``; :func:`parse_device` inverts it."""
    out: dict[str, Any] = {"name": device.name, "n": device.n, "seed": int(device.seed)}
    if device.n == 1:
        out["gates"] = {g: _errors(device.gate_noise[g]) for g in GATE_SET_1}
    else:
        out["gates"] = {f"qubit{q}": {g: _errors(device.gate_noise[f"{g}@{q}"]) for g in GATE_SET_1} for q in range(2)}
        out["ms_yy"] = _errors(device.gate_noise["MS_YY"])
    singles = [device.prep_state] if device.n == 1 else [pauli.marginal(device.prep_state, q) for q in range(2)]
    out["prep_bloch"] = [(v[1:] * np.sqrt(2)).tolist() for v in singles]
    out["measure_zero"] = [(e * np.sqrt(2)).tolist() for e in device.zero_effects]
    out["readout_confusion"] = device.readout_confusion.tolist()
    out["crosstalk_ratio"] = float(device.crosstalk_ratio)
    if device.drift is not None:
        out["drift"] = {"pauli": device.drift.pauli, "amount": device.drift.amount}
    return out


# -- pipeline configuration ----------------------------------------------------------

PIPELINE_KEYS = {"device", "seed", "output_dir", "stages", "gst", "qpd", "rb-raw", "rb-mitigated", "validate", "crosstalk-sweep", "thresholds"}
STAGE_KEYS = {
    "gst": {"shots", "ms_shots", "exact"},
    "qpd": {"model"},
    "rb-raw": {"lengths", "sequences", "shots"},
    "rb-mitigated": {"lengths", "sequences", "shots", "circuits", "shots_per_circuit", "record_circuits"},
    "validate": {"lengths", "sequences", "shots"},
    "crosstalk-sweep": {"ratios", "gates", "target_error"},
}
THRESHOLD_KEYS = {"max_mitigated_rate", "min_suppression", "max_validation_sigma"}


def default_budgets(n: int) -> dict[str, dict]:
    lengths = [2, 4, 8, 16, 32, 64] if n == 1 else [1, 2, 3, 4, 5, 6]
    return {
        "gst": {"shots": 1000000, "ms_shots": 1000000, "exact": False},
        "qpd": {"model": "characterized"},
        "rb-raw": {"lengths": lengths, "sequences": 20 if n == 1 else 10, "shots": 1000},
        "rb-mitigated": {
            "lengths": lengths,
            "sequences": 10 if n == 1 else 4,
            "shots": 1000,
            "circuits": 2000,
            "shots_per_circuit": 100,
            "record_circuits": True,
        },
        "validate": {"lengths": lengths, "sequences": 20, "shots": 1000},
        "crosstalk-sweep": {"ratios": [0.0, 0.005, 0.01, 0.015, 0.02, 0.025, 0.03], "gates": ["MS_YY", "MS_ZZ"], "target_error": 0.68e-3},
    }


@dataclass
class PipelineConfig:
    device: DeviceSpec
    device_ref: str
    seed: int
    output_dir: Path
    stages: list[str]
    budgets: dict[str, dict]
    thresholds: dict[str, float] = field(default_factory=dict)
    source: str = "<config>"


def find_config(path: str | None) -> Path:
    """Explicit path, else ``pecsim.yaml`` in the env search path, else the cwd."""
    if path:
        return Path(path)
    dirs = [d for d in os.environ.get(CONFIG_PATH_ENV, "").split(os.pathsep) if d]
    for d in dirs + ["."]:
        cand = Path(d) / DEFAULT_CONFIG_NAME
        if cand.is_file():
            return cand
    searched = ", ".join(dirs + ["."])
    raise ConfigError(f"no --config given and no {DEFAULT_CONFIG_NAME} found in {searched} (set {CONFIG_PATH_ENV})")


def load_config(path: Path) -> PipelineConfig:
    return parse_config(_load(path), Path(path))


def parse_config(doc: Located, path: Path | None = None) -> PipelineConfig:
    ck = _Checker(doc)
    data = ck.mapping(doc.data, (), PIPELINE_KEYS)
    if "device" not in data:
        ck.fail((), "missing required key 'device' (a preset name, a YAML path or an inline mapping)")
    ref = data["device"]
    if isinstance(ref, str):
        device = _device_from_ref(ref, path, ck)
    elif isinstance(ref, dict):
        device = parse_device(ref, doc, ("device",))
        ref = "inline"
    else:
        ck.fail(("device",), "expected a preset name, a path or a mapping")
    seed = ck.integer(data.get("seed", device.seed), ("seed",), 0)
    if seed >= 2**64:
        ck.fail(("seed",), "seed must fit in 64 bits")
    stages = data.get("stages", list(STAGES) if device.n == 2 else [s for s in STAGES if s != "crosstalk-sweep"])
    if not isinstance(stages, list):
        ck.fail(("stages",), "expected a list of stage names")
    for i, s in enumerate(stages):
        if s not in STAGES:
            ck.fail(("stages", i), f"unknown stage {s!r}; expected one of {list(STAGES)}")
    budgets = default_budgets(device.n)
    for stage, allowed in STAGE_KEYS.items():
        given = ck.mapping(data.get(stage), (stage,), allowed)
        budgets[stage].update(given)
    _check_budgets(ck, budgets)
    thresholds = ck.mapping(data.get("thresholds"), ("thresholds",), THRESHOLD_KEYS)
    thresholds = {k: ck.number(v, ("thresholds", k), 0.0) for k, v in thresholds.items()}
    base = path.parent if path is not None else Path(".")
    out = data.get("output_dir", "pecsim-output")
    if not isinstance(out, str):
        ck.fail(("output_dir",), "expected a path")
    return PipelineConfig(device.replace(seed=seed), str(ref), seed, base / out, list(stages), budgets, thresholds, doc.source)


def _device_from_ref(ref: str, path: Path | None, ck: _Checker) -> DeviceSpec:
    if ref.endswith((".yaml", ".yml")):
        file = (path.parent / ref) if path is not None else Path(ref)
        sub = _load(file)
        return parse_device(sub.data, sub)
    if ref not in preset_names():
        ck.fail(("device",), f"unknown device preset {ref!r}; available: {', '.join(preset_names())}")
    return load_preset(ref)


def _check_budgets(ck: _Checker, budgets: dict) -> None:
    for stage, b in budgets.items():
        for key, value in b.items():
            path = (stage, key)
            if key in ("shots", "ms_shots", "sequences", "circuits", "shots_per_circuit"):
                ck.integer(value, path, 2 if key in ("circuits", "sequences") else 1)
            elif key == "lengths":
                ck.int_list(value, path, 1)
            elif key in ("exact", "record_circuits"):
                if not isinstance(value, bool):
                    ck.fail(path, "expected true or false")
            elif key == "model":
                if value not in ("characterized", "true"):
                    ck.fail(path, "expected 'characterized' or 'true'")
            elif key == "ratios":
                if not isinstance(value, list) or not value:
                    ck.fail(path, "expected a non-empty list of ratios")
                for i, r in enumerate(value):
                    ck.number(r, path + (i,), 0.0)
            elif key == "gates":
                if not isinstance(value, list) or not set(value) <= {"MS_YY", "MS_ZZ"}:
                    ck.fail(path, "expected a list drawn from MS_YY, MS_ZZ")
            elif key == "target_error":
                ck.number(value, path, 0.0, 1.0)
