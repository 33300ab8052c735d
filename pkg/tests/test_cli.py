import filecmp
import shutil
import subprocess
import sys

import pytest

from pecsim import io
from pecsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, EXIT_THRESHOLD, main
from pecsim.pipeline import METADATA_FILE, REPORT_FILE, RESIDUAL_SOURCES, build_report

SMALL_ONE = """\
device: single-qubit-paper
seed: 5
output_dir: out
rb-raw: {lengths: [2, 4, 8], sequences: 4, shots: 200}
rb-mitigated: {lengths: [2, 4, 8], sequences: 3, circuits: 100, shots_per_circuit: 20}
validate: {lengths: [2, 4, 8], sequences: 4, shots: 200}
"""

SMALL_TWO = """\
device: two-qubit-paper
seed: 2
output_dir: out
rb-raw: {lengths: [1, 2, 3], sequences: 3, shots: 200}
rb-mitigated: {lengths: [1, 2, 3], sequences: 2, circuits: 100, shots_per_circuit: 20}
validate: {lengths: [1, 2, 3], sequences: 4, shots: 200}
crosstalk-sweep: {ratios: [0.0, 0.01, 0.02]}
"""


def write(tmp_path, text, name="pecsim.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def snapshot(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file() and p.name != METADATA_FILE)


@pytest.fixture(scope="module")
def one_qubit_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("one")
    cfg = write(root, SMALL_ONE)
    assert main(["run", "--config", cfg]) == EXIT_OK
    return root, cfg


def test_presets_command(capsys):
    assert main(["presets"]) == EXIT_OK
    assert capsys.readouterr().out.split() == ["noiseless", "single-qubit-paper", "two-qubit-paper"]


def test_run_writes_every_stage(one_qubit_run):
    root, _ = one_qubit_run
    out = root / "out"
    for rel in ["gst/dataset.tsv", "gst/rates.json", "gst/gram.tsv", "gst/ptm_diff.tsv", "qpd/decompositions.json", "qpd/costs.tsv",
                "rb_raw/survival.tsv", "rb_raw/fit.json", "rb_mitigated/survival.tsv", "rb_mitigated/circuits.tsv",
                "rb_mitigated/fits.json", "validate/validation.json", REPORT_FILE, METADATA_FILE, "device.json"]:
        assert (out / rel).is_file(), rel
    cols, rows = io.read_table(out / "gst" / "dataset.tsv")
    assert len(rows) == 132 + 12
    rates = io.read_json(out / "gst" / "rates.json")
    assert len(rates["qubits"][0]["gates"]) == 11
    cols, rows = io.read_table(out / "rb_mitigated" / "survival.tsv")
    assert "total_C" in cols and len(rows) == 3


def test_rerun_is_byte_identical(one_qubit_run, tmp_path):
    root, _ = one_qubit_run
    cfg = write(tmp_path, SMALL_ONE)
    assert main(["run", "--config", cfg]) == EXIT_OK
    a, b = root / "out", tmp_path / "out"
    assert snapshot(a) == snapshot(b)
    for rel in snapshot(a):
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_seed_override_changes_data(one_qubit_run, tmp_path):
    root, _ = one_qubit_run
    cfg = write(tmp_path, SMALL_ONE)
    assert main(["rb", "--config", cfg, "--seed", "6"]) == EXIT_OK
    assert (tmp_path / "out/rb_raw/survival.tsv").read_bytes() != (root / "out/rb_raw/survival.tsv").read_bytes()


def test_report_is_idempotent(one_qubit_run):
    root, cfg = one_qubit_run
    report = root / "out" / REPORT_FILE
    before = report.read_bytes()
    assert main(["report", "--config", cfg]) == EXIT_OK
    assert report.read_bytes() == before
    doc = io.read_json(report)
    assert doc["error_rates"]["physical"]["rate"] > 0
    assert [r["source"] for r in doc["residual_breakdown"]] == list(RESIDUAL_SOURCES)


def test_report_on_empty_directory(tmp_path):
    cfg = write(tmp_path, "device: noiseless\noutput_dir: empty\n")
    assert main(["report", "--config", cfg]) == EXIT_OK
    doc = io.read_json(tmp_path / "empty" / REPORT_FILE)
    assert doc["stages"] == []
    assert len(doc["residual_breakdown"]) == 3
    assert build_report(tmp_path / "nothing-here")["stages"] == []


@pytest.mark.parametrize("flag", [["--shots", "0"], ["--circuits", "1"], ["--seed", "-1"]])
def test_bad_flags_are_config_errors(tmp_path, flag, capsys):
    cfg = write(tmp_path, SMALL_ONE)
    assert main(["characterize", "--config", cfg, *flag]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_config_reports_line(tmp_path, capsys):
    cfg = write(tmp_path, "device: single-qubit-paper\ngst:\n  shots: -3\n")
    assert main(["characterize", "--config", cfg]) == EXIT_CONFIG
    assert f"{cfg}:3: gst.shots" in capsys.readouterr().err


def test_missing_config(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("PECSIM_CONFIG_PATH", raising=False)
    assert main(["rb"]) == EXIT_CONFIG


def test_env_var_finds_config(tmp_path, monkeypatch):
    write(tmp_path, "device: noiseless\noutput_dir: out\nrb-raw: {lengths: [2, 3, 4], sequences: 2, shots: 10}\n")
    monkeypatch.chdir(tmp_path.parent)
    monkeypatch.setenv("PECSIM_CONFIG_PATH", str(tmp_path))
    assert main(["rb"]) == EXIT_OK
    assert (tmp_path / "out" / "rb_raw" / "fit.json").is_file()


def test_missing_upstream_names_stage(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_ONE)
    assert main(["mitigate-rb", "--config", cfg]) == EXIT_STAGE
    err = capsys.readouterr().err
    assert "stage 'rb-mitigated'" in err and "pecsim run --stage qpd" in err
    assert main(["decompose", "--config", cfg]) == EXIT_STAGE
    assert "--stage gst" in capsys.readouterr().err


def test_threshold_failure_exit_code(one_qubit_run, tmp_path, capsys):
    root, _ = one_qubit_run
    shutil.copytree(root / "out", tmp_path / "out")
    cfg = write(tmp_path, SMALL_ONE + "thresholds: {max_validation_sigma: 0}\n")
    assert main(["report", "--config", cfg]) == EXIT_OK
    assert main(["validate", "--config", cfg]) == EXIT_THRESHOLD
    assert "threshold failed: validation difference" in capsys.readouterr().err
    loose = write(tmp_path, SMALL_ONE + "thresholds: {max_validation_sigma: 1000}\n", "loose.yaml")
    assert main(["validate", "--config", loose]) == EXIT_OK


def test_unmeasured_threshold_fails(tmp_path, capsys):
    cfg = write(tmp_path, "device: noiseless\noutput_dir: out\nthresholds: {max_validation_sigma: 3}\nrb-raw: {lengths: [2, 3, 4], sequences: 2, shots: 10}\n")
    assert main(["rb", "--config", cfg]) == EXIT_THRESHOLD
    assert "no output" in capsys.readouterr().err


def test_stage_failure_exit_code(tmp_path, capsys):
    # a single-qubit device cannot run the crosstalk sweep
    cfg = write(tmp_path, "device: noiseless\noutput_dir: out\n")
    assert main(["sweep-crosstalk", "--config", cfg]) == EXIT_STAGE
    assert "stage 'crosstalk-sweep' failed" in capsys.readouterr().err


def test_two_qubit_report_has_three_residual_rows(tmp_path):
    cfg = write(tmp_path, SMALL_TWO)
    assert main(["run", "--config", cfg, "--shots", "20000"]) == EXIT_OK
    doc = io.read_json(tmp_path / "out" / REPORT_FILE)
    rows = {r["source"]: r for r in doc["residual_breakdown"]}
    assert list(rows) == list(RESIDUAL_SOURCES)
    assert rows["pauli-model gap"]["value"] is not None
    assert rows["crosstalk"]["value"] > 0
    assert rows["drift"]["value"] == 0.0
    assert "MS_YY" in doc["physical_gate_errors"]
    cal = io.read_json(tmp_path / "out/crosstalk/calibration.json")
    assert cal["device_error"] == pytest.approx(0.68e-3, rel=1e-6)


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("pecsim")
    cmd = [exe] if exe else [sys.executable, "-m", "pecsim.cli"]
    done = subprocess.run([*cmd, "presets"], capture_output=True, text=True)
    assert done.returncode == 0 and "two-qubit-paper" in done.stdout
    done = subprocess.run([*cmd, "rb", "--config", str(tmp_path / "absent.yaml")], capture_output=True, text=True)
    assert done.returncode == EXIT_CONFIG
