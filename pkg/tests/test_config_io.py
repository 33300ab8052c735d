import json

import numpy as np
import pytest

from pecsim import io
from pecsim.config import (
    CONFIG_PATH_ENV,
    ConfigError,
    Located,
    device_to_dict,
    find_config,
    load_config,
    load_preset,
    parse_config,
    parse_device,
    preset_names,
)


def test_presets_are_listed_and_load():
    assert preset_names() == ["noiseless", "single-qubit-paper", "two-qubit-paper"]
    assert load_preset("noiseless").n == 1
    two = load_preset("two-qubit-paper")
    assert two.n == 2 and two.crosstalk_ratio > 0


@pytest.mark.parametrize("name", ["single-qubit-paper", "two-qubit-paper", "noiseless"])
def test_device_dict_round_trip(name):
    dev = load_preset(name)
    again = parse_device(device_to_dict(dev))
    assert again.n == dev.n
    np.testing.assert_allclose(again.prep_state, dev.prep_state, atol=1e-15)
    labels = ["X+pi/2", "Y-pi"] if dev.n == 1 else ["MS_YY", "MS_ZZ", "X+pi/2|Y-pi"]
    for g in labels:
        np.testing.assert_allclose(again.ptm(g), dev.ptm(g), atol=1e-15)


def test_minimal_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("device: single-qubit-paper\nseed: 7\n")
    cfg = load_config(path)
    assert cfg.seed == 7 and cfg.device.seed == 7
    assert cfg.output_dir == tmp_path / "pecsim-output"
    assert "crosstalk-sweep" not in cfg.stages
    assert cfg.budgets["rb-raw"]["lengths"] == [2, 4, 8, 16, 32, 64]


def test_inline_device_and_budget_override():
    doc = Located(
        "device:\n  n: 1\n  gates:\n    X+pi/2: {X: 0.001}\nrb-raw:\n  shots: 50\n  lengths: [2, 3, 4]\n",
        "inline.yaml",
    )
    cfg = parse_config(doc)
    assert cfg.device_ref == "inline"
    assert cfg.device.channel("X+pi/2").rates[1] == pytest.approx(0.001)
    assert cfg.budgets["rb-raw"] == {"lengths": [2, 3, 4], "sequences": 20, "shots": 50}


def test_device_file_reference(tmp_path):
    (tmp_path / "dev.yaml").write_text("n: 1\nprep_bloch: [[0, 0, 0.99]]\n")
    (tmp_path / "run.yaml").write_text("device: dev.yaml\n")
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.device.prep_state[3] == pytest.approx(0.99 / np.sqrt(2))


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("device: single-qubit-paper\nrb-raw:\n  shots: 0\n", 3, "rb-raw.shots"),
        ("device: single-qubit-paper\nstages: [gst, plot]\n", 2, "unknown stage 'plot'"),
        ("device: single-qubit-paper\n\ngst:\n  shotz: 5\n", 4, "unknown key 'shotz'"),
        ("device: nowhere\n", 1, "unknown device preset"),
        ("device:\n  n: 1\n  gates:\n    X+pi/2: {X: 0.6, Y: 0.6}\n", 4, "device.gates.X+pi/2"),
        ("device: single-qubit-paper\nthresholds:\n  max_mitigated_rate: fast\n", 3, "expected a number"),
        ("device: [single\n", 2, "invalid YAML"),
        ("seed: 3\n", None, "missing required key 'device'"),
    ],
)
def test_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(Located(text, "bad.yaml"))
    msg = str(info.value)
    assert fragment in msg
    if line is not None:
        assert msg.startswith(f"bad.yaml:{line}:")


def test_find_config_order(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(ConfigError, match=CONFIG_PATH_ENV):
        find_config(None)
    (tmp_path / "pecsim.yaml").write_text("device: noiseless\n")
    assert find_config(None).resolve() == tmp_path / "pecsim.yaml"
    other = tmp_path / "elsewhere"
    other.mkdir()
    (other / "pecsim.yaml").write_text("device: noiseless\n")
    monkeypatch.setenv(CONFIG_PATH_ENV, str(other))
    assert find_config(None) == other / "pecsim.yaml"
    assert str(find_config("given.yaml")) == "given.yaml"


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


def test_json_round_trip(tmp_path):
    path = io.write_json(tmp_path / "x.json", {"b": np.float64(0.25), "a": np.arange(3), "c": float("inf")})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    data = io.read_json(path)
    assert data["schema_version"] == io.SCHEMA_VERSION
    assert data["a"] == [0, 1, 2] and data["b"] == 0.25
    assert json.loads(text)["c"] == "inf"


def test_json_version_checked(tmp_path):
    (tmp_path / "old.json").write_text('{"schema_version": 999}')
    with pytest.raises(ValueError):
        io.read_json(tmp_path / "old.json")


def test_table_round_trip(tmp_path):
    path = io.write_table(tmp_path / "t.tsv", ["L", "mean", "gates"], [[1, 0.1 + 0.2, ["X", "Y"]]], comments=["fit below"])
    lines = path.read_text().splitlines()
    assert lines[0] == f"# schema_version: {io.SCHEMA_VERSION}"
    cols, rows = io.read_table(path)
    assert cols == ["L", "mean", "gates"]
    assert rows == [["1", repr(0.1 + 0.2), "X,Y"]]
    assert float(rows[0][1]) == 0.1 + 0.2
