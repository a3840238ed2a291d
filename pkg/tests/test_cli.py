import csv
from pathlib import Path

import pytest

from nctcp.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_analytic_flags(capsys):
    assert main(["analytic", "--p", "0.0963", "--R", "1.13", "--srtt", "0.8281"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("p,R,srtt_s")
    assert float(out[1].split(",")[4]) == pytest.approx(0.4732, abs=1e-4)


def test_table1_writes_csv(tmp_path, capsys):
    assert main(["table1", "--replications", "1", "--seed", "3", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "table1.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert {p.name for p in tmp_path.iterdir()} == {"raw.csv", "aggregate.csv", "table1.csv"}


def test_compare(tmp_path, capsys):
    assert main(["compare", "--replications", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "deviations.csv").exists()
    assert "flagged" in capsys.readouterr().out


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_presets_parse(name):
    from nctcp.experiments import load_spec
    load_spec(CONFIGS / name)


def test_simulate_preset(tmp_path):
    cfg = CONFIGS / "redundancy_p0963.toml"
    assert main(["simulate", "--config", str(cfg), "--replications", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "aggregate.csv").exists()


def test_provision_preset(tmp_path):
    assert main(["provision", "--config", str(CONFIGS / "provision.toml"), "--out", str(tmp_path)]) == 0


def test_validation_failure(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "table1"\nreplications = -1\n')
    assert main(["table1", "--config", str(bad)]) == 2
    assert "replications" in capsys.readouterr().err


def test_kind_mismatch(capsys):
    assert main(["provision", "--config", str(CONFIGS / "table1.toml")]) == 2


def test_missing_config(capsys):
    assert main(["simulate", "--config", "/nonexistent.toml"]) == 2
