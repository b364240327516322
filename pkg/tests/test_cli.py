from pathlib import Path

import pytest

from src.client.terminal import main
from src.services.harness import config_sections
from src.utils.config import write_ini


@pytest.fixture
def tiny_ini(tiny_config, tmp_path) -> Path:
    path = tmp_path / "tiny.ini"
    write_ini(config_sections(tiny_config.model_copy(update={"epochs": 1})), path)
    return path


def test_help_exits_cleanly(capsys) -> None:
    assert main(["--help"]) == 0
    assert "run" in capsys.readouterr().out


def test_subcommand_help_exits_cleanly(capsys) -> None:
    assert main(["run", "--help"]) == 0
    assert "--strategy" in capsys.readouterr().out


def test_unknown_subcommand_is_a_usage_error() -> None:
    assert main(["bogus"]) == 2


def test_unknown_strategy_is_a_usage_error(tiny_ini) -> None:
    assert main(["run", "--config", str(tiny_ini), "--strategy", "nonsense"]) == 2


def test_strong_warmup_for_coteaching_is_a_usage_error(tiny_ini) -> None:
    assert main(["run", "--config", str(tiny_ini), "--strategy", "coteaching+-SAW"]) == 2


def test_invalid_value_fails(tiny_ini) -> None:
    assert main(["run", "--config", str(tiny_ini), "--set", "optim.lr=-1"]) == 1


def test_run_command(tiny_ini, tmp_path) -> None:
    out = tmp_path / "cli-run"
    args = ["run", "--config", str(tiny_ini), "--out", str(out), "--strategy", "ce-raw"]
    assert main(args + ["--json-logs"]) == 0
    assert (out / "ce-raw-WAW" / "seed_1" / "epochs.csv").exists()


def test_grid_command(tiny_ini, tmp_path) -> None:
    out = tmp_path / "cli-grid"
    args = [
        "grid",
        "--config",
        str(tiny_ini),
        "--out",
        str(out),
        "--strategies",
        "ce-raw,mdyrh-WS",
        "--noise-rates",
        "0.2,0.5",
    ]
    assert main(args) == 0
    assert len(list(out.glob("noise_*/*/seed_1"))) == 4


def test_probe_command(tiny_ini, tmp_path) -> None:
    out = tmp_path / "cli-probe"
    args = ["probe", "--config", str(tiny_ini), "--out", str(out), "--p-strong", "0,1"]
    assert main(args) == 0
    assert (out / "probe" / "p_1" / "seed_1" / "probe.json").exists()


def test_gen_data_command(tiny_ini, tmp_path) -> None:
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(tiny_ini), "--out", str(out), "--seed", "2"]) == 0
    for name in ("train-images", "train-labels", "test-images", "test-labels"):
        assert (out / f"seed_2-{name}.idx").exists()
