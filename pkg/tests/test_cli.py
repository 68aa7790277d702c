import shutil
import subprocess

import pytest

from mimocs.cli import main

CFG = """M = 16
P = 2
K = 2
N = 4
s = 3
c_overlap = 2
trials = 1
G_list = 12
rho_edge_list_dB = 20
rho_th_schedule = 10
gamma_th_schedule = 0.01
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(CFG)
    return path


def test_mse_to_file(cfg, tmp_path):
    out = tmp_path / "mse.csv"
    assert main(["mse", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("experiment,estimator,G")
    assert len(lines) == 1 + 4
    assert all(line.endswith(",1,3") for line in lines[1:])


def test_flags_override_config(cfg, capsys):
    assert main(["mse", "--config", str(cfg), "--trials", "2",
                 "--override", "G_list=10,12"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 + 8
    assert all(",2,0" in line for line in lines[1:])


def test_config_error_exit_code(cfg, capsys):
    assert main(["mse", "--config", str(cfg), "--override", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["mse", "--config", str(cfg), "--override", "novalue"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["mse", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_throughput_command(cfg, tmp_path):
    out = tmp_path / "tp.csv"
    assert main(["throughput", "--config", str(cfg), "--out", str(out),
                 "--override", "G_throughput=12"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 5


@pytest.mark.skipif(shutil.which("simulate") is None, reason="console script not installed")
def test_console_script(cfg, tmp_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (out1, out2):
        subprocess.run(["simulate", "mse", "--config", str(cfg), "--out", str(out)], check=True)
    assert out1.read_bytes() == out2.read_bytes()
