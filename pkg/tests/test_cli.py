import socket
import subprocess
import sys
import threading

from bb84sim.cli import cli_main
from bb84sim.config import SimConfig, load_preset
from bb84sim.reporting import read_iterations_csv, read_roc_csv
from bb84sim.runner import run


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_replicate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "exp1"
    assert cli_main(["replicate", "exp1", "--photons", "10000", "--iterations", "50", "--seed", "1",
                     "--out-dir", str(out)]) == 0
    records = read_iterations_csv(out / "iterations.csv")
    expected, _ = run(load_preset("exp1").replace(iterations=50, seed=1))
    assert records == expected
    assert "sifted_rate_bps" in capsys.readouterr().out
    assert (out / "summary.csv").exists() and (out / "config.resolved").exists()


def test_run_with_config_file_and_overrides(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("photons = 100\niterations = 4\np_depol = 0.2\n")
    assert cli_main(["run", "--config", str(conf), "--set", "eve=yes", "--seed", "4",
                     "--out-dir", str(tmp_path / "o")]) == 0
    resolved = (tmp_path / "o" / "config.resolved").read_text()
    assert "eve = yes" in resolved and "p_depol = 0.2" in resolved and "seed = 4" in resolved


def test_validation_error_exit_code(tmp_path, capsys):
    assert cli_main(["run", "--photons", "0", "--set", "bogus=1", "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "photons" in err and "bogus: unknown key" in err
    assert cli_main(["run", "--set", "novalue", "--out-dir", str(tmp_path)]) == 2


def test_missing_config_file_is_an_error(tmp_path, capsys):
    assert cli_main(["run", "--config", str(tmp_path / "nope.conf")]) == 1
    assert "nope.conf" in capsys.readouterr().err


def test_sweep_command(tmp_path):
    assert cli_main(["sweep", "--axis", "epsilon", "--values", "0,1", "--photons", "1000",
                     "--iterations", "5", "--out-dir", str(tmp_path)]) == 0
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 3


def test_serve_and_connect_match_single_process(tmp_path):
    port = str(_free_port())
    codes = {}
    server = threading.Thread(target=lambda: codes.setdefault("serve", cli_main(
        ["serve", "--port", port, "--photons", "500", "--iterations", "5", "--seed", "8",
         "--set", "p_depol=0.1", "--out-dir", str(tmp_path / "s")])))
    server.start()
    codes["connect"] = cli_main(["connect", "--ip", "127.0.0.1", "--port", port, "--out-dir", str(tmp_path / "c")])
    server.join(30)
    assert codes == {"serve": 0, "connect": 0}
    cfg = SimConfig(photons=500, iterations=5, seed=8, p_depol=0.1, port=int(port))
    expected, _ = run(cfg)
    assert read_iterations_csv(tmp_path / "s" / "iterations.csv") == expected
    assert read_iterations_csv(tmp_path / "c" / "iterations.csv") == expected


def test_roc_command(tmp_path, capsys):
    assert cli_main(["run", "--photons", "2000", "--iterations", "40", "--set", "eve=yes",
                     "--set", "random_attacks=yes", "--out-dir", str(tmp_path)]) == 0
    out = tmp_path / "curve.csv"
    assert cli_main(["roc", str(tmp_path / "iterations.csv"), "--out", str(out)]) == 0
    points = read_roc_csv(out)
    assert points[0][1:] == (1.0, 1.0) and points[-1][1:] == (0.0, 0.0)
    assert "AUC 1.0000" in capsys.readouterr().out
    assert cli_main(["roc", str(tmp_path / "iterations.csv"), "--thresholds", "0.1,0.2"]) == 0
    assert len(read_roc_csv(tmp_path / "roc.csv")) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bb84sim", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "replicate" in proc.stdout
