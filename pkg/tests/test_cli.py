import json
import subprocess
import sys

import numpy as np
import pytest

from hrtfkit import cli, electroacoustics as ea
from hrtfkit.electroacoustics import REFERENCE_DRIVER


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "raw", "--notch", "9000") == 0
    assert run("derive", "--in", root / "raw", "--out", root / "db") == 0
    return root


@pytest.fixture(scope="module")
def curves(tmp_path_factory):
    root = tmp_path_factory.mktemp("z")
    free, mass = ea.synthetic_impedance_curves(REFERENCE_DRIVER, 1e-3)
    ea.write_impedance_csv(free, root / "free.csv")
    ea.write_impedance_csv(mass, root / "mass.csv")
    return root


@pytest.fixture(scope="module")
def uncompensated(tree):
    assert run("derive", "--in", tree / "raw", "--out", tree / "dbnc", "--no-compensation") == 0
    return tree / "dbnc"


class TestFitTsp:
    def test_round_trip(self, curves, capsys):
        out = curves / "fit"
        rc = run("fit-tsp", "--free", curves / "free.csv", "--mass", curves / "mass.csv",
                 "--delta-mass", 1.0, "--sd", REFERENCE_DRIVER.S_d, "--out", out)
        assert rc == 0
        fitted = ea.read_tsp_file(out / "tsp.txt")
        assert max(ea.tsp_relative_errors(fitted, REFERENCE_DRIVER).values()) < 0.01
        assert (out / "fit_report.txt").read_text() in capsys.readouterr().out
        assert (out / "impedance_fit.png").stat().st_size > 0
        assert json.loads((out / "run_config.json").read_text())["paths"]["out"] == str(out)

    def test_missing_file(self, curves, tmp_path):
        out = tmp_path / "fit"
        rc = run("fit-tsp", "--free", curves / "nope.csv", "--mass", curves / "mass.csv",
                 "--delta-mass", 1.0, "--sd", REFERENCE_DRIVER.S_d, "--out", out)
        assert rc == cli.EXIT_DATA
        assert not out.exists()
        assert not any(p.name.startswith(".staging") for p in tmp_path.iterdir())

    @pytest.mark.parametrize("dm", [0, -1])
    def test_bad_delta_mass(self, curves, tmp_path, dm):
        rc = run("fit-tsp", "--free", curves / "free.csv", "--mass", curves / "mass.csv",
                 "--delta-mass", dm, "--sd", REFERENCE_DRIVER.S_d, "--out", tmp_path / "o")
        assert rc == cli.EXIT_USAGE


class TestSimulateSpeaker:
    def summary(self, path):
        return dict(line.split("=") for line in path.read_text().split())

    def test_fig7(self, tmp_path):
        assert run("simulate-speaker", "--out", tmp_path) == 0
        s = self.summary(tmp_path / "summary.txt")
        assert abs(float(s["rolloff_6db_hz"]) - 116) <= 3
        assert (tmp_path / "speaker_response.csv").exists() and (tmp_path / "speaker_response.png").exists()

    def test_tsp_file_input(self, tmp_path):
        ea.write_tsp_file(REFERENCE_DRIVER, tmp_path / "t.txt")
        assert run("simulate-speaker", "--tsp", tmp_path / "t.txt", "--out", tmp_path / "o") == 0

    def test_zero_box(self, tmp_path):
        assert run("simulate-speaker", "--vbox", 0, "--out", tmp_path / "o") == cli.EXIT_USAGE
        assert not (tmp_path / "o").exists()

    def test_drive_linearity(self, tmp_path):
        run("simulate-speaker", "--out", tmp_path / "a")
        run("simulate-speaker", "--veg", 5.656, "--out", tmp_path / "b")
        a = float(self.summary(tmp_path / "a" / "summary.txt")["peak_excursion_mm"])
        b = float(self.summary(tmp_path / "b" / "summary.txt")["peak_excursion_mm"])
        assert b == pytest.approx(2 * a, rel=1e-6)


class TestSynthDerive:
    def test_tree_contents(self, tree):
        raw = tree / "raw"
        assert len(list(raw.glob("bir_*.csv"))) == 1944
        assert len(list(raw.glob("oir_*.csv"))) == 27
        lines = (raw / "truth.csv").read_text().splitlines()
        assert len(lines) == 1945
        assert all(line.split(",")[3] == "9000" for line in lines[1:])

    def test_same_seed_same_bytes(self, tree, tmp_path):
        assert run("synth", "--out", tmp_path / "again", "--notch", "9000") == 0
        for p in sorted((tree / "raw").iterdir()):
            if p.name == "run_config.json":     # records the output path
                continue
            assert p.read_bytes() == (tmp_path / "again" / p.name).read_bytes(), p.name

    def test_bad_reflection(self, tmp_path):
        assert run("synth", "--out", tmp_path / "r", "--reflections", 2) == cli.EXIT_USAGE

    def test_database(self, tree):
        db = tree / "db"
        assert len(list(db.glob("hrir_*.txt"))) == 1944
        assert "m=48" in (db / "db_meta").read_text()

    def test_shift_bound(self, tree, tmp_path, capsys):
        rc = run("derive", "--in", tree / "raw", "--out", tmp_path / "d", "--shift", 12)
        assert rc == cli.EXIT_USAGE
        assert "tau_max" in capsys.readouterr().err
        assert not (tmp_path / "d").exists()

    def test_rerun_identical(self, tree, tmp_path):
        assert run("derive", "--in", tree / "raw", "--out", tmp_path / "d", "--workers", 3) == 0
        for p in sorted((tree / "db").iterdir()):
            if p.name != "run_config.json":
                assert p.read_bytes() == (tmp_path / "d" / p.name).read_bytes(), p.name

    def test_missing_input(self, tmp_path):
        assert run("derive", "--in", tmp_path / "none", "--out", tmp_path / "d") == cli.EXIT_DATA
        assert not (tmp_path / "d").exists()


class TestCuesVerify:
    def test_itd(self, tree, tmp_path):
        assert run("cues", "itd", "--db", tree / "db", "--out", tmp_path) == 0
        data = np.loadtxt(tmp_path / "itd.csv", delimiter=",", skiprows=1)
        assert np.all(np.abs(data[:, 1:]) <= 1000)
        assert (tmp_path / "itd.png").exists()

    def test_sc(self, tree, tmp_path):
        assert run("cues", "sc", "--db", tree / "db", "--out", tmp_path) == 0
        rows = [r.split(",") for r in (tmp_path / "sc_median.csv").read_text().splitlines()[1:]]
        notches = [r for r in rows if r[1] == "notch"]
        assert len({r[0] for r in notches}) == 53
        assert all(abs(float(r[2]) - 9000) <= 500 for r in notches)

    def test_hpd(self, tree, tmp_path):
        assert run("cues", "hpd", "--db", tree / "db", "--out", tmp_path) == 0
        files = sorted(tmp_path.glob("hpd_*.csv"))
        assert len(files) == 10
        for p in files:
            rows = dict(r.split(",") for r in p.read_text().splitlines()[1:])
            assert float(rows["0"]) == 0.0

    def test_ild(self, tree, tmp_path):
        assert run("cues", "ild", "--db", tree / "db", "--out", tmp_path) == 0
        assert (tmp_path / "ild_wideband.csv").exists()
        assert len(list(tmp_path.glob("ild_narrowband_*.csv"))) == 4

    def test_verify_pass(self, tree, capsys):
        assert run("verify", "--db", tree / "db", "--truth", tree / "raw" / "truth.csv") == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "sc_notch" in out

    def test_verify_uncompensated(self, uncompensated, capsys):
        assert run("verify", "--db", uncompensated) == cli.EXIT_DATA
        table = capsys.readouterr().out
        for name in ("causality", "itd_continuity"):
            line = next(l for l in table.splitlines() if l.startswith(name))
            assert "FAIL" in line

    def test_cues_refuse_noncausal(self, uncompensated, tmp_path):
        assert run("cues", "itd", "--db", uncompensated, "--out", tmp_path / "a") == cli.EXIT_DATA
        assert run("cues", "itd", "--db", uncompensated, "--out", tmp_path / "b",
                   "--no-compensation-check") == 0

    def test_verify_without_truth(self, uncompensated, capsys):
        run("verify", "--db", uncompensated, "--truth", "/nonexistent/truth.csv")
        out = capsys.readouterr().out
        assert "ground-truth checks skipped" in out
        assert "itd_vs_truth" not in out and "woodworth" not in out


class TestConfig:
    def test_env_config(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 3, "sc_prominence_db": 4.0}))
        monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
        assert run("simulate-speaker", "--out", tmp_path / "o") == 0
        snap = json.loads((tmp_path / "o" / "run_config.json").read_text())
        assert snap["seed"] == 3 and snap["sc_prominence_db"] == 4.0 and snap["shift"] == 48

    @pytest.mark.parametrize("body", [{"nope": 1}, {"sample_rate": 44100}])
    def test_bad_config(self, tmp_path, body):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(body))
        assert run("--config", cfg, "simulate-speaker", "--out", tmp_path / "o") == cli.EXIT_USAGE

    def test_argparse_usage_exit(self):
        with pytest.raises(SystemExit) as exc:
            run("derive")
        assert exc.value.code == cli.EXIT_USAGE

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "hrtfkit.cli", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "simulate-speaker" in res.stdout
