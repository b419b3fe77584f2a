import csv
import json
from importlib import resources

import pytest

from zzfree.cli import format_number, main, write_csv, write_json
from zzfree.config import ConfigError, load_preset, parse_toml

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def preset_text(name):
    return resources.files("zzfree").joinpath("presets", f"{name}.toml").read_text("utf-8")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestOutputFormat:
    def test_number_format(self):
        assert format_number(0.1) == "0.1"
        assert format_number(1 / 3) == "0.333333333333"
        assert format_number(-2.5e-7) == "-2.5e-07"

    def test_csv_lf_and_precision(self, tmp_path):
        path = tmp_path / "a.csv"
        write_csv(path, ["x", "y"], [[1 / 7, 2], [3.0, -1e-9]])
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        assert raw.decode().splitlines() == ["x,y", "0.142857142857,2", "3,-1e-09"]

    def test_json_sorted(self, tmp_path):
        path = tmp_path / "a.json"
        write_json(path, {"b": 1, "a": {"d": 2, "c": 3}})
        text = path.read_text("utf-8")
        assert text.index('"a"') < text.index('"b"') and text.index('"c"') < text.index('"d"')
        assert json.loads(text) == {"a": {"c": 3, "d": 2}, "b": 1}

    def test_json_non_finite_as_null(self, tmp_path):
        write_json(tmp_path / "n.json", {"x": float("nan"), "y": float("inf")})
        assert json.loads((tmp_path / "n.json").read_text()) == {"x": None, "y": None}
        assert [p.name for p in tmp_path.iterdir()] == ["n.json"]


class TestConfig:
    @pytest.mark.parametrize("name", ["fig2", "fig3", "fig4", "appendix-a"])
    def test_presets_parse(self, name):
        assert load_preset(name)["scenario"]

    def test_malformed_toml_location(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('scenario = "cancel"\n[model]\nomega_left = 4.5\nchi_left = \n')
        code, _, err = run(capsys, "cancel", "--config", str(bad))
        assert code == EXIT_INVALID
        assert f"{bad}:4:12" in err

    def test_schema_error_names_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('[model]\nomega_left = "a"\n')
        code, _, err = run(capsys, "cancel", "--config", str(bad))
        assert code == EXIT_INVALID and "model.omega_left" in err

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="drive.amp"):
            parse_toml("[drive]\namp = 1.0\n")

    def test_config_overrides_preset(self, tmp_path, capsys):
        over = tmp_path / "o.toml"
        over.write_text("[drive]\ndetuning = 0.12\n")
        code, out, _ = run(capsys, "cancel", "--preset", "fig2", "--config", str(over),
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        data = json.loads((tmp_path / "cancel.json").read_text())
        assert data["detuning_GHz"] == 0.12

    def test_missing_configuration(self, capsys):
        assert run(capsys, "cancel")[0] == EXIT_INVALID

    def test_bad_flag(self, capsys):
        assert run(capsys, "cancel", "--preset", "fig9")[0] == EXIT_INVALID

    def test_threads(self, tmp_path, capsys, monkeypatch):
        assert run(capsys, "cancel", "--preset", "fig2", "--threads", "1", "--out",
                   str(tmp_path))[0] == EXIT_OK
        assert run(capsys, "cancel", "--preset", "fig2", "--threads", "0")[0] == EXIT_INVALID
        monkeypatch.setenv("ZZFREE_THREADS", "x")
        assert run(capsys, "cancel", "--preset", "fig2")[0] == EXIT_INVALID


class TestSubcommands:
    def test_cancel(self, tmp_path, capsys):
        code, out, _ = run(capsys, "cancel", "--preset", "fig2", "--out", str(tmp_path))
        assert code == EXIT_OK and out.count("\n") >= 1
        data = json.loads((tmp_path / "cancel.json").read_text())
        assert 0.26 <= data["D0_GHz"] <= 0.28

    def test_cancel_numerical_failure(self, tmp_path, capsys):
        code, _, err = run(capsys, "cancel", "--preset", "fig2", "--detuning", "-0.1",
                           "--out", str(tmp_path))
        assert code == EXIT_NUMERICAL and "numerical failure" in err

    def test_zz_scan(self, tmp_path, capsys):
        code, _, _ = run(capsys, "zz-scan", "--preset", "fig2", "--dmax", "0.4", "--out",
                         str(tmp_path))
        assert code == EXIT_OK
        rows = read_csv(tmp_path / "zz_scan.csv")
        assert rows[0][:2] == ["D_GHz", "zz_total_GHz"]
        zz = [float(r[1]) for r in rows[1:]]
        assert min(zz) < 0 < max(zz)

    def test_zz_scan_bad_points(self, tmp_path, capsys):
        assert run(capsys, "zz-scan", "--preset", "fig2", "--points", "1", "--out",
                   str(tmp_path))[0] == EXIT_INVALID

    def test_dressed(self, tmp_path, capsys):
        code, _, _ = run(capsys, "dressed", "--preset", "fig3", "--out", str(tmp_path))
        assert code == EXIT_OK
        data = json.loads((tmp_path / "dressed.json").read_text())
        assert data["dressed"]["chi_left"] == pytest.approx(-0.006, abs=1e-8)
        assert "circuit" in data

    def test_chain(self, tmp_path, capsys):
        code, out, _ = run(capsys, "chain", "--preset", "appendix-a", "--grid-points", "5",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        rows = read_csv(tmp_path / "chain_grid.csv")
        assert rows[0] == ["D1", "D2", "zz12", "zz23", "zz31", "zzz123"]
        assert len(rows) == 26
        data = json.loads((tmp_path / "chain.json").read_text())
        assert len(data["joint_zero_GHz"]) == 2

    def test_error_budget(self, tmp_path, capsys):
        code, out, _ = run(capsys, "error-budget", "--preset", "fig3", "--noise", "500,500",
                           "--kappa", "0.01", "--photons", "10", "--chi", "0.006",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        data = json.loads((tmp_path / "error_budget.json").read_text())
        assert data["coherence_limit_us"] == pytest.approx(5000, rel=0.2)

    def test_cz_fixed_duration(self, tmp_path, capsys):
        cfg = tmp_path / "cz.toml"
        cfg.write_text(preset_text("fig4").split("[noise]")[0])
        code, _, _ = run(capsys, "cz-gate", "--config", str(cfg), "--n", "2", "--duration",
                         "162", "--out", str(tmp_path))
        assert code == EXIT_OK
        data = json.loads((tmp_path / "cz_gate.json").read_text())
        assert data["gates"]["2"]["duration_ns"] == 162
        assert data["gates"]["2"]["result"]["diabatic_error"] < 1e-4
        assert (tmp_path / "cz_populations_n2.csv").exists()

    def test_cz_bad_exponent(self, tmp_path, capsys):
        assert run(capsys, "cz-gate", "--preset", "fig4", "--n", "3", "--duration", "100",
                   "--out", str(tmp_path))[0] == EXIT_INVALID

    def test_cr_gate_stored_parameters(self, tmp_path, capsys):
        cfg = tmp_path / "cr.toml"
        # the stored preset without its [noise] table: a closed-system run
        cfg.write_text(preset_text("fig3").split("[noise]")[0])
        code, out, _ = run(capsys, "cr-gate", "--config", str(cfg), "--flavor", "one",
                           "--out", str(tmp_path))
        assert code == EXIT_OK
        data = json.loads((tmp_path / "cr_gate_one.json").read_text())
        assert data["result"]["coherent_error"] < 1e-4
        assert "total_error" not in data["result"]
        rows = read_csv(tmp_path / "cr_populations_one.csv")
        assert rows[0][0] == "t_ns"


class TestReproducibility:
    @pytest.mark.parametrize("argv,files", [
        (["cancel", "--preset", "fig2"], ["cancel.json"]),
        (["zz-scan", "--preset", "fig2"], ["zz_scan.csv"]),
        (["chain", "--preset", "appendix-a", "--grid-points", "4"],
         ["chain.json", "chain_grid.csv"]),
    ])
    def test_byte_identical_reruns(self, tmp_path, capsys, argv, files):
        for name in ("a", "b"):
            assert run(capsys, *argv, "--seed", "7", "--out", str(tmp_path / name))[0] == EXIT_OK
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
