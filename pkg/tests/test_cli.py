import csv
import json
from pathlib import Path

import numpy as np
import pytest

from radbudget.cli import main

from _fit_fixtures import TRUE_PARAMS, make_data, make_templates

GOLDEN_BUDGET = Path(__file__).parent / "data" / "budget_expected.csv"


class TestArgHandling:
    def test_unknown_flag_exits_1(self, capsys):
        assert main(["transport", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_exits_1(self):
        assert main(["frobnicate"]) == 1

    def test_version_exits_0(self, capsys):
        assert main(["--version"]) == 0

    def test_workers_note(self, capsys, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["scene", "--workers", "4", "--out", str(out)]) == 0
        assert "single-process" in capsys.readouterr().err


class TestScene:
    def test_dump_lists_chips(self, tmp_path):
        out = tmp_path / "scene.csv"
        assert main(["scene", "--site", "surface", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        chips = [r for r in rows if r["id"].startswith("chip")]
        assert len(chips) == 144
        assert all(r["material"] == "silicon" for r in chips)

    def test_json_format(self, tmp_path):
        out = tmp_path / "scene.json"
        assert main(["scene", "--format", "json", "--out", str(out)]) == 0
        rows = json.loads(out.read_text())
        assert {"id", "role", "material"} <= set(rows[0])

    def test_shield_flag_adds_wall(self, tmp_path):
        out = tmp_path / "scene.csv"
        assert main(["scene", "--shield-in", "4", "--out", str(out)]) == 0
        ids = [r["id"] for r in csv.DictReader(out.open())]
        assert "shield wall" in ids


class TestAssay:
    def test_show_material_row(self, capsys):
        assert main(["assay", "show", "lead"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "material,source,activity_mBq_per_kg"
        assert "lead,Pb-210,200000" in lines

    def test_unknown_material_exits_1(self, capsys):
        assert main(["assay", "show", "unobtanium"]) == 1
        assert "unobtanium" in capsys.readouterr().err

    def test_list_contains_copper(self, capsys):
        assert main(["assay", "list"]) == 0
        assert "copper" in capsys.readouterr().out


class TestBudget:
    def test_golden_file(self, tmp_path):
        out = tmp_path / "budget.csv"
        assert main(["budget", "--out", str(out)]) == 0
        assert out.read_bytes() == GOLDEN_BUDGET.read_bytes()

    def test_missing_inventory_exits_1(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["budget", "--inventory", str(missing),
                     "--out", str(tmp_path / "b.csv")]) == 1
        assert str(missing) in capsys.readouterr().err


class TestTransport:
    def test_deterministic_rerun_byte_identical(self, tmp_path):
        args = ["transport", "--seed", "7", "--primaries", "5000",
                "--radial-cut", "0,1.3,173,300"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_manifest_written(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["transport", "--seed", "3", "--primaries", "2000",
                     "--out", str(out)]) == 0
        manifest = json.loads((tmp_path / "t.csv.manifest.json").read_text())
        assert manifest["seed"] == 3
        assert str(out) in manifest["outputs"]
        assert manifest["subcommand"] == "transport"


class TestSweep:
    def test_csv_columns(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "--thicknesses", "0", "--primaries", "50000",
                     "--radial-cut", "0,1.3,173,30", "--out", str(out)]) == 0
        header = out.read_text().splitlines()[0]
        assert header == ("thickness_in,rate,rate_err,dose,"
                          "ratio_unshielded,ratio_muon,pass")


class TestHiteff:
    def test_row_shape(self, tmp_path):
        out = tmp_path / "h.csv"
        assert main(["hiteff", "--volume", "Package 00 interposer",
                     "--source", "U-238", "--primaries", "2000",
                     "--seed", "5", "--out", str(out)]) == 0
        (row,) = list(csv.DictReader(out.open()))
        assert row["n_decays"] == "2000"
        assert float(row["hit"]) > 0

    def test_unknown_volume_exits_1(self, capsys):
        assert main(["hiteff", "--volume", "nope", "--source", "U-238",
                     "--primaries", "10"]) == 1
        assert "nope" in capsys.readouterr().err


class TestFit:
    def test_missing_templates_dir_exits_1(self, tmp_path, capsys):
        missing = tmp_path / "templates"
        assert main(["fit", "--model", "full11", "--data", "x.csv",
                     "--templates", str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_full_round_trip(self, tmp_path):
        templates = make_templates()
        tdir = tmp_path / "templates"
        tdir.mkdir()
        for name, spectrum in templates.items():
            spectrum.write(tdir / f"{name}.csv")
        data = make_data(templates, rng=np.random.default_rng(42))
        data.write(tmp_path / "data.csv")
        out = tmp_path / "fit.csv"
        assert main(["fit", "--data", str(tmp_path / "data.csv"),
                     "--templates", str(tdir), "--window", "4,256",
                     "--out", str(out)]) == 0
        rows = {r["quantity"]: r for r in csv.DictReader(out.open())}
        assert float(rows["gain"]["value"]) == pytest.approx(
            TRUE_PARAMS.gain, rel=0.05)
        assert 0.8 < float(rows["chi2_per_dof"]["value"]) < 1.2
        assert rows["converged"]["value"] == "1"
        assert float(rows["amplitude:Tl-208"]["error"]) > 0
