#!/usr/bin/env python3
"""End-to-end tests of the trawlwatch command line"""

import pandas as pd
import pytest
import yaml

from trawlwatch.main import CLASSIFY_COLUMNS, build_parser, main

OPTIONS = {
    "simulate": ["--scenario", "--vessels", "--trips", "--out", "--truth", "--seed", "--config", "--jobs"],
    "fit": ["--input", "--gap-hours", "--method", "--k", "--grouping", "--dimension", "--per-coordinate-rho",
            "--lo", "--hi", "--reported-speed", "--out", "--seed", "--quiet", "--verbose"],
    "classify": ["--input", "--models", "--decoder", "--dimension", "--reported-speed", "--out"],
    "evaluate": ["--input", "--truth", "--methods", "--grouping", "--k", "--dimensions", "--k-sweep",
                 "--decoder", "--lo", "--hi", "--no-timing", "--out"],
    "effort-map": ["--input", "--activities", "--cell", "--bbox", "--include-empty", "--out"],
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small run config plus a simulated 2 x 5 fleet"""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.yaml"
    config.write_text(yaml.safe_dump({
        "em": {"max_iter": 200, "n_restarts": 2},
        "runtime": {"jobs": 1},
    }))
    pings, truth = root / "pings.csv", root / "truth.csv"
    code = main(["simulate", "-c", str(config), "--scenario", "dmkmg2", "--vessels", "2", "--trips", "5",
                 "--seed", "3", "--out", str(pings), "--truth", str(truth), "-q"])
    assert code == 0
    return {"root": root, "config": str(config), "pings": str(pings), "truth": str(truth)}


@pytest.mark.parametrize("command", sorted(OPTIONS))
def test_help_lists_every_option(command, capsys):
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args([command, "--help"])
    assert excinfo.value.code == 0
    text = capsys.readouterr().out
    for option in OPTIONS[command]:
        assert option in text, f"{command} help lacks {option}"


def test_single_component_is_a_usage_error(workspace, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["fit", "-i", workspace["pings"], "--k", "1", "--out", str(workspace["root"] / "m")])
    assert excinfo.value.code == 2
    assert "K must be >= 2" in capsys.readouterr().err


def test_simulation_is_deterministic(workspace, tmp_path):
    out, truth = tmp_path / "p.csv", tmp_path / "t.csv"
    main(["simulate", "-c", workspace["config"], "--vessels", "2", "--trips", "5", "--seed", "3",
          "--out", str(out), "--truth", str(truth), "-q"])
    assert out.read_bytes() == open(workspace["pings"], "rb").read()
    assert truth.read_bytes() == open(workspace["truth"], "rb").read()


def test_fit_per_trip_writes_one_model_per_trip(workspace, tmp_path, capsys):
    code = main(["fit", "-c", workspace["config"], "-i", workspace["pings"], "--k", "2", "--grouping", "trip",
                 "--out", str(tmp_path / "models"), "-q"])
    assert code == 0
    assert len(list((tmp_path / "models").glob("trip__*.model.yaml"))) == 10
    assert "10/10 unit(s) fitted" in capsys.readouterr().out


def test_fit_classify_effort_pipeline(workspace, tmp_path):
    models, activities, grid = tmp_path / "models", tmp_path / "activities.csv", tmp_path / "grid.csv"
    assert main(["fit", "-c", workspace["config"], "-i", workspace["pings"], "--k", "2", "--grouping", "vessel",
                 "--out", str(models), "-q"]) == 0
    assert sorted(p.name for p in models.iterdir()) == ["vessel__V001.model.yaml", "vessel__V002.model.yaml"]

    assert main(["classify", "-c", workspace["config"], "-i", workspace["pings"], "--models", str(models),
                 "--out", str(activities), "-q"]) == 0
    frame = pd.read_csv(activities, dtype=str, keep_default_na=False)
    truth = pd.read_csv(workspace["truth"])
    assert list(frame.columns) == CLASSIFY_COLUMNS
    assert len(frame) == len(truth)
    assert set(frame["activity"]) <= {"fishing", "steaming"}
    assert set(frame["component"]) <= {"1", "2"}

    assert main(["effort-map", "-c", workspace["config"], "-i", workspace["pings"],
                 "--activities", str(activities), "--cell", "0.1", "--out", str(grid), "-q"]) == 0
    cells = pd.read_csv(grid)
    meta = yaml.safe_load((tmp_path / "grid.meta.yaml").read_text())
    assert meta["n_trips"] == 10
    assert meta["trips_without_activities"] == 0
    assert meta["outside_hours"] == 0.0
    assert cells["hours"].sum() == pytest.approx(meta["total_hours"])
    assert meta["total_hours"] > 0


def test_classify_rejects_other_dimension(workspace, tmp_path):
    models = tmp_path / "models"
    main(["fit", "-c", workspace["config"], "-i", workspace["pings"], "--k", "2", "--out", str(models), "-q"])
    code = main(["classify", "-c", workspace["config"], "-i", workspace["pings"], "--models", str(models),
                 "--dimension", "speed+angular", "--out", str(tmp_path / "a.csv"), "-q"])
    assert code == 1
    assert not (tmp_path / "a.csv").exists()


def test_evaluate_is_reproducible(workspace, tmp_path, capsys):
    args = ["evaluate", "-c", workspace["config"], "-i", workspace["pings"], "--truth", workspace["truth"],
            "--methods", "dmkmg,threshold", "--grouping", "all,vessel", "--k", "2", "--lo", "1", "--hi", "5.5",
            "--no-timing", "-q"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    table = pd.read_csv(tmp_path / "a.csv")
    assert list(table["method"]) == ["dmkmg", "threshold", "dmkmg", "threshold"]
    assert list(table["grouping"]) == ["all", "all", "vessel", "vessel"]
    assert table["wall_s"].isna().all()
    assert "global match" in capsys.readouterr().out


def test_evaluate_k_sweep_reports_best_k(workspace, capsys):
    code = main(["evaluate", "-c", workspace["config"], "-i", workspace["pings"], "--truth", workspace["truth"],
                 "--k-sweep", "2..3", "-q"])
    assert code == 0
    assert "Best K (all, speed):" in capsys.readouterr().out


def test_missing_input_fails_cleanly(workspace, tmp_path):
    code = main(["fit", "-c", workspace["config"], "-i", str(tmp_path / "absent.csv"),
                 "--out", str(tmp_path / "m"), "-q"])
    assert code == 1


def test_bad_config_fails_cleanly(workspace, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  method: kmeans\n")
    code = main(["simulate", "-c", str(bad), "--out", str(tmp_path / "p.csv"), "--truth", str(tmp_path / "t.csv")])
    assert code == 1


def test_fit_classify_effort_are_byte_identical_on_rerun(workspace, tmp_path):
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        root.mkdir()
        common = ["-c", workspace["config"], "-i", workspace["pings"], "-q"]
        assert main(["fit", *common, "--k", "2", "--grouping", "vessel", "--out", str(root / "models")]) == 0
        assert main(["classify", *common, "--models", str(root / "models"), "--out", str(root / "act.csv")]) == 0
        assert main(["effort-map", *common, "--activities", str(root / "act.csv"),
                     "--out", str(root / "grid.csv")]) == 0
        outputs.append({p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    assert outputs[0] == outputs[1]
