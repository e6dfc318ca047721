import csv
import json
import math

import numpy as np
import pytest

from dbflu import forecast as fc
from dbflu.cli import main
from dbflu.data import write_panel
from dbflu.forecast import BinnedForecast
from dbflu.scoring import resolve_truth

from conftest import synthetic_panel

SEASONS = (2001, 2002, 2003, 2004)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, gen_prior):
    root = tmp_path_factory.mktemp("cli")
    panel, _ = synthetic_panel(gen_prior, SEASONS, seed=31)
    write_panel(panel, root / "panel.csv")
    (root / "cfg.toml").write_text(
        '[data]\npanel = "panel.csv"\n'
        '[sampler]\nmode = "ci"\nseed = 5\nn_iter = 2000\nthin = 1\n'
        "[backtest]\nseasons = [2004]\nweeks = [3, 4]\n")
    return root, panel


def run(ws, *argv):
    root, _ = ws
    return main([argv[0], "--config", str(root / "cfg.toml"), *argv[1:]])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def fitted(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("fits")
    assert run(workspace, "fit-priors", "--out", str(out)) == 0
    return out


@pytest.fixture(scope="module")
def outputs(workspace, fitted, tmp_path_factory):
    """The same forecast run twice into separate directories."""
    a = tmp_path_factory.mktemp("fa")
    b = tmp_path_factory.mktemp("fb")
    for out in (a, b):
        assert run(workspace, "forecast", "--season", "2004", "--week", "6",
                   "--fits", str(fitted / "fits.csv"), "--out", str(out)) == 0
    return a, b


@pytest.fixture(scope="module")
def bt_dir(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("bt")
    assert run(workspace, "backtest", "--out", str(out)) == 0
    return out


class TestExitCodes:
    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.toml"
        assert main(["fit-priors", "--config", str(missing)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_missing_panel_names_path(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text('[data]\npanel = "absent.csv"\n')
        assert main(["fit-priors", "--config", str(cfg)]) == 2
        assert "absent.csv" in capsys.readouterr().err

    @pytest.mark.parametrize("week", [2, 31])
    def test_week_outside_range(self, workspace, tmp_path, week):
        assert run(workspace, "forecast", "--season", "2004", "--week", str(week),
                   "--out", str(tmp_path)) == 2

    def test_malformed_panel(self, tmp_path):
        (tmp_path / "p.csv").write_text("season,week,wili\n2001,1,abc\n")
        assert main(["fit-priors", "--panel", str(tmp_path / "p.csv"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_offline_fetch_without_cache(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(f'[api]\ncache_dir = "{tmp_path / "cache"}"\n')
        assert main(["fetch", "--config", str(cfg), "--epiweeks", "201440-201520", "--offline",
                     "--out", str(tmp_path / "o")]) == 1

    def test_failed_backtest_cells(self, workspace, tmp_path):
        # season absent from the panel: every cell fails, the run reports it
        assert run(workspace, "backtest", "--season", "1990", "--out", str(tmp_path)) == 1
        rows = read_csv(tmp_path / "failures.csv")
        assert len(rows) == 2 and rows[0]["season"] == "1990"


class TestFitPriors:
    def test_outputs(self, fitted):
        with open(fitted / "fits.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == ["season", "i0", "beta", "rho", "sse"]
        assert len(read_csv(fitted / "fits.csv")) == len(SEASONS)
        for s in SEASONS:
            assert (fitted / f"prior_excl_{s}.json").exists()
        man = json.loads((fitted / "manifest.json").read_text())
        assert man["command"] == "fit-priors" and man["n_fits"] == len(SEASONS)


class TestForecast:
    def test_seven_targets(self, outputs):
        targets = {r["target"] for r in read_csv(outputs[0] / "submission.csv")}
        assert targets == {"PI", "PT", "Onset", "1wk", "2wk", "3wk", "4wk"}

    def test_files_present(self, outputs):
        for name in ("submission.csv", "intervals.csv", "convergence.txt", "draws.csv",
                     "draws.npz", "manifest.json"):
            assert (outputs[0] / name).exists(), name

    def test_rerun_identical(self, outputs):
        a, b = outputs
        for name in ("submission.csv", "intervals.csv", "draws.csv", "convergence.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_manifest(self, outputs, workspace):
        man = json.loads((outputs[0] / "manifest.json").read_text())
        for key in ("command", "config_hash", "seed", "inputs", "version", "started", "finished"):
            assert key in man
        assert man["seed"] == 5 and man["season"] == 2004 and man["week"] == 6
        assert any(k.endswith("panel.csv") for k in man["inputs"])

    def test_submission_round_trip(self, outputs):
        subs = fc.read_submission(outputs[0] / "submission.csv", 6)
        for f in subs:
            assert f.probs.sum() == pytest.approx(1.0, abs=1e-9)


class TestScore:
    def test_worked_example_row(self, workspace, tmp_path):
        _, panel = workspace
        k = resolve_truth(panel.season_values(2003), 2003).bins["PT"]
        p = np.zeros(35)
        p[[k - 1, k, k + 1]] = [0.1, 0.3, 0.2]
        p[(k + 12) % 35] = 0.4
        fc.write_submission([BinnedForecast("PT", 13, p)], tmp_path / "sub.csv")
        assert run(workspace, "score", "--submission", str(tmp_path / "sub.csv"),
                   "--season", "2003", "--week", "13", "--out", str(tmp_path / "o")) == 0
        rows = read_csv(tmp_path / "o" / "scores.csv")
        assert len(rows) == 1
        assert float(rows[0]["log_score"]) == pytest.approx(math.log(0.6), abs=1e-12)
        assert f"{float(rows[0]['log_score']):.2f}" == "-0.51"

    def test_needs_one_source(self, workspace, tmp_path):
        assert run(workspace, "score", "--out", str(tmp_path)) == 2


class TestBacktestPipeline:
    def test_cells(self, bt_dir):
        names = sorted(p.name for p in (bt_dir / "cells").iterdir())
        assert names == ["2004.03", "2004.04"]

    def test_rerun_skips(self, workspace, bt_dir):
        before = (bt_dir / "cells" / "2004.03" / "submission.csv").read_bytes()
        assert run(workspace, "backtest", "--out", str(bt_dir)) == 0
        man = json.loads((bt_dir / "manifest.json").read_text())
        assert man["skipped"] == 2 and man["completed"] == 0
        assert (bt_dir / "cells" / "2004.03" / "submission.csv").read_bytes() == before

    def test_coverage_tables(self, workspace, bt_dir, tmp_path):
        assert run(workspace, "coverage", "--backtest", str(bt_dir), "--out", str(tmp_path)) == 0
        for key in ("season", "target_week", "fit_week", "ahead"):
            tab = read_csv(tmp_path / f"coverage_by_{key}.csv")
            assert sum(int(r["n"]) for r in tab) == 32 + 31
        assert "coverage =" in (tmp_path / "coverage_overall.txt").read_text()

    def test_score_backtest(self, workspace, bt_dir, tmp_path):
        assert run(workspace, "score", "--backtest", str(bt_dir), "--out", str(tmp_path)) == 0
        rows = read_csv(tmp_path / "scores.csv")
        assert len(rows) == 2 * 7
        assert all(-10 <= float(r["log_score"]) <= 0 for r in rows)

    def test_plotdata(self, workspace, fitted, bt_dir, tmp_path):
        assert run(workspace, "plotdata", "--backtest", str(bt_dir), "--season", "2004",
                   "--fits", str(fitted / "fits.csv"),
                   "--week", "3", "--out", str(tmp_path)) == 0
        for fig in ("fig1_wili", "fig2_mse", "fig4_sir_fits", "fig6_forecast", "fig9_coverage"):
            assert (tmp_path / f"{fig}.csv").exists()
            assert (tmp_path / f"{fig}.svg").read_text().lstrip().startswith("<?xml")
        mse = [float(r["mse"]) for r in read_csv(tmp_path / "fig2_mse.csv")]
        assert mse == sorted(mse, reverse=True) and len(mse) == len(SEASONS)
