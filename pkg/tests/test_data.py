import json

import numpy as np
import pytest
import requests

from dbflu import data as D
from dbflu.data import (FetchError, PanelFormatError, SeasonPanel, VintageStore, fetch_surveillance,
                        parse_panel, parse_vintages, rows_to_store, write_panel)


def write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def toy_panel():
    vals = np.full((3, 35), np.nan)
    vals[:, :30] = np.linspace(0.01, 0.05, 30)
    vals[1] *= 1.1
    return SeasonPanel((2010, 2011, 2012), vals)


class TestSeasonPanel:
    def test_shape_checks(self):
        with pytest.raises(ValueError):
            SeasonPanel((1, 2), np.zeros((1, 35)) + 0.1)
        with pytest.raises(ValueError):
            SeasonPanel((1, 1), np.zeros((2, 35)) + 0.1)

    @pytest.mark.parametrize("bad", [0.0, 1.0, 1.5])
    def test_unit_interval(self, bad):
        with pytest.raises(ValueError):
            SeasonPanel((1,), np.full((1, 35), bad))

    def test_read_only(self):
        p = toy_panel()
        with pytest.raises(ValueError):
            p.values[0, 0] = 0.5

    def test_masked(self):
        p = toy_panel().masked(2011, 5)
        assert np.all(np.isnan(p.season_values(2011)[5:]))
        assert np.isfinite(p.season_values(2011)[:5]).all()
        assert np.isfinite(p.season_values(2010)[:30]).all()

    def test_subset_and_without(self):
        p = toy_panel()
        assert p.without(2011).seasons == (2010, 2012)
        assert p.subset([2012]).values.shape == (1, 35)
        with pytest.raises(KeyError):
            p.index(1999)


class TestParse:
    def test_round_trip(self, tmp_path):
        p = toy_panel()
        write_panel(p, tmp_path / "x.csv")
        assert parse_panel(tmp_path / "x.csv") == p

    def test_percent_detected(self, tmp_path):
        f = write(tmp_path, "season,week,wili\n2010,1,1.5\n2010,2,2.5\n")
        v = parse_panel(f).season_values(2010)
        assert v[:2] == pytest.approx([0.015, 0.025])

    def test_explicit_percent_column(self, tmp_path):
        f = write(tmp_path, "season,week,wili_pct\n2010,1,0.5\n")
        assert parse_panel(f).season_values(2010)[0] == pytest.approx(0.005)

    def test_mmwr_columns(self, tmp_path):
        f = write(tmp_path, "epiweek,wili\n201540,0.01\n201601,0.03\n")
        v = parse_panel(f).season_values(2015)
        assert v[0] == 0.01 and v[13] == 0.03

    def test_pandemic_excluded(self, tmp_path):
        f = write(tmp_path, "season,week,wili\n2008,1,0.01\n2009,1,0.01\n2010,1,0.01\n")
        assert parse_panel(f).seasons == (2010,)

    def test_boundary_clamped(self, tmp_path):
        f = write(tmp_path, "season,week,wili\n2010,1,0\n2010,2,0.02\n")
        assert parse_panel(f).season_values(2010)[0] == D.BOUNDARY_EPS

    @pytest.mark.parametrize("text", ["season,week,x\n2010,1,0.1\n",
                                      "season,week,wili\n2010,1,0.1\n2010,1,0.2\n",
                                      "season,week,wili\n2010,40,0.1\n",
                                      "season,week,wili\n2010,1,abc\n",
                                      "season,week,wili\n2010,1,-0.01\n",
                                      "season,week,wili\n"])
    def test_malformed(self, tmp_path, text):
        with pytest.raises(PanelFormatError):
            parse_panel(write(tmp_path, text))


class TestVintages:
    ROWS = [(2010, 1, 0.010, 201041), (2010, 2, 0.020, 201042),
            (2010, 1, 0.012, 201043), (2011, 1, 0.030, 201043)]

    def test_latest_revision_wins(self):
        store = VintageStore.from_rows(self.ROWS)
        assert store.issues == [201041, 201042, 201043]
        early = store.as_of(201042)
        assert early.season_values(2010)[:2] == pytest.approx([0.010, 0.020])
        assert np.isnan(early.season_values(2011)[0])
        assert store.final().season_values(2010)[0] == 0.012

    def test_missing_issue(self):
        with pytest.raises(KeyError):
            VintageStore.from_rows(self.ROWS).as_of(201050)

    def test_issue_file(self, tmp_path):
        text = "season,week,wili,issue\n" + "".join(f"{s},{w},{v},{i}\n" for s, w, v, i in self.ROWS)
        f = write(tmp_path, text)
        assert len(parse_vintages(f)) == 3
        with pytest.raises(PanelFormatError):
            parse_panel(f)
        assert parse_panel(f, issue=201041).vintage == 201041

    def test_season_week_issue_label(self, tmp_path):
        f = write(tmp_path, "season,week,wili,issue\n2010,1,0.01,2010-wk3\n")
        assert parse_vintages(f).issues == [201042]

    def test_rows_to_store(self):
        rows = [{"epiweek": 201540, "wili": 1.5, "issue": 201540},
                {"epiweek": 201530, "wili": 1.0, "issue": 201540}]
        p = rows_to_store(rows).final()
        assert p.season_values(2015)[0] == pytest.approx(0.015)


class FakeResponse:
    def __init__(self, status, doc):
        self.status_code = status
        self.content = json.dumps(doc).encode()


class TestFetch:
    DOC = {"result": 1, "epidata": [{"epiweek": 201540, "wili": 1.2, "issue": 201545}]}

    def test_caches_then_reads_offline(self, tmp_path, monkeypatch):
        calls = []

        def get(url, params, timeout):
            calls.append(params)
            return FakeResponse(200, self.DOC)

        monkeypatch.setattr(requests, "get", get)
        rows = fetch_surveillance("nat", (201540, 201620), cache_dir=tmp_path)
        again = fetch_surveillance("nat", (201540, 201620), cache_dir=tmp_path, offline=True)
        assert rows == again and len(calls) == 1

    def test_offline_miss(self, tmp_path):
        with pytest.raises(FetchError) as e:
            fetch_surveillance("nat", (201540, 201620), cache_dir=tmp_path, offline=True)
        assert not e.value.retryable

    @pytest.mark.parametrize("status,retry", [(503, True), (429, True), (404, False)])
    def test_http_errors(self, tmp_path, monkeypatch, status, retry):
        monkeypatch.setattr(requests, "get", lambda *a, **k: FakeResponse(status, {}))
        with pytest.raises(FetchError) as e:
            fetch_surveillance("nat", (201540, 201620), cache_dir=tmp_path)
        assert e.value.retryable is retry

    def test_network_failure(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise requests.ConnectionError("down")

        monkeypatch.setattr(requests, "get", boom)
        with pytest.raises(FetchError) as e:
            fetch_surveillance("nat", (201540, 201620), cache_dir=tmp_path)
        assert e.value.retryable

    def test_wrong_issue(self, tmp_path, monkeypatch):
        monkeypatch.setattr(requests, "get", lambda *a, **k: FakeResponse(200, self.DOC))
        with pytest.raises(FetchError):
            fetch_surveillance("nat", (201540, 201620), issue=201550, cache_dir=tmp_path)

    def test_api_error(self, tmp_path, monkeypatch):
        monkeypatch.setattr(requests, "get",
                            lambda *a, **k: FakeResponse(200, {"result": -2, "message": "no"}))
        with pytest.raises(FetchError):
            fetch_surveillance("nat", (201540, 201620), cache_dir=tmp_path)
        assert not list(tmp_path.iterdir())
