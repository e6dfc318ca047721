import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from dbflu import forecast as fc
from dbflu.forecast import BinnedForecast
from dbflu.scoring import (FLOOR, MissingTruth, ScoreRecord, SeasonTruth, log_score, resolve_truth,
                           score_forecast, score_submission_set, write_score_summary, write_scores)

T = 35


def pt_example():
    p = np.zeros(T)
    p[[18, 19, 20]] = [0.1, 0.3, 0.2]
    p[5] = 0.4
    return p


prob_vectors = st.lists(st.floats(0.0, 1.0), min_size=5, max_size=40).map(
    lambda v: np.array(v) / max(sum(v), 1e-12))


@st.composite
def vector_and_indices(draw):
    p = draw(prob_vectors)
    n = len(p)
    i = draw(st.integers(0, n - 1))
    src = draw(st.sampled_from([k for k in range(n) if abs(k - i) > 1]))
    return p, i, src


class TestLogScore:
    def test_worked_example(self):
        assert log_score(pt_example(), 19) == pytest.approx(math.log(0.6), abs=1e-12)
        assert abs(log_score(pt_example(), 19) - (-0.5108256237659907)) <= 1e-9

    def test_all_mass_correct(self):
        p = np.zeros(27)
        p[4] = 1
        assert log_score(p, 4) == 0.0

    def test_zero_neighbourhood(self):
        p = np.zeros(27)
        p[20] = 1
        assert log_score(p, 4) == FLOOR

    def test_floor(self):
        p = np.zeros(27)
        p[4], p[20] = 1e-6, 1 - 1e-6
        assert log_score(p, 4) == FLOOR

    def test_late(self):
        assert log_score(pt_example(), 19, late=True) == FLOOR

    def test_over_sum(self):
        p = pt_example() * 1.2
        assert log_score(p, 19) == FLOOR
        assert log_score(pt_example() * 1.09, 19) > FLOOR

    def test_negative(self):
        p = pt_example()
        p[0] = -0.1
        assert log_score(p, 19) == FLOOR

    def test_edge_clipping(self):
        p = np.zeros(27)
        p[[0, 1, 2, 26]] = [0.2, 0.3, 0.4, 0.1]
        assert log_score(p, 0) == pytest.approx(math.log(0.5))
        p = np.zeros(27)
        p[[25, 26, 0]] = [0.3, 0.5, 0.2]
        assert log_score(p, 26) == pytest.approx(math.log(0.8))

    def test_categorical_none(self):
        p = np.zeros(T + 1)
        p[T - 1], p[T] = 0.4, 0.6
        assert log_score(p, T, n_ordinal=T) == pytest.approx(math.log(0.6))
        assert log_score(p, T - 1, n_ordinal=T) == pytest.approx(math.log(0.4))

    def test_bad_index(self):
        with pytest.raises(IndexError):
            log_score(pt_example(), T)

    @given(vector_and_indices(), st.floats(0.0, 0.5))
    def test_moving_mass_in_never_hurts(self, case, amount):
        p, i, src = case
        moved = p.copy()
        amt = min(amount, moved[src])
        moved[src] -= amt
        moved[i] += amt
        assert log_score(moved, i) >= log_score(p, i) - 1e-12

    @settings(max_examples=200)
    @given(prob_vectors, st.integers(0, 39), st.randoms(use_true_random=False))
    def test_permuting_outside_neighbourhood(self, p, i, rnd):
        assume(i < len(p))
        near = set(range(max(i - 1, 0), min(i + 2, len(p))))
        far = [k for k in range(len(p)) if k not in near]
        shuffled = far.copy()
        rnd.shuffle(shuffled)
        q = p.copy()
        q[far] = p[shuffled]
        assert log_score(q, i) == log_score(p, i)

    @given(prob_vectors, st.integers(0, 39))
    def test_range(self, p, i):
        assume(i < len(p))
        assert FLOOR <= log_score(p, i) <= 0.0


class TestScoreForecast:
    def test_onset_none_flagged(self):
        p = np.zeros(T + 1)
        p[T] = 1.0
        r = score_forecast(BinnedForecast("Onset", 10, p), T)
        assert r.log_score == 0.0 and "categorical onset bin" in r.flags

    def test_wrong_bin_count(self):
        r = score_forecast(BinnedForecast("PI", 10, np.full(20, 0.05)), 3)
        assert r.log_score == FLOOR and "wrong bin count" in r.flags

    def test_record_range(self):
        with pytest.raises(ValueError):
            ScoreRecord("m", 1, "PI", 0.5, 0)


def season():
    y = np.full(T, 0.012)
    y[10:25] = 0.012 + 0.02 * np.sin(np.linspace(0, np.pi, 15))
    return y


class TestTruth:
    def test_targets(self):
        y = season()
        truth = resolve_truth(y, 2015)
        assert truth.bins["PI"] == fc.intensity_bin(y.max())
        assert truth.bins["PT"] == int(np.argmax(y))
        assert truth.bins["Onset"] == fc.onset_week(y) - 1

    def test_peak_0312(self):
        y = np.full(T, 0.01)
        y[15] = 0.0312
        assert resolve_truth(y).bins["PI"] == 6

    def test_no_onset(self):
        assert resolve_truth(np.full(T, 0.01)).bins["Onset"] == T

    def test_ahead_direct_indexing(self):
        y = season()
        truth = resolve_truth(y)
        for w in range(3, 31):
            for k in fc.AHEAD:
                if w + k <= T:
                    assert truth.index(f"{k}wk", w) == fc.intensity_bin(y[w + k - 1])
        with pytest.raises(MissingTruth):
            truth.index("4wk", 32)

    def test_incomplete(self):
        y = season()
        y[[33, 34]] = np.nan
        with pytest.raises(ValueError, match=r"\[34, 35\]"):
            resolve_truth(y, 1999)


class TestSets:
    def test_single(self):
        y = season()
        truth = resolve_truth(y)
        p = np.zeros(27)
        p[truth.bins["PI"]] = 0.5
        s = score_submission_set([BinnedForecast("PI", 5, p)], truth)
        assert s.overall == s.per_target["PI"] == pytest.approx(math.log(0.5))

    def test_overall_mean_of_targets(self):
        truth = SeasonTruth(1, {"PI": 3, "PT": 10})
        pi = np.zeros(27)
        pi[3] = math.exp(-1)
        pt = np.zeros(T)
        pt[10] = math.exp(-3)
        s = score_submission_set([BinnedForecast("PI", 4, pi), BinnedForecast("PT", 4, pt)], truth)
        assert s.overall == pytest.approx(-2.0)

    def test_late_missing_scores_floor(self):
        truth = SeasonTruth(1, {"PI": 3, "PT": 10})
        p = np.zeros(27)
        p[3] = 1
        s = score_submission_set([BinnedForecast("PI", 4, p)], truth, late=[("PT", 4)],
                                 expected=[("PI", 4), ("PT", 4)])
        assert s.per_target == {"PI": 0.0, "PT": FLOOR}

    def test_missing_not_late(self):
        truth = SeasonTruth(1, {"PI": 3, "PT": 10})
        with pytest.raises(ValueError):
            score_submission_set([], truth, expected=[("PI", 4)])

    def test_missing_truth(self):
        with pytest.raises(MissingTruth):
            score_submission_set([BinnedForecast("PT", 4, np.full(T, 1 / T))], SeasonTruth(1, {}))

    def test_files(self, tmp_path):
        truth = SeasonTruth(1, {"PT": 19})
        s = score_submission_set([BinnedForecast("PT", 13, pt_example())], truth, model="db")
        write_scores(s.records, tmp_path / "s.csv")
        write_score_summary({"db": s}, tmp_path / "m.csv")
        rows = (tmp_path / "s.csv").read_text().splitlines()
        assert rows[0] == "model,week,target,truth_bin,log_score,flags"
        assert rows[1].startswith("db,13,PT,19,-0.5108256237")
        assert (tmp_path / "m.csv").read_text().splitlines()[-1].startswith("db,overall,-0.51")
