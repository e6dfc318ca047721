import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from dbflu.sir import (Designation, SirParams, SirSolverError, classify_epidemic, rk4_stages,
                       rk4_step, solve_sir)

FIG3 = SirParams(s0=0.9, i0=0.005, beta=0.8, rho=0.55 / 0.8)
# one unit step from (0.9, 0.005, 0.095), beta=0.8, gamma=0.55, by DOP853 at rtol 1e-13
ONE_STEP_REF = (0.8960864784157315, 0.005917507328300045, 0.09799601425596839)
PEAK_REF = (19, 0.03231628049601294)


def reference_path(p, T):
    def rhs(t, x):
        s, i, _ = x
        return [-p.beta * s * i, p.beta * s * i - p.gamma * i, p.gamma * i]

    sol = solve_ivp(rhs, (0, T - 1), [p.s0, p.i0, p.r0], method="DOP853", rtol=1e-13,
                    atol=1e-15, t_eval=np.arange(T))
    return sol.y


params_strategy = st.builds(
    lambda i0, beta, rho: SirParams(0.9, i0, beta, rho),
    st.floats(1e-5, 0.0999), st.floats(0.05, 3.0), st.floats(0.05, 0.9))


class TestParams:
    def test_r0_is_derived(self):
        assert FIG3.r0 == pytest.approx(0.095, abs=1e-15)
        assert FIG3.s0 + FIG3.i0 + FIG3.r0 == 1.0

    def test_gamma(self):
        assert FIG3.gamma == pytest.approx(0.55)

    @pytest.mark.parametrize("kw", [dict(s0=1.2, i0=0.0, beta=1, rho=1),
                                    dict(s0=0.9, i0=0.2, beta=1, rho=1),
                                    dict(s0=0.9, i0=0.01, beta=0, rho=1),
                                    dict(s0=0.9, i0=0.01, beta=1, rho=-1),
                                    dict(s0=0.9, i0=float("nan"), beta=1, rho=1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SirParams(**kw)


class TestStep:
    def test_zero_infectious_is_fixed_point(self):
        assert rk4_step((0.9, 0.0, 0.1), 1.7, 0.3) == (0.9, 0.0, 0.1)

    def test_zero_rates_leave_state(self):
        assert rk4_step((0.8, 0.05, 0.15), 0.0, 0.0) == (0.8, 0.05, 0.15)

    def test_matches_reference_integrator(self):
        got = rk4_step((0.9, 0.005, 0.095), 0.8, 0.55)
        np.testing.assert_allclose(got, ONE_STEP_REF, rtol=0, atol=1e-6)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            rk4_step((0.9, float("nan"), 0.1), 0.8, 0.55)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_stage_increments_balance(self, s, i, beta, gamma):
        i = min(i, 1 - s)
        k = rk4_stages((s, i, 1 - s - i), beta, gamma)
        for n in range(4):
            assert abs(k[n] + k[4 + n] + k[8 + n]) <= 1e-12

    @given(st.floats(0.0, 1.0), st.floats(0.0, 0.5), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
    def test_mass_conserved(self, s, i, beta, gamma):
        i = min(i, 1 - s)
        out = rk4_step((s, i, 1 - s - i), beta, gamma)
        assert abs(sum(out) - 1.0) <= 1e-12


class TestSolve:
    def test_fig3_against_reference(self):
        tr = solve_sir(FIG3)
        ref = reference_path(FIG3, 35)
        assert np.abs(np.vstack([tr.s, tr.i, tr.r]) - ref).max() <= 1e-5

    def test_fig3_peak(self):
        tr = solve_sir(FIG3)
        assert tr.peak_week == PEAK_REF[0]
        assert abs(tr.i.max() - PEAK_REF[1]) <= 1e-5

    def test_fig3_single_peak(self):
        i = solve_sir(FIG3).i
        k = int(np.argmax(i))
        assert np.all(np.diff(i[: k + 1]) > 0) and np.all(np.diff(i[k:]) < 0)

    def test_week_one_is_initial_condition(self):
        tr = solve_sir(FIG3)
        assert (tr.s[0], tr.i[0], tr.r[0]) == (0.9, 0.005, FIG3.r0)
        assert len(tr) == 35

    def test_zero_initial_infectious(self):
        tr = solve_sir(SirParams(0.9, 0.0, 0.8, 0.7))
        assert np.all(tr.i == 0)

    def test_halving_step(self):
        one = solve_sir(FIG3).i
        two = solve_sir(FIG3, substeps=2).i
        assert np.abs(one - two).max() <= 1e-6

    def test_blow_up_reported(self):
        with pytest.raises(SirSolverError):
            solve_sir(SirParams(0.9, 0.09, 60.0, 0.5))

    def test_bad_T(self):
        with pytest.raises(ValueError):
            solve_sir(FIG3, T=0)

    @settings(max_examples=200, deadline=None)
    @given(params_strategy)
    def test_trajectory_invariants(self, p):
        tr = solve_sir(p)
        total = tr.s + tr.i + tr.r
        assert np.abs(total - 1).max() <= 1e-8
        assert np.all(np.diff(tr.s) <= 1e-10)
        assert np.all(np.diff(tr.r) >= -1e-10)
        assert np.all((tr.i >= 0) & (tr.i <= 1))


class TestClassify:
    def test_fig3_is_epidemic(self):
        assert classify_epidemic(SirParams(0.9, 0.005, 0.8, 0.6875)) is Designation.EPIDEMIC

    def test_tie_is_non_epidemic(self):
        assert classify_epidemic(SirParams(0.5, 0.01, 1.0, 0.5)) is Designation.NON_EPIDEMIC

    def test_rho_above_s0_monotone(self):
        p = SirParams(0.9, 0.005, 0.8, 0.91)
        assert classify_epidemic(p) is Designation.NON_EPIDEMIC
        assert np.all(np.diff(solve_sir(p).i) < 0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.3, 0.95), st.floats(1e-4, 0.01), st.floats(0.1, 1.5), st.floats(0.1, 1.2))
    def test_shape_over_long_horizon(self, s0, i0, beta, rho):
        i0 = min(i0, 1 - s0)
        p = SirParams(s0, i0, beta, rho)
        i = solve_sir(p, T=200).i
        d = np.diff(i)
        if classify_epidemic(p) is Designation.EPIDEMIC:
            k = int(np.argmax(i))
            assert k > 0
            assert np.all(d[:k] > 0) and np.all(d[k:] <= 0)
        else:
            assert np.all(d <= 0)
