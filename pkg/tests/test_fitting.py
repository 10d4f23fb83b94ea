import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from dvfstune.exceptions import (
    DegenerateInputError,
    DomainError,
    FitError,
    InsufficientPointsError,
)
from dvfstune.fitting import (
    KneeRegressor,
    LinearPowerRegressor,
    SuperlinearPowerRegressor,
    fit_knee,
    fit_power_linear,
    fit_power_superlinear,
    regime_profile,
)
from dvfstune.model import PerfModel, PowerModel, Regime, Superlinear, predict_power, predict_time
from dvfstune.replay import GPU_GRID_13

KNEE_GRID = (500.0, 550.0, 600.0, 650.0, 700.0, 750.0, 800.0, 850.0)


def line(m, ps, freqs):
    return [(f, m * f + ps) for f in freqs]


class TestLinear:
    def test_recovers_published_propagate_fit(self):
        r = fit_power_linear(line(0.096, 42.94, GPU_GRID_13))
        assert r.params.m == pytest.approx(0.096, abs=1e-9)
        assert r.params.p_static == pytest.approx(42.94, abs=1e-9)
        assert r.n_points == 13

    def test_two_points_interpolate(self):
        r = fit_power_linear([(100.0, 52.54), (200.0, 62.14)])
        assert r.params.m == pytest.approx(0.096, abs=1e-12)
        assert r.params.p_static == pytest.approx(42.94, abs=1e-10)
        assert r.rms_residual == pytest.approx(0.0, abs=1e-12)

    def test_flat_line(self):
        r = fit_power_linear([(f, 77.0) for f in (500.0, 600.0, 700.0)])
        assert r.params.m == 0.0
        assert r.params.p_static == pytest.approx(77.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            fit_power_linear([(600.0, 1.0), (600.0, 2.0)])

    def test_too_few(self):
        with pytest.raises(InsufficientPointsError):
            fit_power_linear([(600.0, 1.0)])

    def test_negative_slope_is_unphysical(self):
        with pytest.raises(FitError):
            fit_power_linear([(500.0, 100.0), (600.0, 90.0)])

    @given(st.floats(0.0, 1.0), st.floats(1.0, 300.0), st.floats(-50.0, 50.0))
    def test_noiseless_recovery_and_offset_equivariance(self, m, ps, shift):
        pts = line(m, ps, GPU_GRID_13)
        r = fit_power_linear(pts)
        assert r.params.m == pytest.approx(m, rel=1e-9, abs=1e-12)
        assert r.params.p_static == pytest.approx(ps, rel=1e-9)
        if ps + shift > 0:
            s = fit_power_linear([(f, p + shift) for f, p in pts])
            assert s.params.m == pytest.approx(r.params.m, rel=1e-9, abs=1e-12)
            assert s.params.p_static == pytest.approx(r.params.p_static + shift, rel=1e-9, abs=1e-9)

    def test_estimator_contract(self):
        est = LinearPowerRegressor()
        assert est.get_params() == {}
        X = np.array(GPU_GRID_13)[:, None]
        y = 0.096 * X[:, 0] + 42.94
        assert est.fit(X, y) is est
        assert est.score(X, y) == pytest.approx(1.0)
        assert clone(est).get_params() == {}
        np.testing.assert_allclose(est.predict(X), y, rtol=1e-12)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            LinearPowerRegressor().fit([500.0, 600.0], [1.0, float("nan")])


COLLIDE_LINEAR = PowerModel(0.109, 42.50)
UPPER = (650.0, 666.0, 692.0, 718.0, 745.0, 771.0, 797.0, 823.0, 849.0, 875.0)


class TestSuperlinear:
    def collide_points(self, freqs=UPPER):
        full = PowerModel(0.109, 42.50, Superlinear(0.005, 0.0099, 650.0))
        return [(f, predict_power(full, f)) for f in freqs]

    def test_recovers_published_exponential(self):
        r = fit_power_superlinear(self.collide_points(), COLLIDE_LINEAR, 650.0)
        sl = r.params.superlinear
        assert sl.a == pytest.approx(0.005, rel=1e-6)
        assert sl.b == pytest.approx(0.0099, rel=1e-6)
        assert sl.f_knee == 650.0
        assert (r.params.m, r.params.p_static) == (0.109, 42.50)

    def test_two_points_exact(self):
        pts = [(700.0, 10.0 + 2.0), (800.0, 10.0 + 20.0)]
        r = fit_power_superlinear(pts, PowerModel(0.0, 10.0), 650.0)
        assert r.params.superlinear.b == pytest.approx(math.log(10.0) / 100.0, rel=1e-12)
        assert r.params.superlinear.a == pytest.approx(2.0 / math.exp(7 * math.log(10.0)), rel=1e-9)

    def test_points_below_knee_are_ignored(self):
        pts = self.collide_points() + [(562.0, 1000.0)]
        r = fit_power_superlinear(pts, COLLIDE_LINEAR, 650.0)
        assert r.n_points == len(UPPER)

    def test_non_positive_residual(self):
        pts = self.collide_points()
        pts[3] = (pts[3][0], 0.109 * pts[3][0] + 42.50)
        with pytest.raises(DomainError, match="718"):
            fit_power_superlinear(pts, COLLIDE_LINEAR, 650.0)

    def test_needs_two_points_above_knee(self):
        with pytest.raises(InsufficientPointsError):
            fit_power_superlinear(self.collide_points((875.0,)), COLLIDE_LINEAR, 650.0)

    def test_get_params(self):
        est = SuperlinearPowerRegressor(m=0.1, p_static=40.0, f_knee=650.0)
        assert est.get_params() == {"m": 0.1, "p_static": 40.0, "f_knee": 650.0}


def knee_points(knee, grid=KNEE_GRID, k=1000.0):
    perf = PerfModel(k, 1.0 / knee)
    return [(f, predict_time(perf, f)) for f in grid]


class TestKnee:
    @pytest.mark.parametrize("knee", KNEE_GRID)
    def test_noiseless_knee_on_grid(self, knee):
        est = KneeRegressor().fit(*zip(*knee_points(knee)))
        assert est.knee_ == knee
        r = fit_knee(knee_points(knee))
        assert r.params.crossover == pytest.approx(knee, rel=1e-15)
        assert r.params.k == pytest.approx(1000.0, rel=1e-12)

    def test_constant_f_times_t_puts_knee_on_top(self):
        pts = [(f, 1000.0 / f) for f in KNEE_GRID]
        assert KneeRegressor().fit(*zip(*pts)).knee_ == KNEE_GRID[-1]
        assert all(reg is Regime.COMPUTE_BOUND for _, reg in regime_profile(pts))

    def test_constant_time_puts_knee_at_bottom(self):
        pts = [(f, 2.0) for f in KNEE_GRID]
        assert KneeRegressor().fit(*zip(*pts)).knee_ == KNEE_GRID[0]
        labels = [reg for _, reg in regime_profile(pts)]
        assert labels[0] is Regime.COMPUTE_BOUND  # the knee itself
        assert all(reg is Regime.MEMORY_BOUND for reg in labels[1:])

    def test_replay_profiles(self):
        prop = regime_profile(knee_points(650.0, GPU_GRID_13 + (650.0,)))
        assert [f for f, r in prop if r is Regime.MEMORY_BOUND] == [f for f in sorted(GPU_GRID_13) if f > 650]
        coll = regime_profile(knee_points(797.0, GPU_GRID_13))
        assert [f for f, r in coll if r is Regime.MEMORY_BOUND] == [823.0, 849.0, 875.0]

    def test_input_order_irrelevant(self):
        pts = knee_points(650.0)
        assert fit_knee(pts[::-1]) == fit_knee(pts)

    def test_errors(self):
        with pytest.raises(InsufficientPointsError):
            fit_knee(knee_points(650.0)[:3])
        pts = knee_points(650.0)
        with pytest.raises(FitError, match="duplicate"):
            fit_knee(pts + [pts[0]])

    @given(st.lists(st.floats(100.0, 2000.0), min_size=4, max_size=15, unique=True),
           st.lists(st.floats(1e-3, 10.0), min_size=15, max_size=15))
    def test_chosen_knee_has_minimal_residual(self, freqs, times):
        est = KneeRegressor().fit(freqs, times[: len(freqs)])
        f = np.sort(np.asarray(freqs))
        t = np.asarray(times[: len(freqs)])[np.argsort(freqs)]
        y = f * t
        best = None
        for knee in f:
            g = np.where(f <= knee, 1.0, f / knee)
            c = (g @ y) / (g @ g)
            sse = float(np.sum((y - c * g) ** 2))
            if best is None or sse < best[0] * (1 - 1e-9):
                best = (sse, knee)
        assert est.rms_residual_ <= math.sqrt(best[0] / len(f)) * (1 + 1e-9) + 1e-12
        assert est.rms_residual_ == pytest.approx(math.sqrt(min(est.candidate_sse_) / len(f)))

    def test_predict_returns_seconds(self):
        est = KneeRegressor().fit(*zip(*knee_points(650.0)))
        np.testing.assert_allclose(est.predict([600.0, 800.0]), [1000.0 / 600.0, 1000.0 / 650.0], rtol=1e-12)


def noisy_slopes(trials, freqs, sigma, seed):
    rng = np.random.default_rng(seed)
    f = np.asarray(freqs)
    out = []
    for _ in range(trials):
        p = 0.096 * f + 42.94 + rng.normal(0.0, sigma, f.size)
        out.append(fit_power_linear(zip(f, p)).params.m)
    return np.asarray(out)


@pytest.mark.xfail(strict=True, reason=(
    "one 2 W reading per clock over 562-875 MHz gives a slope s.d. near 0.006 W/MHz, "
    "about 6% of 0.096, so only ~60% of trials land within 5%"))
def test_single_reading_noise_meets_five_percent():
    slopes = noisy_slopes(1000, GPU_GRID_13, 2.0, seed=7)
    assert np.mean(np.abs(slopes / 0.096 - 1) <= 0.05) >= 0.95


def test_averaged_readings_meet_five_percent():
    # 100 readings per clock shrink the per-point noise tenfold
    slopes = noisy_slopes(1000, GPU_GRID_13, 2.0 / 10.0, seed=7)
    assert np.mean(np.abs(slopes / 0.096 - 1) <= 0.05) >= 0.95
