"""Tests for the clear-sky irradiance model and pyranometer corrections."""

import math

import numpy as np
import pytest

from skyflow.irradiance import (
    AmplitudeModel,
    DescentResult,
    GsiParams,
    IrradianceSeries,
    amplitude_ratio,
    clear_sky_index,
    correct_shift,
    fit_amplitude_model,
    fit_day_params,
    gsi_gradient,
    gsi_model,
    snap_shifts,
    steepest_descent,
    theoretical_params,
    _amplitude_loss,
    _mean_abs_residual_loss,
)


def central_difference(fun, theta, h=1e-6):
    """Finite-difference gradient oracle (central differences)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        hp = h * max(1.0, abs(theta[i]))
        up, down = theta.copy(), theta.copy()
        up[i] += hp
        down[i] -= hp
        grad[i] = (fun(up) - fun(down)) / (2 * hp)
    return grad


def _day_curve(day, sigma_d, n, t0=6.0, dt=12.0 / 600.0):
    t = t0 + np.arange(n) * dt
    elev = np.clip(np.sin(np.pi * (t - 6.0) / 12.0) * math.radians(70.0),
                   1e-3, None)
    params = theoretical_params(day)
    return t, elev, gsi_model(params, elev) * sigma_d, params


def make_clear_day(day=150, sigma_d=1.0, n=400):
    """One synthetic clear day: model GHI at half-sine elevations, 6h-18h."""
    t, elev, ghi, params = _day_curve(day, sigma_d, n, dt=12.0 / n)
    return IrradianceSeries(t * 3600.0, ghi, elev, day), params


def make_shifted_pair(day=100, shift=40, n=800):
    """A (measured, theoretical) pair where the measurement is an exact
    sample-for-sample translate of the theoretical curve: measured[t] =
    theoretical[t - shift]. Both share timestamps and elevations.

    The window starts before dawn and ends after dusk so the daylight bump
    is compactly supported and correlation-edge truncation is unbiased.
    """
    pad = abs(shift)
    _, elev_long, g_long, _ = _day_curve(day, 1.0, n + pad, t0=4.0)
    t = 4.0 + np.arange(n) * (12.0 / 600.0)
    if shift >= 0:
        theo_ghi, meas_ghi = g_long[pad:], g_long[:n]
        elev = elev_long[pad:]
    else:
        theo_ghi, meas_ghi = g_long[:n], g_long[pad:]
        elev = elev_long[:n]
    theo = IrradianceSeries(t * 3600.0, theo_ghi, elev, day)
    meas = IrradianceSeries(t * 3600.0, meas_ghi, elev, day)
    return meas, theo


class TestGsiModel:

    def test_direct_term_only_at_zenith(self):
        p = GsiParams(1000.0, 0.2, 0.0, 0.0)
        assert gsi_model(p, math.pi / 2) == pytest.approx(1000.0 * math.exp(-0.2))

    def test_reflected_term_zeroed(self):
        p0 = GsiParams(1000.0, 0.2, 0.3, 0.0)
        eps = 0.8
        dn = 1000.0 * math.exp(-0.2 / math.sin(eps))
        expected = dn * math.sin(eps) + 0.3 * dn / 2.0
        assert gsi_model(p0, eps) == pytest.approx(expected)

    def test_theoretical_peak_plausible(self):
        # brute-force sweep: zenith value within the physical clear-sky band
        for d in range(1, 366):
            v = gsi_model(theoretical_params(d), math.pi / 2)
            assert 900.0 < v < 1300.0

    def test_strictly_increasing_in_elevation(self):
        p = GsiParams(1100.0, 0.18, 0.1, 0.05)
        eps = np.linspace(0.05, math.pi / 2, 300)
        values = gsi_model(p, eps)
        assert np.all(np.diff(values) > 0)

    def test_nonpositive_elevation_rejected(self):
        with pytest.raises(ValueError):
            gsi_model(GsiParams(1000.0, 0.2, 0.1), 0.0)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            GsiParams(-5.0, 0.2, 0.1)
        with pytest.raises(ValueError):
            GsiParams(1000.0, 0.2, -0.1)


class TestTheoreticalParams:

    def test_sine_zero_days(self):
        p = theoretical_params(275)
        assert p.theta1 == pytest.approx(1160.0)
        p = theoretical_params(27)
        assert p.theta2 == pytest.approx(0.174)
        assert p.theta3 == pytest.approx(0.095)
        assert p.theta4 == 0.0

    def test_quarter_period(self):
        p = theoretical_params(275 + 91)
        assert p.theta1 == pytest.approx(1235.0, abs=1.0)


class TestSteepestDescent:

    def test_quadratic_bowl(self):
        fun = lambda x: ((x[0] - 3.0) ** 2, np.array([2.0 * (x[0] - 3.0)]))
        res = steepest_descent(fun, np.array([0.0]), step=5e-5, tol=1e-10)
        assert res.params[0] == pytest.approx(3.0, abs=1e-4)
        assert res.loss <= fun(np.array([0.0]))[0]

    def test_fixed_point_at_minimum(self):
        fun = lambda x: ((x[0] - 3.0) ** 2, np.array([2.0 * (x[0] - 3.0)]))
        res = steepest_descent(fun, np.array([3.0]), step=1e-3)
        assert res.n_iters <= 1
        assert res.params[0] == 3.0

    def test_rosenbrock_monotone_trace(self):
        def rosen(x):
            a, b = 1.0, 100.0
            loss = (a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2
            grad = np.array([
                -2 * (a - x[0]) - 4 * b * x[0] * (x[1] - x[0] ** 2),
                2 * b * (x[1] - x[0] ** 2),
            ])
            return loss, grad
        res = steepest_descent(rosen, np.array([-1.0, 1.0]), step=1e-3,
                               max_iters=20_000, keep_trace=True)
        diffs = np.diff(res.trace)
        assert np.all(diffs <= 0)
        assert res.loss < rosen(np.array([-1.0, 1.0]))[0]

    def test_nan_loss_aborts(self):
        fun = lambda x: (float("nan"), np.array([1.0]))
        with pytest.raises(FloatingPointError):
            steepest_descent(fun, np.array([0.0]), step=1e-3)

    def test_bad_step_rejected(self):
        with pytest.raises(ValueError):
            steepest_descent(lambda x: (0.0, x), np.array([0.0]), step=0.0)


class TestFitDayParams:

    def test_round_trip_recovery(self):
        # data synthesized at the theoretical coefficients, fit from the
        # default (theoretical) initialization: exact noiseless round trip
        series, truth = make_clear_day(day=150, sigma_d=1.0)
        fitted, res = fit_day_params(series)
        assert np.all(np.abs(fitted.as_array()[:3] / truth.as_array()[:3] - 1)
                      < 1e-3)

    def test_amplitude_scaled_day_curve_recovery(self):
        # with an amplitude bias the (theta1, theta2) pair is only weakly
        # identifiable, but the fitted curve must match the generator curve
        series, truth = make_clear_day(day=150, sigma_d=1.13)
        target = GsiParams(truth.theta1 * 1.13, truth.theta2, truth.theta3)
        fitted, res = fit_day_params(series, step=3e-5)
        mask = series.elevation > math.radians(15)
        rel = np.abs(gsi_model(fitted, series.elevation[mask])
                     / gsi_model(target, series.elevation[mask]) - 1.0)
        assert np.max(rel) < 1e-3
        # the recovered amplitude ratio against the theoretical curve is the
        # quantity consumed downstream
        r = amplitude_ratio(fitted, truth, series.elevation[mask])
        assert r == pytest.approx(1.13, rel=1e-3)

    def test_init_at_optimum_is_fixed_point(self):
        series, truth = make_clear_day(day=80, sigma_d=1.0)
        fitted, res = fit_day_params(series, init=truth)
        assert res.n_iters <= 1 or res.loss < 1e-9

    def test_never_worse_than_init(self):
        series, truth = make_clear_day(day=40, sigma_d=1.4)
        init = theoretical_params(40)
        mask = series.elevation > math.radians(15)
        loss0, _ = _mean_abs_residual_loss(init.as_array(), series.ghi[mask],
                                           series.elevation[mask])
        _, res = fit_day_params(series, init=init)
        assert res.loss <= loss0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        eps = rng.uniform(0.3, 1.5, size=64)
        y = rng.uniform(200.0, 1100.0, size=64)
        for _ in range(20):
            theta = np.array([
                rng.uniform(900, 1400),
                rng.uniform(0.1, 0.3),
                rng.uniform(0.01, 0.5),
                rng.uniform(0.0, 0.3),
            ])
            _, grad = _mean_abs_residual_loss(theta, y, eps)
            fd = central_difference(
                lambda th: _mean_abs_residual_loss(th, y, eps)[0], theta)
            assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


class TestAmplitudeModel:

    @staticmethod
    def _synthesize(model, days):
        _, ref_params = make_clear_day(1)
        refs = []
        sigmas = []
        for d in days:
            series, params = make_clear_day(day=int(d), sigma_d=1.0)
            mask = series.elevation > math.radians(15)
            refs.append(gsi_model(params, series.elevation[mask]))
            sigmas.append((d, float(model(d))))
        return sigmas, refs

    def test_round_trip_recovery(self):
        truth = AmplitudeModel(0.2, 0.8, 1.3)
        days = np.arange(5, 365, 10)
        sigmas, refs = self._synthesize(truth, days)
        fitted, res = fit_amplitude_model(sigmas, refs)
        d = np.arange(1, 366)
        assert np.max(np.abs(fitted(d) - truth(d))) < 2e-3

    def test_constant_sigmas_degenerate(self):
        days = np.arange(10, 360, 15)
        sigmas, refs = self._synthesize(AmplitudeModel(0.0, 0.0, 1.0), days)
        fitted, _ = fit_amplitude_model(sigmas, refs)
        assert abs(fitted.theta1) < 0.02
        d = np.arange(1, 366)
        assert np.max(np.abs(fitted(d) - 1.0)) < 0.02

    def test_fitted_range_property(self):
        truth = AmplitudeModel(0.35, 2.1, 1.45)
        days = np.arange(3, 365, 7)
        sigmas, refs = self._synthesize(truth, days)
        fitted, _ = fit_amplitude_model(sigmas, refs)
        values = np.asarray([s for _, s in sigmas])
        d = np.arange(1, 366)
        out = fitted(d)
        assert out.min() > values.min() - 0.1
        assert out.max() < values.max() + 0.1

    def test_needs_three_days(self):
        with pytest.raises(ValueError):
            fit_amplitude_model([(1, 1.0), (2, 1.1)], [np.ones(3)] * 2)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        days = np.array([20.0, 120.0, 250.0, 333.0])
        sig = rng.uniform(1.0, 2.0, size=4)
        g = rng.uniform(300, 1000, size=120)
        day_idx = np.repeat(np.arange(4), 30)
        y = sig[day_idx] * g
        for _ in range(20):
            theta = rng.uniform(0.2, 2.0, size=3)
            _, grad = _amplitude_loss(theta, day_idx, days, y, g, 365.0)
            fd = central_difference(
                lambda th: _amplitude_loss(th, day_idx, days, y, g, 365.0)[0],
                theta, h=1e-7)
            assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_amplitude_ratio(self):
        series, params = make_clear_day(day=200)
        scaled = GsiParams(params.theta1 * 1.25, params.theta2, params.theta3)
        mask = series.elevation > math.radians(15)
        r = amplitude_ratio(scaled, params, series.elevation[mask])
        assert r == pytest.approx(1.25, rel=1e-6)


class TestCorrectShift:

    def test_zero_lag_identity(self):
        series, _ = make_clear_day(day=100)
        corrected, shift = correct_shift(series, series)
        assert shift == 0
        assert np.allclose(corrected.ghi, series.ghi)
        assert len(corrected) == len(series)

    def test_synthetic_delay_round_trip(self):
        delayed, theo = make_shifted_pair(day=100, shift=40)
        corrected, shift = correct_shift(delayed, theo)
        assert shift == 40
        assert len(corrected) == len(theo) - 40
        peak_corr = np.argmax(corrected.ghi)
        peak_theo_slice = np.argmax(theo.ghi[40:])
        assert abs(int(peak_corr) - int(peak_theo_slice)) <= 1

    def test_csi_flat_after_correction(self):
        delayed, theo = make_shifted_pair(day=100, shift=25)
        corrected, shift = correct_shift(delayed, theo)
        ref = IrradianceSeries(theo.timestamps[shift:], theo.ghi[shift:],
                               theo.elevation[shift:], theo.day_of_year)
        _, csi = clear_sky_index(corrected, ref)
        assert np.all(np.abs(csi - 1.0) < 0.02)

    def test_idempotent(self):
        delayed, theo = make_shifted_pair(day=100, shift=-30)
        corrected, shift = correct_shift(delayed, theo)
        assert shift == -30
        ref = IrradianceSeries(theo.timestamps[:len(corrected)],
                               theo.ghi[:len(corrected)],
                               theo.elevation[:len(corrected)],
                               theo.day_of_year)
        _, shift2 = correct_shift(corrected, ref)
        assert shift2 == 0

    def test_alignment_failure(self):
        # bumps at opposite ends: the best alignment exceeds half the length
        n = 200
        t = np.arange(n, dtype=float)
        theo_ghi = 800.0 * np.exp(-0.5 * ((t - 40.0) / 10.0) ** 2)
        meas_ghi = 800.0 * np.exp(-0.5 * ((t - 160.0) / 10.0) ** 2)
        elev = np.full(n, math.radians(45.0))
        theo = IrradianceSeries(t, theo_ghi, elev, 100)
        meas = IrradianceSeries(t, meas_ghi, elev, 100)
        with pytest.raises(ValueError):
            correct_shift(meas, theo)


class TestClearSkyIndex:

    def test_self_ratio_is_one(self):
        series, _ = make_clear_day(day=150)
        _, csi = clear_sky_index(series, series)
        assert np.allclose(csi, 1.0)

    def test_scaling(self):
        series, _ = make_clear_day(day=150)
        half = IrradianceSeries(series.timestamps, series.ghi * 0.5,
                                series.elevation, series.day_of_year)
        _, csi = clear_sky_index(half, series)
        assert np.allclose(csi, 0.5)

    def test_restricted_to_high_sun(self):
        series, _ = make_clear_day(day=150)
        ts, csi = clear_sky_index(series, series)
        assert len(ts) == int(np.sum(series.elevation > math.radians(15)))


class TestSeriesValidation:

    def test_lengths_must_match(self):
        with pytest.raises(ValueError):
            IrradianceSeries(np.arange(5), np.ones(4), np.ones(5), 1)

    def test_monotone_timestamps(self):
        with pytest.raises(ValueError):
            IrradianceSeries(np.array([2.0, 1.0]), np.ones(2), np.ones(2), 1)

    def test_negative_ghi_rejected(self):
        with pytest.raises(ValueError):
            IrradianceSeries(np.arange(2.0), np.array([1.0, -1.0]), np.ones(2), 1)


class TestSnapShifts:

    def test_four_levels(self):
        rng = np.random.default_rng(0)
        levels = np.array([-40.0, -10.0, 15.0, 42.0])
        obs = np.concatenate([lv + rng.normal(0, 1.0, 25) for lv in levels])
        snapped = snap_shifts(obs, n_levels=4)
        assert len(np.unique(snapped)) == 4
        for lv in levels:
            assert np.min(np.abs(np.unique(snapped) - lv)) < 1.0
