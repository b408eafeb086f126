"""Tests for IR radiometry and weather-derived quantities."""

import math

import numpy as np
import pytest

from skyflow.radiometry import (
    DRY_LAPSE,
    WeatherSample,
    cloud_base_height,
    intensity_to_kelvin,
    kelvin_to_celsius,
    kelvin_to_intensity,
    mixing_ratio,
    moist_adiabatic_lapse,
    read_weather_csv,
    saturation_vapor_pressure,
    spread_to_cloud_base,
)


class TestIntensityConversion:

    def test_room_temperature(self):
        k = intensity_to_kelvin(29315)
        assert k == pytest.approx(293.15)
        assert kelvin_to_celsius(k) == pytest.approx(20.0)

    def test_zero(self):
        assert intensity_to_kelvin(0) == 0.0

    def test_round_trip_exact_for_centikelvin(self):
        # integer intensities survive the kelvin round trip after the
        # storage-side integer rounding
        grid = np.arange(0.0, 65536.0, 97.0)
        back = np.round(kelvin_to_intensity(intensity_to_kelvin(grid)))
        assert np.array_equal(back, grid)
        assert np.allclose(kelvin_to_intensity(intensity_to_kelvin(grid)),
                           grid, rtol=0, atol=1e-9)

    def test_linear(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 30000, size=(6, 8)).astype(float)
        b = rng.integers(0, 30000, size=(6, 8)).astype(float)
        assert np.allclose(intensity_to_kelvin(a + b),
                           intensity_to_kelvin(a) + intensity_to_kelvin(b))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            intensity_to_kelvin(70000)


class TestLapseRate:

    def test_dry_limit(self):
        # vanishing moisture: lapse approaches g/c_pd within 1e-6
        w = WeatherSample(288.15, 120.0, 101325.0)  # r_v ~ 3e-7
        gamma = moist_adiabatic_lapse(w)
        assert gamma == pytest.approx(DRY_LAPSE, abs=1e-6)
        assert DRY_LAPSE == pytest.approx(0.00977, abs=1e-5)

    def test_monotone_approach_to_dry_rate(self):
        dews = [283.15, 263.15, 233.15, 193.15, 150.0]
        gammas = [moist_adiabatic_lapse(WeatherSample(288.15, d, 101325.0))
                  for d in dews]
        assert all(a < b for a, b in zip(gammas, gammas[1:]))
        assert all(g < DRY_LAPSE for g in gammas)

    def test_typical_moist_value(self):
        w = WeatherSample(293.15, 283.15, 101325.0)
        gamma = moist_adiabatic_lapse(w)
        assert 0.0035 < gamma < 0.0065

    def test_always_below_dry_rate(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = rng.uniform(260.0, 315.0)
            dew = t - rng.uniform(0.5, 30.0)
            w = WeatherSample(t, dew, rng.uniform(70000.0, 105000.0))
            gamma = moist_adiabatic_lapse(w)
            assert 0.0 < gamma < DRY_LAPSE
            assert mixing_ratio(w) > 0

    def test_nonphysical_humidity(self):
        # pressure below the vapor pressure cannot happen physically
        w = WeatherSample(320.15, 320.15, 500.0)
        with pytest.raises(ValueError):
            moist_adiabatic_lapse(w)

    def test_printed_form_far_smaller(self):
        # the transcribed leading factor yields near-sub-pascal pressures
        e_std = saturation_vapor_pressure(283.15)
        e_printed = saturation_vapor_pressure(283.15, printed_form=True)
        assert e_std > 700.0
        assert e_printed < 200.0
        assert e_printed / e_std == pytest.approx(0.622 / 6.1078)

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            WeatherSample(280.0, 285.0, 101325.0)
        with pytest.raises(ValueError):
            WeatherSample(280.0, 275.0, -10.0)


class TestCloudBase:

    def test_ten_degree_spread(self):
        w = WeatherSample(25.0 + 273.15, 15.0 + 273.15, 101325.0)
        assert cloud_base_height(w) == pytest.approx(1219.2)

    def test_saturated_ground(self):
        w = WeatherSample(283.15, 283.15, 101325.0)
        assert cloud_base_height(w) == 0.0

    def test_linear_slope(self):
        # 121.92 m per Celsius of spread
        h1 = spread_to_cloud_base(1.0)
        assert h1 == pytest.approx(121.92)
        for s in (2.0, 5.0, 13.0):
            assert spread_to_cloud_base(s) == pytest.approx(121.92 * s)

    def test_fahrenheit_path_consistent(self):
        # same physical spread: 18 F == 10 C; the rounded 4.4 divisor leaves
        # a ~2.3% gap against the Celsius path (4.5 would be exact)
        h_f = spread_to_cloud_base(18.0, temp_unit="F")
        h_c = spread_to_cloud_base(10.0, temp_unit="C")
        assert h_f == pytest.approx(304.8 * 18.0 / 4.4)
        assert abs(h_f - h_c) / h_c == pytest.approx(4.5 / 4.4 - 1.0, abs=1e-12)
        assert abs(h_f - h_c) / h_c < 0.025

    def test_feet_output(self):
        assert spread_to_cloud_base(10.0, height_unit="ft") == pytest.approx(4000.0)

    def test_negative_spread(self):
        with pytest.raises(ValueError):
            spread_to_cloud_base(-1.0)

    def test_unknown_units(self):
        with pytest.raises(ValueError):
            spread_to_cloud_base(1.0, temp_unit="R")
        with pytest.raises(ValueError):
            spread_to_cloud_base(1.0, height_unit="km")


class TestWeatherCsv:

    def test_round_trip(self, tmp_path):
        path = tmp_path / "weather.csv"
        rows = np.array([
            [1600000000.0, 293.15, 283.15, 101325.0],
            [1600000060.0, 294.15, 283.65, 101300.0],
        ])
        np.savetxt(path, rows, delimiter=",")
        loaded = read_weather_csv(path)
        assert len(loaded) == 2
        ts, w = loaded[0]
        assert ts == 1600000000.0
        assert w.air_temp_K == 293.15
        assert w.pressure_Pa == 101325.0

    def test_bad_columns(self, tmp_path):
        path = tmp_path / "weather.csv"
        np.savetxt(path, np.ones((2, 3)), delimiter=",")
        with pytest.raises(ValueError):
            read_weather_csv(path)
