"""Radiometric conversions for the long-wave IR camera and ground weather.

The camera digitizes radiometric temperature as intensity/100 kelvin.  Ground
measurements of air temperature, dew point and pressure give the
moist-adiabatic lapse rate and the lifted-condensation-level cloud base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# constants of the lapse-rate formula
GRAVITY = 9.8076              # m/s^2
HEAT_VAPORIZATION = 2_501_000.0   # J/kg
R_DRY_AIR = 287.0             # J/(kg K)
R_WATER_VAPOR = 461.5         # J/(kg K)
EPSILON = 0.622               # R_sd / R_sw, rounded as tabulated
CP_DRY_AIR = 1003.5           # J/(kg K)

DRY_LAPSE = GRAVITY / CP_DRY_AIR      # ~0.00977 K/m

KELVIN_OFFSET = 273.15
INTENSITY_PER_KELVIN = 100.0

# saturation vapor pressure reference (hPa) of the Magnus-style formula
SVP_REFERENCE_HPA = 6.1078


@dataclass(frozen=True)
class WeatherSample:
    """Ground weather measurements in SI units."""

    air_temp_K: float
    dew_point_K: float
    pressure_Pa: float

    def __post_init__(self):
        if self.air_temp_K < self.dew_point_K:
            raise ValueError("air temperature below dew point")
        if self.pressure_Pa <= 0:
            raise ValueError("pressure must be positive")


def intensity_to_kelvin(intensity) -> np.ndarray:
    """Radiometric 16-bit intensities to kelvin (elementwise /100)."""
    values = np.asarray(intensity, dtype=float)
    if np.any(values < 0) or np.any(values > 65535):
        raise ValueError("intensities outside the 16-bit range")
    return values / INTENSITY_PER_KELVIN


def kelvin_to_celsius(kelvin) -> np.ndarray:
    return np.asarray(kelvin, dtype=float) - KELVIN_OFFSET


def kelvin_to_intensity(kelvin) -> np.ndarray:
    return np.asarray(kelvin, dtype=float) * INTENSITY_PER_KELVIN


def saturation_vapor_pressure(dew_point_K: float,
                              printed_form: bool = False) -> float:
    """Saturation vapor pressure in Pa at the dew point.

    Magnus-style exponential over dew point in Celsius, scaled from hPa.
    ``printed_form`` replaces the 6.1078 hPa reference with the gas-constant
    ratio 0.622 as one transcription of the formula has it; that variant
    yields sub-pascal pressures and exists for comparison only.
    """
    t_dew_c = dew_point_K - KELVIN_OFFSET
    reference = EPSILON if printed_form else SVP_REFERENCE_HPA
    return reference * math.exp(7.5 * t_dew_c / (273.3 + t_dew_c)) * 100.0


def mixing_ratio(w: WeatherSample, printed_form: bool = False) -> float:
    """Mass mixing ratio of water vapor to dry air."""
    e = saturation_vapor_pressure(w.dew_point_K, printed_form)
    if w.pressure_Pa <= e:
        raise ValueError(
            f"nonphysical humidity: vapor pressure {e:.1f} Pa >= "
            f"total pressure {w.pressure_Pa:.1f} Pa")
    return EPSILON * e / (w.pressure_Pa - e)


def moist_adiabatic_lapse(w: WeatherSample, printed_form: bool = False) -> float:
    """Moist-adiabatic lapse rate in K/m.

    Approaches the dry rate g/c_pd as the mixing ratio vanishes and is
    strictly below it for any moisture content.
    """
    t = w.air_temp_K
    r_v = mixing_ratio(w, printed_form)
    numer = R_DRY_AIR * t * t + HEAT_VAPORIZATION * r_v * t
    denom = CP_DRY_AIR * R_DRY_AIR * t * t \
        + HEAT_VAPORIZATION ** 2 * r_v * EPSILON
    return GRAVITY * numer / denom


def spread_to_cloud_base(spread: float, temp_unit: str = "C",
                         height_unit: str = "m") -> float:
    """Cloud-base height from the temperature/dew-point spread.

    The spread divisor is 2.5 for Celsius or 4.4 for Fahrenheit; the result
    scales by 304.8 for meters or 1000 for feet.
    """
    if spread < 0:
        raise ValueError("negative spread: dew point above air temperature")
    if temp_unit == "C":
        lifted = spread / 2.5
    elif temp_unit == "F":
        lifted = spread / 4.4
    else:
        raise ValueError(f"unknown temperature unit {temp_unit!r}")
    if height_unit == "m":
        return 304.8 * lifted
    if height_unit == "ft":
        return 1000.0 * lifted
    raise ValueError(f"unknown height unit {height_unit!r}")


def cloud_base_height(w: WeatherSample) -> float:
    """Lifted condensation level in meters from a weather sample."""
    return spread_to_cloud_base(w.air_temp_K - w.dew_point_K, "C", "m")


def read_weather_csv(path) -> list[tuple[float, WeatherSample]]:
    """Load (unix_time, WeatherSample) rows from a CSV.

    Columns: unix time, air temperature (K), dew point (K), pressure (Pa).
    """
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 4:
        raise ValueError("weather CSV needs 4 columns: unix, T_air, T_dew, p")
    return [(row[0], WeatherSample(row[1], row[2], row[3])) for row in data]
