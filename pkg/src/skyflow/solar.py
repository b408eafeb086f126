"""Sun position from site coordinates and civil time.

Implements the classic PV-engineering chain of time corrections: local
standard time meridian, equation of time, time correction factor, local
solar time and hour angle, followed by declination, elevation, azimuth and
sunrise/sunset in decimal hours.  Angles are kept in radians internally;
degrees appear only at well-marked API boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

DEG = math.pi / 180.0

DAYS_PER_YEAR = 365.0


class NoSunriseError(ValueError):
    """The sun never rises (or never sets) at this site on this day."""


@dataclass(frozen=True)
class Site:
    """Observer location. Longitude is positive east, latitude positive north."""

    latitude_deg: float
    longitude_deg: float
    gmt_offset_hours: float
    altitude_m: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError(f"latitude {self.latitude_deg} outside [-90, 90]")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ValueError(f"longitude {self.longitude_deg} outside [-180, 180]")
        if not -12.0 <= self.gmt_offset_hours <= 14.0:
            raise ValueError(f"GMT offset {self.gmt_offset_hours} outside [-12, +14]")


@dataclass(frozen=True)
class SunPosition:
    """Solar angles plus the intermediate time quantities for one instant."""

    elevation_rad: float
    azimuth_rad: float
    zenith_rad: float
    declination_rad: float
    hour_angle_deg: float
    eot_min: float
    tc_min: float
    lst_hours: float


def _check_day(day_of_year: int, days_in_year: float) -> int:
    day = int(day_of_year)
    if not 1 <= day <= math.ceil(days_in_year) + 1:
        raise ValueError(f"day_of_year {day_of_year} outside 1..{int(days_in_year) + 1}")
    return day


def equation_of_time(day_of_year: int, days_in_year: float = DAYS_PER_YEAR) -> float:
    """Equation of time in minutes for a given day of the year.

    Three-term empirical approximation of the combined effect of orbital
    eccentricity and axial tilt.
    """
    d = _check_day(day_of_year, days_in_year)
    b = (360.0 / days_in_year) * (d - 81.0) * DEG
    return 9.87 * math.sin(2.0 * b) - 7.53 * math.cos(b) - 1.5 * math.sin(b)


def declination(day_of_year: int, days_in_year: float = DAYS_PER_YEAR) -> float:
    """Solar declination in radians (23.45-degree sine approximation)."""
    d = _check_day(day_of_year, days_in_year)
    return 23.45 * DEG * math.sin((360.0 / days_in_year) * (d - 81.0) * DEG)


def _local_clock(site: Site, instant: datetime) -> datetime:
    """Express ``instant`` on the site clock. Naive datetimes are taken as local."""
    if instant.tzinfo is None:
        return instant
    local = timezone(timedelta(hours=site.gmt_offset_hours))
    return instant.astimezone(local)


def time_correction(site: Site, day_of_year: int) -> float:
    """Time correction factor in minutes (longitude offset plus equation of time).

    Earth rotates one degree every four minutes, hence the factor 4 on the
    longitude difference to the local standard time meridian.
    """
    lstm_deg = 15.0 * site.gmt_offset_hours
    return 4.0 * (site.longitude_deg - lstm_deg) + equation_of_time(day_of_year)


def sun_position(site: Site, instant: datetime) -> SunPosition:
    """Sun elevation/azimuth/zenith at ``instant`` for ``site``.

    ``instant`` may be timezone-aware (converted to the site clock) or naive
    (interpreted as site local time).  Azimuth is measured clockwise from
    north in [0, 2*pi); the arccos form is reflected after solar noon.
    """
    local = _local_clock(site, instant)
    day = local.timetuple().tm_yday
    lt_hours = local.hour + local.minute / 60.0 + local.second / 3600.0 \
        + local.microsecond / 3.6e9

    eot = equation_of_time(day)
    tc = time_correction(site, day)
    lst = lt_hours + tc / 60.0
    hra_deg = 15.0 * (lst - 12.0)

    delta = declination(day)
    phi = site.latitude_deg * DEG
    hra = hra_deg * DEG

    sin_elev = math.sin(delta) * math.sin(phi) \
        + math.cos(delta) * math.cos(phi) * math.cos(hra)
    elev = math.asin(min(1.0, max(-1.0, sin_elev)))

    cos_elev = math.cos(elev)
    if cos_elev < 1e-12:
        azim = 0.0  # sun at zenith: azimuth undefined, pick north
    else:
        arg = (math.sin(delta) * math.cos(phi)
               - math.cos(delta) * math.sin(phi) * math.cos(hra)) / cos_elev
        azim = math.acos(min(1.0, max(-1.0, arg)))
        if hra_deg > 0.0:
            azim = 2.0 * math.pi - azim

    return SunPosition(
        elevation_rad=elev,
        azimuth_rad=azim % (2.0 * math.pi),
        zenith_rad=math.pi / 2.0 - elev,
        declination_rad=delta,
        hour_angle_deg=hra_deg,
        eot_min=eot,
        tc_min=tc,
        lst_hours=lst,
    )


def sunrise_sunset(site: Site, day_of_year: int) -> tuple[float, float]:
    """Sunrise and sunset in local decimal hours.

    Raises :class:`NoSunriseError` for polar day/night, where the hour-angle
    arccosine has no solution.
    """
    delta = declination(day_of_year)
    phi = site.latitude_deg * DEG
    cos_phi_cos_delta = math.cos(phi) * math.cos(delta)
    if cos_phi_cos_delta == 0.0:
        raise NoSunriseError("site or declination at a pole")
    arg = -math.sin(phi) * math.sin(delta) / cos_phi_cos_delta
    if abs(arg) > 1.0:
        raise NoSunriseError(
            f"no sunrise/sunset: |tan(lat)*tan(decl)| = {abs(arg):.3f} > 1"
        )
    half_day_hours = math.acos(arg) / DEG / 15.0
    tc_hours = time_correction(site, day_of_year) / 60.0
    rise = 12.0 - half_day_hours - tc_hours
    setx = 12.0 + half_day_hours - tc_hours
    return rise, setx
