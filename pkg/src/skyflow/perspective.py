"""Pixel-to-atmosphere transforms for the sun-tracking IR camera.

Each image row sees the cloud layer at its own elevation angle; a grid maps
every pixel to metric coordinates in the cross-section plane of the cloud
layer.  Two constructions are provided: a flat-earth closed form, and the
full great-circle construction that intersects each view ray with the
spherical cloud shell and measures arc lengths.  The flat grid is the exact
zero-curvature limit of the spherical one, which the convergence tests pin
down; both share the camera's angular pixel pitch.

The image is oriented with elevation increasing toward the top: the bottom
rows look toward the horizon, where ground distance and pixel footprint
grow.  The X axis is antisymmetric about the vertical center line.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

DEG = math.pi / 180.0

TROPOPAUSE_HEIGHT_M = 12_500.0
EARTH_RADIUS_M = 6_371_000.0
SITE_ALTITUDE_M = 1_641.0


def focal_length(n_cols: int, n_rows: int, pixel_pitch: float,
                 fov_diag_rad: float) -> float:
    """Rectilinear focal length from sensor size and diagonal field of view."""
    if not 0.0 < fov_diag_rad < math.pi:
        raise ValueError("diagonal FOV must lie in (0, pi)")
    diag = math.hypot(n_cols * pixel_pitch, n_rows * pixel_pitch)
    return diag / (2.0 * math.tan(fov_diag_rad / 2.0))


@dataclass(frozen=True)
class CameraIntrinsics:
    """IR camera geometry; defaults match the 80x60 long-wave sensor."""

    n_cols: int = 80
    n_rows: int = 60
    pixel_pitch: float = 17e-6
    fov_diag_rad: float = 63.75 * DEG
    focal_length: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "focal_length",
            focal_length(self.n_cols, self.n_rows, self.pixel_pitch,
                         self.fov_diag_rad))

    @property
    def rad_per_pixel(self) -> float:
        """Angular pixel pitch: diagonal FOV over diagonal pixel count."""
        return self.fov_diag_rad / math.hypot(self.n_cols, self.n_rows)

    @property
    def fov_y_rad(self) -> float:
        return self.rad_per_pixel * self.n_rows

    @property
    def fov_x_rad(self) -> float:
        return self.rad_per_pixel * self.n_cols


@dataclass
class AtmoGrid:
    """Metric cross-section coordinates of every pixel.

    ``X``/``Y`` are meters relative to the origin pixel (the sun); ``dX``
    and ``dY`` hold per-pixel differential increments (meters per pixel).
    Y grows toward the horizon (down-image), X to the right.
    """

    X: np.ndarray
    Y: np.ndarray
    dX: np.ndarray
    dY: np.ndarray
    origin: tuple[float, float]     # (col, row) of the sun pixel

    @property
    def shape(self):
        return self.X.shape


def _row_elevations(intr: CameraIntrinsics, sun_elevation: float,
                    origin_row: float) -> np.ndarray:
    """Per-row elevation angles, increasing toward the image top."""
    rows = np.arange(intr.n_rows, dtype=float)
    return sun_elevation + (origin_row - rows) * intr.rad_per_pixel


def _column_half_angles(intr: CameraIntrinsics,
                        origin_col: float) -> np.ndarray:
    """Signed angular offset of each pixel-center column from the origin."""
    cols = np.arange(intr.n_cols, dtype=float)
    return (cols - origin_col) * intr.rad_per_pixel


def _default_origin(intr: CameraIntrinsics) -> tuple[float, float]:
    return ((intr.n_cols - 1) / 2.0, (intr.n_rows - 1) / 2.0)


def _finite_differences(grid: np.ndarray, axis: int) -> np.ndarray:
    """Forward first differences with the trailing slice replicated."""
    diff = np.diff(grid, axis=axis)
    last = np.take(diff, [-1], axis=axis)
    return np.concatenate([diff, last], axis=axis)


def flat_earth_grid(intr: CameraIntrinsics, sun_elevation: float,
                    cloud_height: float,
                    sun_pixel: tuple[float, float] | None = None) -> AtmoGrid:
    """Cross-section grid assuming a flat cloud layer over flat ground.

    Rows map to ground distance h/tan(elevation); columns to chords on the
    layer at the per-row slant distance h/sin(elevation).  Every coordinate
    is proportional to the layer height.
    """
    origin = sun_pixel if sun_pixel is not None else _default_origin(intr)
    elev = _row_elevations(intr, sun_elevation, origin[1])
    if np.any(elev <= 0.0) or np.any(elev >= math.pi):
        raise ValueError("rows reach the horizon: elevation outside (0, pi)")
    h = float(cloud_height)

    ground = h / np.tan(elev)                 # signed ground distance per row
    y_rows = ground - h / math.tan(sun_elevation)
    slant = h / np.sin(elev)                  # distance camera -> layer point

    half = _column_half_angles(intr, origin[0])
    X = slant[:, None] * np.tan(half[None, :])
    Y = np.broadcast_to(y_rows[:, None], X.shape).copy()

    return AtmoGrid(X, Y, _finite_differences(X, 1), _finite_differences(Y, 0),
                    origin)


def great_circle_grid(intr: CameraIntrinsics, sun_elevation: float,
                      tropopause_height: float = TROPOPAUSE_HEIGHT_M,
                      earth_radius: float = EARTH_RADIUS_M,
                      site_altitude: float = SITE_ALTITUDE_M,
                      sun_pixel: tuple[float, float] | None = None) -> AtmoGrid:
    """Cross-section grid on the spherical cloud shell.

    Per row, the view ray from the site circle (radius r) meets the shell
    (radius R = r + h); the in-plane chord is projected to shell arc length
    through the sagitta relations.  Per column, the chord subtended at the
    slant distance is likewise bent onto the shell.  Sagittas follow the
    negative-root convention, which cancels in the arc formulas.
    """
    origin = sun_pixel if sun_pixel is not None else _default_origin(intr)
    elev = _row_elevations(intr, sun_elevation, origin[1])
    if np.any(elev <= 0.0) or np.any(elev >= math.pi):
        raise ValueError("rows reach the horizon: elevation outside (0, pi)")
    h = float(tropopause_height)
    r = float(earth_radius) + float(site_altitude)
    big_r = r + h

    def shell_point(elevation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # intersection of the elevation ray with the shell, parameterized by
        # the vertical rise y (finite at zenith where tan diverges):
        # y^2 (1 + cot^2 e) + 2 r y - (h^2 + 2 r h) = 0
        cot = 1.0 / np.tan(elevation)
        a = 1.0 + cot ** 2
        c = -(h * h + 2.0 * r * h)
        disc = 4.0 * r * r - 4.0 * a * c
        if np.any(disc < 0.0):
            raise ValueError("geometry infeasible: no shell intersection")
        # cancellation-free positive root (b = 2r > 0, c < 0)
        y = -2.0 * c / (2.0 * r + np.sqrt(disc))
        return y * cot, y

    def chord_to_arc(x: np.ndarray, sagitta: np.ndarray) -> np.ndarray:
        # kappa/2 equals the shell radius up to round-off; a near-vertical
        # ray degenerates (x ~ sagitta ~ 0) where the arc is the chord itself
        out = np.array(x, dtype=float, ndmin=1).copy()
        ok = np.abs(out) > 1e-9
        kappa = np.where(sagitta > 0.0, sagitta, 1.0) \
            + np.where(ok, x, 0.0) ** 2 / np.where(sagitta > 0.0, sagitta, 1.0)
        arc = (kappa / 2.0) * np.arcsin(np.clip(2.0 * x / kappa, -1.0, 1.0))
        out[ok] = arc[ok]
        return out

    x_row, y_row = shell_point(elev)
    arc = chord_to_arc(x_row, h - y_row)
    x_sun, y_sun = shell_point(np.asarray([sun_elevation]))
    arc_sun = chord_to_arc(x_sun, h - y_sun)
    y_rows = arc - float(arc_sun[0])

    # columns: chord subtended at the slant distance, bent onto the shell
    slant = np.sqrt(x_row ** 2 + y_row ** 2)
    half = _column_half_angles(intr, origin[0])
    chord = 2.0 * slant[:, None] * np.tan(np.abs(half)[None, :])
    disc = big_r ** 2 - (chord / 2.0) ** 2
    if np.any(disc < 0.0):
        raise ValueError("geometry infeasible: chord exceeds shell diameter")
    # negative-root sagitta, cancellation-free: R - sqrt(R^2 - a^2)
    lam = -((chord / 2.0) ** 2 / (big_r + np.sqrt(disc)))
    off_center = chord > 0.0
    x_abs = np.zeros_like(chord)
    with np.errstate(divide="ignore", invalid="ignore"):
        kap = lam + chord ** 2 / (4.0 * lam)
        ratio = np.clip(np.divide(chord, kap, out=np.zeros_like(chord),
                                  where=off_center), -1.0, 1.0)
        x_abs[off_center] = (kap[off_center] / 2.0) \
            * np.arcsin(ratio[off_center])
    X = np.sign(half)[None, :] * x_abs
    Y = np.broadcast_to(y_rows[:, None], X.shape).copy()

    return AtmoGrid(X, Y, _finite_differences(X, 1), _finite_differences(Y, 0),
                    origin)


def rescale_height(grid: AtmoGrid, h_from: float, h_to: float) -> AtmoGrid:
    """Rescale a grid between layer heights by the arc proportionality.

    Exact for the flat transform and within O(h/R) of a spherical
    recomputation when the shell radius dominates the height change.
    """
    if h_from <= 0:
        raise ValueError("h_from must be positive")
    k = h_to / h_from
    return AtmoGrid(grid.X * k, grid.Y * k, grid.dX * k, grid.dY * k,
                    grid.origin)


def transform_error_map(flat: AtmoGrid, full: AtmoGrid) -> np.ndarray:
    """Pixelwise RMS of the coordinate residuals between two grids."""
    if flat.shape != full.shape:
        raise ValueError("grids must share shape")
    ex = (flat.X - full.X) ** 2
    ey = (flat.Y - full.Y) ** 2
    return np.sqrt(0.5 * (ex + ey))


def save_grid_npz(path, grid: AtmoGrid) -> None:
    """Persist a grid with shape and units metadata (NPZ container)."""
    np.savez(path, X=grid.X, Y=grid.Y, dX=grid.dX, dY=grid.dY,
             origin=np.asarray(grid.origin), units=np.asarray("m"))


def load_grid_npz(path) -> AtmoGrid:
    data = np.load(path, allow_pickle=False)
    return AtmoGrid(data["X"], data["Y"], data["dX"], data["dY"],
                    tuple(data["origin"]))


def save_grid_csv(path, grid: AtmoGrid) -> None:
    """Persist a grid as CSV: a header line, then one row per pixel."""
    rows, cols = grid.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# rows", rows, "cols", cols, "units", "m",
                         "origin_col", grid.origin[0], "origin_row",
                         grid.origin[1]])
        writer.writerow(["row", "col", "X", "Y", "dX", "dY"])
        for i in range(rows):
            for j in range(cols):
                writer.writerow([i, j, repr(grid.X[i, j]), repr(grid.Y[i, j]),
                                 repr(grid.dX[i, j]), repr(grid.dY[i, j])])
