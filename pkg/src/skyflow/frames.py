"""Frame acquisition pipeline: duplicate rejection, averaging, HDR fusion.

Cameras deliver frames slower than the host polls the socket, so a capture
must reject buffer re-reads before averaging: a frame joins the capture set
only if its normalized cross-correlation with every accepted frame differs
from one.  Visible captures cycle through exposure times; the per-exposure
averages are merged into a single 16-bit frame with sun-centered radial
masks.

This module also owns the on-disk dataset conventions (16-bit PNG frames,
two-column pyranometer CSV, three-column position CSV).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

HDR_MAX = 2 ** 16
HDR_RESCALE_DIVISOR = 225.0    # merge-equation normalization constant
DUPLICATE_NCC_THRESHOLD = 1.0 - 1e-9
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class StreamExhaustedError(RuntimeError):
    """Fewer distinct frames arrived than the capture requested."""


@dataclass
class Frame:
    """One sky image with its timestamp and projected sun position.

    ``sun_pixel`` is (x, y) = (column, row), or None when unknown.
    """

    pixels: np.ndarray
    timestamp: float = 0.0
    sun_pixel: tuple[float, float] | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim not in (2, 3):
            raise ValueError("pixels must be a 2-D grid or 2-D x channels")
        if self.sun_pixel is not None:
            x, y = self.sun_pixel
            h, w = self.pixels.shape[:2]
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"sun pixel {self.sun_pixel} outside {w}x{h}")

    @property
    def shape(self):
        return self.pixels.shape

    def center(self) -> tuple[float, float]:
        h, w = self.pixels.shape[:2]
        return ((w - 1) / 2.0, (h - 1) / 2.0)


@dataclass
class ExposureStack:
    """Noise-averaged frames ordered by increasing exposure time plus the
    fusion radii separating their regions (one radius per adjacent pair)."""

    frames: list
    radii: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("need at least two exposures")
        if len(self.radii) != len(self.frames) - 1:
            raise ValueError("need exactly one radius per adjacent pair")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly increasing")
        shape = self.frames[0].pixels.shape[:2]
        half_diag = 0.5 * math.hypot(*shape)
        if any(r >= half_diag for r in self.radii):
            raise ValueError("radii must stay inside the image half-diagonal")


def ncc(a, b) -> float:
    """Normalized cross-correlation of two equally shaped frames.

    Centered dot product over the product of centered norms; undefined for
    constant (zero-variance) inputs.
    """
    x = np.asarray(a, dtype=float).ravel()
    y = np.asarray(b, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("frames must share shape")
    x = x - x.mean()
    y = y - y.mean()
    nx = math.sqrt(float(np.dot(x, x)))
    ny = math.sqrt(float(np.dot(y, y)))
    if nx == 0.0 or ny == 0.0:
        raise ValueError("undefined correlation: zero-variance input")
    return float(np.dot(x, y) / (nx * ny))


def dedup_average(raw, n: int) -> Frame:
    """Average ``n`` distinct frames from an iterable of Frame objects.

    A frame is accepted only if its NCC against every frame already in the
    capture set differs from one (duplicate buffer reads correlate exactly).
    Raises :class:`StreamExhaustedError` if the stream ends early.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    accepted = []
    first = None
    for frame in raw:
        if first is None:
            first = frame
        pix = np.asarray(frame.pixels, dtype=float)
        if any(ncc(pix, kept) > DUPLICATE_NCC_THRESHOLD for kept in accepted):
            continue
        accepted.append(pix)
        if len(accepted) == n:
            mean = np.mean(accepted, axis=0)
            return Frame(mean, timestamp=first.timestamp,
                         sun_pixel=first.sun_pixel)
    raise StreamExhaustedError(
        f"stream exhausted after {len(accepted)}/{n} distinct frames")


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Luma-weighted RGB to single channel; mono passes through."""
    arr = np.asarray(pixels, dtype=float)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ np.asarray(LUMA_WEIGHTS)
    raise ValueError(f"expected mono or 3-channel image, got {arr.shape}")


def disc_mask(shape, center, radius) -> np.ndarray:
    """Boolean mask of pixels within ``radius`` of ``center`` (x, y)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = center
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2


def _blur_mask(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Normalized Gaussian window blur of a boolean mask.

    Window extent is six sigma rounded up to odd; the kernel is normalized
    to unit sum so values stay in [0, 1].
    """
    size = int(6 * sigma) | 1
    x = np.arange(size) - size // 2
    g = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    return ndimage.convolve(mask.astype(float), kernel, mode="nearest")


def _ring_mean(values: np.ndarray, ring: np.ndarray) -> float:
    count = int(ring.sum())
    if count == 0:
        raise ValueError("empty ring mask; radii too close to the border")
    return float(values[ring].sum() / count)


def exposure_weights(grays: list, center, radii, ring_eps: float = 2.0) -> np.ndarray:
    """Chained brightness-matching weights, one per exposure, alpha_1 = 1.

    Adjacent exposures are compared on thin rings straddling their shared
    fusion radius: the inner ring samples the shorter exposure, the outer
    ring the longer one.  Sums are normalized by ring pixel count so the
    weights are pure intensity ratios.
    """
    shape = grays[0].shape
    alphas = [1.0]
    for e, rho in enumerate(radii):
        disc = disc_mask(shape, center, rho)
        ring_inner = disc ^ disc_mask(shape, center, rho - ring_eps)
        ring_outer = disc ^ disc_mask(shape, center, rho + ring_eps)
        inner_mean = _ring_mean(grays[e], ring_inner)
        outer_mean = _ring_mean(grays[e + 1], ring_outer)
        if outer_mean == 0.0:
            raise ValueError(f"degenerate weight at exposure {e + 1}: "
                             "ring sum is zero")
        alphas.append(alphas[-1] * inner_mean / outer_mean)
    return np.asarray(alphas)


def fuse_exposures(stack: ExposureStack, blur_sigma: float = 2.0,
                   ring_eps: float = 2.0, regularization: float = 1.0,
                   outer_radius: float | None = None) -> Frame:
    """Merge a multi-exposure stack into one 16-bit HDR frame.

    Regions are annuli between consecutive fusion radii, selected by
    products of blurred disc masks; region ``e`` carries the running average
    of weight-matched exposures 1..e.  The merged image is rescaled by
    2^16/225 and clamped to the 16-bit range; everything outside the imaging
    circle is set to zero.
    """
    first = stack.frames[0]
    center = first.sun_pixel if first.sun_pixel is not None else first.center()
    grays = [to_grayscale(f.pixels) + regularization for f in stack.frames]
    shape = grays[0].shape
    n_exp = len(grays)

    alphas = exposure_weights(grays, center, stack.radii, ring_eps)

    # mask set {0, M_2, ..., M_E, 1}: index e+1 closes region e
    masks = [np.zeros(shape)]
    for rho in stack.radii:
        masks.append(_blur_mask(disc_mask(shape, center, rho), blur_sigma))
    masks.append(np.ones(shape))

    merged = np.zeros(shape)
    running = np.zeros(shape)
    for e in range(1, n_exp + 1):
        running = running + alphas[e - 1] * grays[e - 1]
        region = masks[e] * (1.0 - masks[e - 1])
        merged += region * running / e

    out = merged / HDR_RESCALE_DIVISOR * HDR_MAX
    out = np.clip(out, 0.0, HDR_MAX)

    if outer_radius is None:
        outer_radius = min(shape) / 2.0
    out[~disc_mask(shape, center, outer_radius)] = 0.0
    return Frame(out, timestamp=first.timestamp, sun_pixel=first.sun_pixel)


# ---------------------------------------------------------------------------
# dataset I/O (Girasol layout)

def write_frame_png(path, pixels: np.ndarray) -> None:
    """Write a single-channel 16-bit PNG (lossless)."""
    arr = np.asarray(pixels)
    clipped = np.clip(np.round(arr), 0, 65535).astype("<u2")
    Image.fromarray(clipped).save(path, format="PNG")


def read_frame_png(path) -> np.ndarray:
    """Read a single-channel 16-bit PNG into a uint16 array."""
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint16)


def write_pyranometer_csv(path, timestamps, ghi) -> None:
    """Two columns: unix time, GSI in W/m^2."""
    data = np.column_stack([np.asarray(timestamps), np.asarray(ghi)])
    np.savetxt(path, data, delimiter=",", fmt="%.6f")


def read_pyranometer_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError("pyranometer CSV needs 2 columns: unix, GSI")
    return data[:, 0], data[:, 1]


def write_position_csv(path, timestamps, elevation, azimuth) -> None:
    """Three columns: unix time, elevation (rad), azimuth (rad)."""
    data = np.column_stack([np.asarray(timestamps), np.asarray(elevation),
                            np.asarray(azimuth)])
    np.savetxt(path, data, delimiter=",", fmt="%.8f")


def read_position_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 3:
        raise ValueError("position CSV needs 3 columns: unix, elevation, azimuth")
    return data[:, 0], data[:, 1], data[:, 2]


def day_layout(root, day: str) -> dict[str, Path]:
    """Directory layout of one recorded day under the dataset root."""
    base = Path(root) / day
    return {
        "infrared": base / "infrared",
        "visible": base / "visible",
        "pyranometer": base / "pyranometer" / f"{day}.csv",
        "position": base / "position" / f"{day}.csv",
    }
