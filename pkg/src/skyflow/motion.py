"""Dense cloud-motion estimation between consecutive sky frames.

Four estimator families over a shared (u, v, valid) field type:

* Lucas-Kanade: windowed least squares on the optical-flow constraint with
  an eigenvalue gate on the structure tensor.
* Horn-Schunck: global smoothness functional solved by Jacobi iteration.
* Farneback: quadratic polynomial expansion per neighborhood, coarse-to-fine
  pyramid, and a weighted least-squares parametric motion model.
* PIV (CC / phase-normalized NCC): per-window cross-correlation in the
  frequency domain with sub-pixel polynomial peak refinement.

Conventions: u is column (x) velocity, v is row (y) velocity, both in
pixels per frame; a positive u means the scene moved right between the
previous and current frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]]) / 8.0
SOBEL_Y = SOBEL_X.T
TEMPORAL_KERNEL = np.full((3, 3), 1.0 / 9.0)


@dataclass
class VelocityField:
    """Per-pixel velocity grid with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.u.shape == self.v.shape == self.valid.shape):
            raise ValueError("u, v and valid must share shape")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def _check_pair(prev, curr) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(prev, dtype=float)
    b = np.asarray(curr, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("frames must be equal-shape 2-D arrays")
    return a, b


def sobel_derivatives(prev, curr, sigma: float = 1.0):
    """Space-time derivative triple (Ix, Iy, It).

    Spatial Sobel derivatives of the earlier frame; the temporal derivative
    is the smoothed frame difference scaled by the kernel amplitude
    ``sigma``.  Borders replicate.
    """
    a, b = _check_pair(prev, curr)
    # correlate, not convolve: convolution would flip the odd kernels and
    # negate the derivatives
    ix = ndimage.correlate(a, SOBEL_X, mode="nearest")
    iy = ndimage.correlate(a, SOBEL_Y, mode="nearest")
    it = sigma * (ndimage.correlate(b, TEMPORAL_KERNEL, mode="nearest")
                  - ndimage.correlate(a, TEMPORAL_KERNEL, mode="nearest"))
    return ix, iy, it


def lucas_kanade(prev, curr, window: int = 11, eig_threshold: float = 1e-8,
                 sigma: float = 1.0) -> VelocityField:
    """Windowed least-squares optical flow with an eigenvalue gate.

    Pixels whose structure tensor has a small eigenvalue at or below the
    threshold are marked invalid rather than solved.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    ix, iy, it = sobel_derivatives(prev, curr, sigma)

    def wsum(img):
        return ndimage.uniform_filter(img, size=window, mode="nearest") \
            * window * window

    sxx = wsum(ix * ix)
    sxy = wsum(ix * iy)
    syy = wsum(iy * iy)
    sxt = wsum(ix * it)
    syt = wsum(iy * it)

    half_trace = 0.5 * (sxx + syy)
    spread = np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy ** 2)
    lam_min = half_trace - spread
    valid = lam_min > eig_threshold

    det = sxx * syy - sxy * sxy
    safe = np.where(valid, det, 1.0)
    u = np.where(valid, (-syy * sxt + sxy * syt) / safe, 0.0)
    v = np.where(valid, (sxy * sxt - sxx * syt) / safe, 0.0)
    return VelocityField(u, v, valid)


def horn_schunck(prev, curr, alpha: float = 1.0, tol: float = 1e-5,
                 max_iters: int = 1000, sigma: float = 1.0) -> VelocityField:
    """Global-smoothness optical flow by Jacobi iteration from zero fields.

    Neighborhood means use the 4-neighbor stencil of the discrete
    Laplacian; iteration stops when the largest per-pixel update falls
    below ``tol`` or at ``max_iters``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    ix, iy, it = sobel_derivatives(prev, curr, sigma)
    denom = 4.0 * alpha ** 2 + ix ** 2 + iy ** 2
    stencil = np.array([[0.0, 0.25, 0.0],
                        [0.25, 0.0, 0.25],
                        [0.0, 0.25, 0.0]])
    u = np.zeros_like(ix)
    v = np.zeros_like(ix)
    for _ in range(max_iters):
        u_bar = ndimage.convolve(u, stencil, mode="nearest")
        v_bar = ndimage.convolve(v, stencil, mode="nearest")
        shared = (ix * u_bar + iy * v_bar + it) / denom
        u_new = u_bar - ix * shared
        v_new = v_bar - iy * shared
        change = max(float(np.max(np.abs(u_new - u))),
                     float(np.max(np.abs(v_new - v))))
        u, v = u_new, v_new
        if change < tol:
            break
    return VelocityField(u, v, np.ones_like(u, dtype=bool))


# ---------------------------------------------------------------------------
# Farneback

def _poly_expansion(img: np.ndarray, n: int, sigma: float):
    """Quadratic expansion f ~ x^T A x + b^T x + c per neighborhood.

    Gaussian-applicability normalized convolution with the separable basis
    {1, x, y, x^2, y^2, xy}.  Returns (A11, A12, A22, b1, b2) planes where
    x is the column offset and y the row offset.
    """
    half = n // 2
    coords = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))

    # separable 1-D moments up to order 2
    kernels = {0: g, 1: g * coords, 2: g * coords ** 2}

    def corr(image, ox, oy):
        tmp = ndimage.correlate1d(image, kernels[ox], axis=1, mode="nearest")
        return ndimage.correlate1d(tmp, kernels[oy], axis=0, mode="nearest")

    # Gram matrix of the basis under the Gaussian applicability
    m0 = float(kernels[0].sum())
    m2 = float(kernels[2].sum())
    m4 = float((g * coords ** 4).sum())
    basis_dim = 6   # 1, x, y, x^2, y^2, xy
    gram = np.zeros((basis_dim, basis_dim))
    gram[0, 0] = m0 * m0
    gram[0, 3] = gram[3, 0] = m2 * m0
    gram[0, 4] = gram[4, 0] = m0 * m2
    gram[1, 1] = m2 * m0
    gram[2, 2] = m0 * m2
    gram[3, 3] = m4 * m0
    gram[4, 4] = m0 * m4
    gram[3, 4] = gram[4, 3] = m2 * m2
    gram[5, 5] = m2 * m2
    ginv = np.linalg.inv(gram)

    moments = np.stack([
        corr(img, 0, 0),    # 1
        corr(img, 1, 0),    # x
        corr(img, 0, 1),    # y
        corr(img, 2, 0),    # x^2
        corr(img, 0, 2),    # y^2
        corr(img, 1, 1),    # xy
    ], axis=-1)
    coef = moments @ ginv.T
    c0, b1, b2, a11, a22, a12h = np.moveaxis(coef, -1, 0)
    return a11, a12h / 2.0, a22, b1, b2


_MOTION_MONOMIALS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
                     (3, 0), (2, 1), (1, 2), (0, 3), (4, 0), (3, 1),
                     (2, 2), (1, 3), (0, 4)]
_MONOMIAL_INDEX = {e: i for i, e in enumerate(_MOTION_MONOMIALS)}

# rows of the motion-model matrix S(x, y) as monomial exponent maps:
# d_x = a1 + a2 x + a3 y + a7 x^2 + a8 xy ; d_y = a4 + a5 x + a6 y + a7 xy + a8 y^2
_S_ROWS = (
    {0: (0, 0), 1: (1, 0), 2: (0, 1), 6: (2, 0), 7: (1, 1)},
    {3: (0, 0), 4: (1, 0), 5: (0, 1), 6: (1, 1), 7: (0, 2)},
)


def _motion_model_tables():
    """Sparse assembly maps for the 8x8 WLS normal matrix and its rhs.

    Returns (quad_terms, lin_terms): quad_terms[(i, j)] is a list of
    (monomial index, T-component) pairs whose filtered fields sum into
    normal-matrix entry (i, j); T components are 0: A11-block, 1: A12,
    2: A22.  lin_terms[i] lists (monomial index, q-component) pairs.
    """
    quad = {}
    lin = {}
    for r1, t_row in enumerate(_S_ROWS):
        for r2, t_col in enumerate(_S_ROWS):
            comp = r1 + r2   # 0 -> T11, 1 -> T12, 2 -> T22
            for i, e1 in t_row.items():
                for j, e2 in t_col.items():
                    mono = (e1[0] + e2[0], e1[1] + e2[1])
                    quad.setdefault((i, j), []).append(
                        (_MONOMIAL_INDEX[mono], comp))
    for r, t_row in enumerate(_S_ROWS):
        for i, e in t_row.items():
            lin.setdefault(i, []).append((_MONOMIAL_INDEX[e], r))
    return quad, lin


_QUAD_TERMS, _LIN_TERMS = _motion_model_tables()


def _wls_motion_field(a11, a12, a22, db1, db2, window: int, w_sigma: float):
    """Solve the 8-parameter motion model per pixel; return (dx, dy, ok)."""
    half = window // 2
    coords = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(coords ** 2) / (2.0 * w_sigma ** 2))
    g /= g.sum()

    def filt(img, ex, ey):
        tmp = ndimage.correlate1d(img, g * coords ** ex, axis=1,
                                  mode="nearest")
        return ndimage.correlate1d(tmp, g * coords ** ey, axis=0,
                                   mode="nearest")

    t11 = a11 * a11 + a12 * a12
    t12 = a11 * a12 + a12 * a22
    t22 = a12 * a12 + a22 * a22
    q1 = a11 * db1 + a12 * db2
    q2 = a12 * db1 + a22 * db2
    t_fields = (t11, t12, t22)
    q_fields = (q1, q2)

    filtered_t = {}
    filtered_q = {}
    needed_t = {(m, c) for pairs in _QUAD_TERMS.values() for m, c in pairs}
    needed_q = {(m, c) for pairs in _LIN_TERMS.values() for m, c in pairs}
    for m, c in needed_t:
        ex, ey = _MOTION_MONOMIALS[m]
        filtered_t[(m, c)] = filt(t_fields[c], ex, ey)
    for m, c in needed_q:
        ex, ey = _MOTION_MONOMIALS[m]
        filtered_q[(m, c)] = filt(q_fields[c], ex, ey)

    shape = a11.shape
    normal = np.zeros(shape + (8, 8))
    rhs = np.zeros(shape + (8,))
    for (i, j), pairs in _QUAD_TERMS.items():
        acc = np.zeros(shape)
        for m, c in pairs:
            acc += filtered_t[(m, c)]
        normal[..., i, j] = acc
    for i, pairs in _LIN_TERMS.items():
        acc = np.zeros(shape)
        for m, c in pairs:
            acc += filtered_q[(m, c)]
        rhs[..., i] = acc

    # regularize singular windows and mark them invalid
    flat_n = normal.reshape(-1, 8, 8)
    flat_r = rhs.reshape(-1, 8)
    dets = np.abs(np.linalg.det(flat_n))
    ok = dets > 1e-12
    flat_n[~ok] = np.eye(8)
    flat_r[~ok] = 0.0
    p = np.linalg.solve(flat_n, flat_r[..., None])[..., 0].reshape(shape + (8,))
    # displacement at the window center: local coords (0, 0)
    return p[..., 0], p[..., 3], ok.reshape(shape)


def _resize(img: np.ndarray, shape) -> np.ndarray:
    zoom = (shape[0] / img.shape[0], shape[1] / img.shape[1])
    return ndimage.zoom(img, zoom, order=1, mode="nearest", grid_mode=True)


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    rows, cols = img.shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(float)
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=1,
                                   mode="nearest")


def farneback(prev, curr, pyr_scale: float = 0.65, levels: int = 3,
              window: int = 11, iterations: int = 3, poly_n: int = 5,
              poly_sigma: float = 1.1, w_sigma: float | None = None
              ) -> VelocityField:
    """Coarse-to-fine parametric optical flow.

    Each level expands both frames into local quadratics, solves the
    8-parameter motion model by Gaussian-weighted least squares, and
    propagates the (rescaled) displacement down the pyramid.  The current
    frame is re-warped by the running displacement every iteration.
    """
    if not 0.0 < pyr_scale < 1.0:
        raise ValueError("pyr_scale must lie in (0, 1)")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    a, b = _check_pair(prev, curr)
    if w_sigma is None:
        w_sigma = max(window / 4.0, 1.0)

    shapes = [a.shape]
    for _ in range(1, levels):
        prev_shape = shapes[-1]
        nxt = (max(int(round(prev_shape[0] * pyr_scale)), 2 * poly_n + 1),
               max(int(round(prev_shape[1] * pyr_scale)), 2 * poly_n + 1))
        if nxt == prev_shape:
            break
        shapes.append(nxt)

    u = np.zeros(shapes[-1])
    v = np.zeros(shapes[-1])
    ok = np.ones(shapes[-1], dtype=bool)
    for level, shape in enumerate(reversed(shapes)):
        scale_y = shape[0] / u.shape[0]
        scale_x = shape[1] / u.shape[1]
        u = _resize(u, shape) * scale_x
        v = _resize(v, shape) * scale_y
        ok = _resize(ok.astype(float), shape) > 0.5
        img1 = _resize(a, shape) if shape != a.shape else a
        img2 = _resize(b, shape) if shape != b.shape else b
        a11_1, a12_1, a22_1, b1_1, b2_1 = _poly_expansion(img1, poly_n,
                                                          poly_sigma)
        for _ in range(iterations):
            warped = _warp(img2, u, v)
            a11_2, a12_2, a22_2, b1_2, b2_2 = _poly_expansion(warped, poly_n,
                                                              poly_sigma)
            am11 = 0.5 * (a11_1 + a11_2)
            am12 = 0.5 * (a12_1 + a12_2)
            am22 = 0.5 * (a22_1 + a22_2)
            db1 = -0.5 * (b1_2 - b1_1)
            db2 = -0.5 * (b2_2 - b2_1)
            du, dv, solvable = _wls_motion_field(am11, am12, am22, db1, db2,
                                                 window, w_sigma)
            u = u + np.where(solvable, du, 0.0)
            v = v + np.where(solvable, dv, 0.0)
            ok &= solvable
    return VelocityField(u, v, ok)


# ---------------------------------------------------------------------------
# PIV cross-correlation

def _window_stack(img: np.ndarray, window: int, centers):
    half = window // 2
    padded = np.pad(img, half, mode="edge")
    views = sliding_window_view(padded, (window, window))
    rows = centers[:, 0]
    cols = centers[:, 1]
    return views[rows, cols]


def _signed_displacement(idx: np.ndarray, window: int) -> np.ndarray:
    return (idx + window // 2) % window - window // 2


def _poly_exponents(order: int):
    return np.array([(i, j) for i in range(order + 1)
                     for j in range(order + 1 - i)], dtype=int)


def _poly_design(px: np.ndarray, py: np.ndarray, order: int) -> np.ndarray:
    exps = _poly_exponents(order)
    return (px[..., None] ** exps[:, 0]) * (py[..., None] ** exps[:, 1])


def _ascend(coefs: np.ndarray, order: int, scale: float,
            max_iters: int = 500, step_floor: float = 1e-10):
    """Batched gradient ascent from the origin of the local patch frame.

    ``coefs`` holds per-surface polynomial coefficients over coordinates
    normalized by ``scale``.  The gradient is numerical (central
    differences).  Returns per-surface (x, y) offsets in pixels.
    """
    n = coefs.shape[0]
    exps = _poly_exponents(order)
    ix, iy = exps[:, 0], exps[:, 1]

    def value(px, py):
        # power tables: cumulative products beat float pow by a wide margin
        qx, qy = px / scale, py / scale
        tx = np.empty((n, order + 1))
        ty = np.empty((n, order + 1))
        tx[:, 0] = 1.0
        ty[:, 0] = 1.0
        for k in range(1, order + 1):
            tx[:, k] = tx[:, k - 1] * qx
            ty[:, k] = ty[:, k - 1] * qy
        return np.einsum("nt,nt->n", coefs, tx[:, ix] * ty[:, iy])

    x = np.zeros(n)
    y = np.zeros(n)
    step = np.full(n, 0.25)
    h = 1e-4
    for _ in range(max_iters):
        gx = (value(x + h, y) - value(x - h, y)) / (2 * h)
        gy = (value(x, y + h) - value(x, y - h)) / (2 * h)
        norm = np.hypot(gx, gy)
        live = (norm > 1e-12) & (step > step_floor)
        if not live.any():
            break
        cur = value(x, y)
        nx = np.where(live, x + step * gx / np.maximum(norm, 1e-300), x)
        ny = np.where(live, y + step * gy / np.maximum(norm, 1e-300), y)
        better = value(nx, ny) > cur
        accept = live & better
        x = np.where(accept, nx, x)
        y = np.where(accept, ny, y)
        step = np.where(live & ~better, step * 0.5, step)
    return x, y


def subpixel_peak(surface: np.ndarray, order: int = 4, fit_radius: int = 4,
                  max_iters: int = 500) -> tuple[float, float, bool]:
    """Sub-pixel maximum location (x, y) of a correlation surface.

    A least-squares bivariate polynomial of total degree ``order`` is
    fitted around the integer peak (a (2*fit_radius+1)^2 patch, clipped to
    the surface) and climbed by gradient ascent with a numerical gradient.
    Returns (x, y, refined); ``refined`` is False when the ascent left the
    one-pixel box around the integer peak, in which case the integer peak
    location is returned.
    """
    surf = np.asarray(surface, dtype=float)
    rows, cols = surf.shape
    if rows < 3 or cols < 3:
        raise ValueError("surface too small")
    peak_y, peak_x = np.unravel_index(int(surf.argmax()), surf.shape)

    size = 2 * fit_radius + 1
    r0 = min(max(peak_y - fit_radius, 0), max(rows - size, 0))
    c0 = min(max(peak_x - fit_radius, 0), max(cols - size, 0))
    patch = surf[r0:r0 + size, c0:c0 + size]
    n_terms = (order + 1) * (order + 2) // 2
    if n_terms > patch.size:
        raise ValueError(f"order {order} needs {n_terms} samples, "
                         f"patch has {patch.size}")
    ys, xs = np.mgrid[r0:r0 + patch.shape[0], c0:c0 + patch.shape[1]]
    scale = float(fit_radius)
    design = _poly_design((xs.ravel() - peak_x) / scale,
                          (ys.ravel() - peak_y) / scale, order)
    coef, *_ = np.linalg.lstsq(design, patch.ravel(), rcond=None)

    dx, dy = _ascend(coef[None, :], order, scale, max_iters)
    ok = abs(float(dx[0])) <= 1.0 and abs(float(dy[0])) <= 1.0
    if not ok:
        return float(peak_x), float(peak_y), False
    return peak_x + float(dx[0]), peak_y + float(dy[0]), True


def _subpixel_peaks_periodic(surfaces: np.ndarray, order: int,
                             fit_radius: int = 4, max_iters: int = 200):
    """Batched local-fit refinement on periodic correlation surfaces.

    Patches around each integer peak wrap around (circular correlation
    surfaces are periodic), so every patch is full-size and one design
    matrix serves all windows.  Returns per-surface (x, y, refined) with
    coordinates in the surface index frame.
    """
    n, rows, cols = surfaces.shape
    size = 2 * fit_radius + 1
    n_terms = (order + 1) * (order + 2) // 2
    if n_terms > size * size:
        raise ValueError(f"order {order} needs {n_terms} samples, "
                         f"patch has {size * size}")
    flat_idx = surfaces.reshape(n, -1).argmax(axis=1)
    peak_y = flat_idx // cols
    peak_x = flat_idx % cols

    offsets = np.arange(-fit_radius, fit_radius + 1)
    rows_idx = (peak_y[:, None] + offsets[None, :]) % rows       # (n, size)
    cols_idx = (peak_x[:, None] + offsets[None, :]) % cols
    patches = surfaces[np.arange(n)[:, None, None],
                       rows_idx[:, :, None], cols_idx[:, None, :]]

    oy, ox = np.mgrid[-fit_radius:fit_radius + 1,
                      -fit_radius:fit_radius + 1].astype(float)
    scale = float(fit_radius)
    design = _poly_design(ox.ravel() / scale, oy.ravel() / scale, order)
    pinv = np.linalg.pinv(design)
    coefs = patches.reshape(n, -1) @ pinv.T

    dx, dy = _ascend(coefs, order, scale, max_iters, step_floor=5e-5)
    ok = (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
    x = np.where(ok, peak_x + dx, peak_x.astype(float))
    y = np.where(ok, peak_y + dy, peak_y.astype(float))
    return x, y, ok


def piv_cc(prev, curr, window: int = 16, normalized: bool = False,
           poly_order: int = 4, fit_radius: int = 4, step: int = 1,
           centers: np.ndarray | None = None) -> VelocityField:
    """Cross-correlation velocimetry in the frequency domain.

    Windows centered on a pixel grid (``step``) or explicit ``centers``
    (row, col pairs) are correlated circularly via the FFT; phase
    normalization turns CC into the NCC variant.  Integer peaks are refined
    by a local polynomial fit on the fft-shifted correlation surface.
    Uncomputed pixels carry zero velocity and an invalid mask.
    """
    a, b = _check_pair(prev, curr)
    rows, cols = a.shape
    if window > min(rows, cols):
        raise ValueError("window exceeds frame dimensions")
    if centers is None:
        rr = np.arange(0, rows, step)
        cc = np.arange(0, cols, step)
        centers = np.stack(np.meshgrid(rr, cc, indexing="ij"),
                           axis=-1).reshape(-1, 2)
    centers = np.asarray(centers, dtype=int)

    w1 = _window_stack(a, window, centers)
    w2 = _window_stack(b, window, centers)
    f1 = np.fft.fft2(w1)
    f2 = np.fft.fft2(w2)
    spectrum = np.conj(f1) * f2
    if normalized:
        mag = np.abs(spectrum)
        nonzero = mag > 1e-12
        spectrum = np.where(nonzero, spectrum / np.where(nonzero, mag, 1.0),
                            0.0)
    corr = np.fft.ifft2(spectrum).real

    energy = w1.reshape(len(centers), -1).std(axis=1) \
        * w2.reshape(len(centers), -1).std(axis=1)
    alive = energy > 1e-12

    shifted = np.fft.fftshift(corr, axes=(1, 2))
    radius = min(fit_radius, window // 2 - 1)
    px, py, refined = _subpixel_peaks_periodic(shifted, poly_order, radius)
    half = window // 2
    dx = px - half
    dy = py - half

    u = np.zeros(a.shape)
    v = np.zeros(a.shape)
    valid = np.zeros(a.shape, dtype=bool)
    r, c = centers[:, 0], centers[:, 1]
    u[r, c] = np.where(alive, dx, 0.0)
    v[r, c] = np.where(alive, dy, 0.0)
    valid[r, c] = alive
    return VelocityField(u, v, valid)


def spatial_cc_oracle(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Direct O(W^4) circular cross-correlation (test oracle).

    R[k, m] = sum_{x,y} w1[y, x] * w2[(y + k) % W, (x + m) % W]; equals the
    inverse FFT of conj(F{w1}) * F{w2}.
    """
    w = w1.shape[0]
    out = np.zeros((w, w))
    for k in range(w):
        for m in range(w):
            acc = 0.0
            for yy in range(w):
                for xx in range(w):
                    acc += w1[yy, xx] * w2[(yy + k) % w, (xx + m) % w]
            out[k, m] = acc
    return out


def regularize(field: VelocityField, tau_lower: float = 0.1,
               tau_upper: float = 10.0, w: int = 1) -> VelocityField:
    """Clip outlier vectors and refill them from the neighborhood median.

    Vectors with magnitude outside (tau_lower, tau_upper] are zeroed, then
    replaced by the componentwise median of the (2w+1)^2 neighborhood of
    the thresholded field.  In-band vectors pass through untouched.
    """
    if not 0.0 < tau_lower < tau_upper:
        raise ValueError("need 0 < tau_lower < tau_upper")
    mag = field.magnitude
    in_band = (mag > tau_lower) & (mag <= tau_upper)
    tu = np.where(in_band, field.u, 0.0)
    tv = np.where(in_band, field.v, 0.0)
    size = 2 * w + 1
    med_u = ndimage.median_filter(tu, size=size, mode="nearest")
    med_v = ndimage.median_filter(tv, size=size, mode="nearest")
    u = np.where(in_band, field.u, med_u)
    v = np.where(in_band, field.v, med_v)
    return VelocityField(u, v, field.valid.copy())
