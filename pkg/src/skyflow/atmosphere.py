"""Deterministic IR background: scatter + direct-sun models and their removal.

The clear-sky IR signal decomposes into an exponential scatter gradient
along the image vertical and a Lorentzian bump at the sun.  Per-frame
optimal parameters are fitted with the shared steepest-descent optimizer;
polynomial ridge regressors predict the scatter parameters from weather and
sun geometry, while the direct-sun parameters are constants taken as sample
means.  Applying the predicted background and interpolating the circumsolar
disc leaves only the cloud-reflected radiation in the frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .irradiance import DescentResult, steepest_descent


@dataclass(frozen=True)
class AtmoParams:
    """Scatter scale/length-scale and direct-sun scale/length-scale."""

    sigma1: float
    lambda1: float
    sigma2: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 == 0 or self.lambda2 == 0:
            raise ValueError("length-scales must be nonzero")
        if self.sigma2 < 0:
            raise ValueError("direct-sun scale must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma1, self.lambda1, self.sigma2, self.lambda2])


def pixel_grid(shape) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinate grids (X over columns, Y over rows), 0-based.

    The background models depend only on offsets from the sun pixel, so the
    indexing base cancels as long as grids and sun coordinates agree.
    """
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols]
    return xx.astype(float), yy.astype(float)


def scatter_model(shape, y0: float, sigma1: float, lambda1: float) -> np.ndarray:
    """Exponential scatter background, constant along rows."""
    if lambda1 == 0:
        raise ValueError("lambda1 must be nonzero")
    _, yy = pixel_grid(shape)
    return sigma1 * np.exp((yy - y0) / lambda1)


def direct_model(shape, sun: tuple[float, float], sigma2: float,
                 lambda2: float) -> np.ndarray:
    """Lorentzian direct-sun bump centered at ``sun`` = (x0, y0)."""
    if lambda2 == 0:
        raise ValueError("lambda2 must be nonzero (degenerate peak)")
    xx, yy = pixel_grid(shape)
    x0, y0 = sun
    r2 = (xx - x0) ** 2 + (yy - y0) ** 2
    return sigma2 * lambda2 ** 2 / (r2 + lambda2 ** 2) ** 1.5


def combined_model(shape, sun: tuple[float, float], p: AtmoParams) -> np.ndarray:
    """Scatter plus direct background."""
    return scatter_model(shape, sun[1], p.sigma1, p.lambda1) \
        + direct_model(shape, sun, p.sigma2, p.lambda2)


def _combined_raw(theta: np.ndarray, xx, yy, sun) -> np.ndarray:
    s1, l1, s2, l2 = theta
    x0, y0 = sun
    r2 = (xx - x0) ** 2 + (yy - y0) ** 2
    return s1 * np.exp((yy - y0) / l1) + s2 * l2 ** 2 / (r2 + l2 ** 2) ** 1.5


def _combined_gradient(theta: np.ndarray, xx, yy, sun) -> np.ndarray:
    s1, l1, s2, l2 = theta
    x0, y0 = sun
    dy = yy - y0
    expo = np.exp(dy / l1)
    r2 = (xx - x0) ** 2 + dy ** 2
    rho = r2 + l2 ** 2
    return np.stack([
        expo,
        -s1 * expo * dy / l1 ** 2,
        l2 ** 2 / rho ** 1.5,
        s2 * l2 * (2.0 * r2 - l2 ** 2) / rho ** 2.5,
    ])


def _frame_loss(theta, intensities, xx, yy, sun):
    resid = intensities - _combined_raw(theta, xx, yy, sun)
    loss = float(np.mean(np.abs(resid)))
    grad = -(np.sign(resid)[None] * _combined_gradient(theta, xx, yy, sun))
    return loss, grad.reshape(4, -1).mean(axis=1)


def fit_frame(frame, sun: tuple[float, float],
              init: AtmoParams, step: float = 1e-4,
              max_iters: int = 100_000) -> tuple[AtmoParams, DescentResult]:
    """Fit the background parameters of one clear-sky frame.

    Steepest descent on the mean absolute residual, sharing the optimizer
    and stopping rules of the irradiance fits.
    """
    pixels = np.asarray(frame.pixels if hasattr(frame, "pixels") else frame,
                        dtype=float)
    xx, yy = pixel_grid(pixels.shape)
    result = steepest_descent(
        lambda th: _frame_loss(th, pixels, xx, yy, sun),
        init.as_array(), step=step, max_iters=max_iters)
    return AtmoParams(*result.params), result


def constant_params(samples) -> float:
    """Sample mean of per-frame optimal values (direct-sun parameters)."""
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise ValueError("no samples")
    return float(arr.mean())


# ---------------------------------------------------------------------------
# polynomial ridge regression over weather/geometry features

def monomial_exponents(order: int, n_features: int) -> list[tuple[int, ...]]:
    """Exponent tuples of all monomials with total degree <= order.

    Equivalently the degree-``order`` homogeneous monomials of the
    bias-augmented feature vector, so the count satisfies the closed form
    (order + d - 1)! / (order! (d - 1)!) with d = n_features + 1.
    """
    exps = []
    for total in range(order + 1):
        for combo in combinations_with_replacement(range(n_features), total):
            e = [0] * n_features
            for idx in combo:
                e[idx] += 1
            exps.append(tuple(e))
    return exps


def count_monomials(order: int, n_features: int) -> int:
    """Closed form for the monomial count of ``monomial_exponents``."""
    d = n_features + 1
    return math.factorial(order + d - 1) // (math.factorial(order)
                                             * math.factorial(d - 1))


def expand_features(x: np.ndarray, exponents) -> np.ndarray:
    """Evaluate the monomial basis on rows of ``x`` -> (n, P) design matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = [np.prod(x ** np.asarray(e, dtype=float), axis=1) for e in exponents]
    return np.column_stack(cols)


def ridge_solve(phi: np.ndarray, y: np.ndarray, ridge_lambda: float) -> np.ndarray:
    """Closed-form ridge solution (Phi^T Phi + lambda I)^-1 Phi^T y."""
    p = phi.shape[1]
    gram = phi.T @ phi + ridge_lambda * np.eye(p)
    rhs = phi.T @ y
    if ridge_lambda == 0.0:
        # unregularized: fail loudly on rank deficiency
        if np.linalg.matrix_rank(gram) < p:
            raise np.linalg.LinAlgError(
                "rank-deficient normal matrix at lambda = 0")
    return np.linalg.solve(gram, rhs)


@dataclass
class ParamRegressor:
    """Polynomial ridge model predicting one background parameter.

    Features are standardized (train mean/scale stored) before the monomial
    expansion; high orders are numerically hopeless on raw magnitudes.
    """

    weights: np.ndarray
    order: int
    ridge_lambda: float
    feature_schema: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.feature_schema):
            raise ValueError(
                f"expected {len(self.feature_schema)} features, got {x.shape[1]}")
        z = (x - self.mean) / self.scale
        phi = expand_features(z, monomial_exponents(self.order, z.shape[1]))
        return phi @ self.weights


def fit_param_regressor(features, targets, order: int, ridge_lambda: float,
                        feature_schema=None) -> ParamRegressor:
    """Fit the ridge regressor on raw feature rows.

    Requires at least as many samples as monomials when unregularized.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    n, d = x.shape
    exps = monomial_exponents(order, d)
    if ridge_lambda == 0.0 and n < len(exps):
        raise ValueError(f"{n} samples cannot determine {len(exps)} weights "
                         "without regularization")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    phi = expand_features((x - mean) / scale, exps)
    weights = ridge_solve(phi, y, ridge_lambda)
    if feature_schema is None:
        feature_schema = tuple(f"x{i}" for i in range(d))
    return ParamRegressor(weights, order, ridge_lambda, tuple(feature_schema),
                          mean, scale)


def loo_cv_order(day_groups, orders, lambdas) -> tuple[int, float, float]:
    """Leave-one-day-out cross-validation over (order, lambda) grids.

    ``day_groups`` is a sequence of (features, targets) pairs, one pair per
    recorded day; each validation fold holds out a whole day.  Returns the
    grid point with minimum validation RMSE.
    """
    orders = list(orders)
    lambdas = list(lambdas)
    if not orders or not lambdas:
        raise ValueError("empty candidate grid")
    if len(day_groups) < 3:
        raise ValueError("need at least 3 day groups")
    groups = [(np.atleast_2d(np.asarray(f, dtype=float)),
               np.asarray(t, dtype=float)) for f, t in day_groups]

    best = None
    for order in orders:
        for lam in lambdas:
            sq_sum, count = 0.0, 0
            for hold in range(len(groups)):
                train_x = np.vstack([f for i, (f, _) in enumerate(groups)
                                     if i != hold])
                train_y = np.concatenate([t for i, (_, t) in enumerate(groups)
                                          if i != hold])
                test_x, test_y = groups[hold]
                try:
                    model = fit_param_regressor(train_x, train_y, order, lam)
                except (ValueError, np.linalg.LinAlgError):
                    sq_sum = math.inf
                    count = 1
                    break
                pred = model.predict(test_x)
                sq_sum += float(np.sum((pred - test_y) ** 2))
                count += len(test_y)
            rmse = math.sqrt(sq_sum / count) if math.isfinite(sq_sum) else math.inf
            if best is None or rmse < best[2]:
                best = (order, lam, rmse)
    return best


# ---------------------------------------------------------------------------
# background removal

def interpolate_circumsolar(pixels: np.ndarray, sun: tuple[float, float],
                            r0: float = 3.0) -> np.ndarray:
    """Replace pixels within ``r0`` of the sun by their nearest outside pixel.

    True 2-D Euclidean nearest neighbor over the pixels beyond the disc;
    ties resolve to the smallest row index, then the smallest column index.
    Idempotent: replaced values come from pixels that are never replaced.
    """
    out = np.asarray(pixels, dtype=float).copy()
    h, w = out.shape
    yy, xx = np.mgrid[0:h, 0:w]
    x0, y0 = sun
    dist2 = (xx - x0) ** 2 + (yy - y0) ** 2
    inside = dist2 <= r0 ** 2
    if not inside.any():
        return out
    if inside.all():
        raise ValueError("no pixels outside the circumsolar disc")
    in_rows, in_cols = np.nonzero(inside)
    out_rows, out_cols = np.nonzero(~inside)   # row-major: (row, col) ascending
    d2 = (in_rows[:, None] - out_rows[None, :]) ** 2 \
        + (in_cols[:, None] - out_cols[None, :]) ** 2
    # argmin takes the first minimum, i.e. smallest row then column on ties
    nearest = np.argmin(d2, axis=1)
    out[in_rows, in_cols] = out[out_rows[nearest], out_cols[nearest]]
    return out


def detrend_frame(pixels: np.ndarray, sun: tuple[float, float],
                  predicted: AtmoParams, tau0: float,
                  r0: float = 3.0) -> np.ndarray:
    """Remove the predicted background and patch the circumsolar disc.

    The full scatter+direct model is subtracted only when the frame maximum
    reaches the sun-visible threshold ``tau0``; an occluded sun leaves only
    the scatter gradient to remove.  Values stay real-valued; clamping to a
    storage range is the caller's concern at export time.
    """
    arr = np.asarray(pixels, dtype=float)
    if not np.all(np.isfinite(predicted.as_array())):
        raise ValueError("predicted parameters must be finite")
    h, w = arr.shape
    x0, y0 = sun
    sun_inside = 0 <= x0 < w and 0 <= y0 < h
    if float(arr.max()) < tau0 or not sun_inside:
        background = scatter_model(arr.shape, y0, predicted.sigma1,
                                   predicted.lambda1)
    else:
        background = combined_model(arr.shape, sun, predicted)
    residual = arr - background
    if sun_inside:
        residual = interpolate_circumsolar(residual, sun, r0)
    return residual
