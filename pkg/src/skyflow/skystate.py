"""Sky-condition classification and the persistent window-artifact model.

A linear one-vs-all SVC over weather and frame statistics labels each
capture as clear, cumulus, stratus or nimbus.  A mode filter over the last
few raw labels suppresses sporadic misclassifications.  Clear-sky frames
that also pass a CSI-stability gate feed a pixelwise median model of the
germanium-window artifacts (water spots, dust), which is subtracted from
every detrended frame before feature extraction of the motion stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .atmosphere import expand_features, monomial_exponents

CLASS_NAMES = ("clear", "cumulus", "stratus", "nimbus")
CLEAR, CUMULUS, STRATUS, NIMBUS = range(4)

NORMALIZATION_DIVISOR = 9.7e3   # ~ dry lapse x usable height band x 100

CSI_STABILITY_LIMIT = 0.05


def _moments(values: np.ndarray) -> tuple[float, float, float, float]:
    v = np.asarray(values, dtype=float).ravel()
    mean = float(v.mean())
    var = float(v.var())
    if var == 0.0:
        return mean, 0.0, 0.0, 0.0
    z = (v - mean) / np.sqrt(var)
    return mean, var, float(np.mean(z ** 3)), float(np.mean(z ** 4))


def sky_features(pressure_Pa: float, csi: float, temperature: np.ndarray,
                 magnitude: np.ndarray) -> np.ndarray:
    """Ten-entry feature vector in fixed order, trailing bias constant.

    Temperature statistics use mean/variance/skewness/kurtosis; velocity
    magnitude drops the skewness (it degrades the classifier).
    """
    t_mean, t_var, t_skew, t_kurt = _moments(temperature)
    m_mean, m_var, _, m_kurt = _moments(magnitude)
    return np.array([pressure_Pa, csi, t_mean, t_var, t_skew, t_kurt,
                     m_mean, m_var, m_kurt, 1.0])


@dataclass
class SvcModel:
    """One-vs-all linear SVC with squared-hinge loss, bias folded into the
    weights via the trailing constant feature."""

    weights: np.ndarray          # (n_classes, P)
    classes: np.ndarray
    penalty: float
    order: int = 1

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        phi = _expand(np.atleast_2d(np.asarray(x, dtype=float)), self.order)
        return phi @ self.weights.T


def _expand(x: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return x
    # strip the trailing bias before expansion: the degree-0 monomial
    # re-introduces it, and duplicated constants make the Gram singular
    exps = monomial_exponents(order, x.shape[1] - 1)
    return expand_features(x[:, :-1], exps)


def svc_objective(w: np.ndarray, x: np.ndarray, y_pm: np.ndarray,
                  penalty: float) -> float:
    """Primal squared-hinge objective for one binary subproblem."""
    margins = np.maximum(0.0, 1.0 - y_pm * (x @ w))
    return 0.5 * float(w @ w) + penalty * float(np.sum(margins ** 2))


def _train_binary(x: np.ndarray, y_pm: np.ndarray, penalty: float,
                  tol: float, max_epochs: int, seed: int) -> np.ndarray:
    """Dual coordinate descent for the squared-hinge linear SVC.

    Nonnegativity-constrained dual with the 1/(2C) diagonal term.  The
    squared-hinge dual has no upper box; an upper cap at C belongs to the
    plain hinge loss and would leave the primal objective unoptimized.
    """
    n, p = x.shape
    alphas = np.zeros(n)
    w = np.zeros(p)
    diag = 1.0 / (2.0 * penalty)
    q_ii = np.einsum("ij,ij->i", x, x) + diag
    rng = np.random.default_rng(seed)
    order = np.arange(n)
    for _ in range(max_epochs):
        rng.shuffle(order)
        max_violation = 0.0
        for i in order:
            g = y_pm[i] * float(x[i] @ w) - 1.0 + diag * alphas[i]
            projected = max(alphas[i] - g / q_ii[i], 0.0)
            delta = projected - alphas[i]
            if delta != 0.0:
                alphas[i] = projected
                w += delta * y_pm[i] * x[i]
            if alphas[i] > 0.0 or g < 0.0:
                max_violation = max(max_violation, abs(g))
        if max_violation < tol:
            break
    return w


def svc_train(features: np.ndarray, labels: np.ndarray, penalty: float = 1.0,
              order: int = 1, tol: float = 1e-4, max_epochs: int = 200,
              seed: int = 0) -> SvcModel:
    """Train the one-vs-all classifier.

    Each class gets a binary squared-hinge SVC against the rest;
    requires at least two distinct classes and a positive penalty.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=int)
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("degenerate training set: single class")
    phi = _expand(x, order)
    weights = []
    for k, cls in enumerate(classes):
        y_pm = np.where(y == cls, 1.0, -1.0)
        w = _train_binary(phi, y_pm, penalty, tol, max_epochs, seed + k)
        if svc_objective(w, phi, y_pm, penalty) > svc_objective(
                np.zeros_like(w), phi, y_pm, penalty):
            raise RuntimeError(f"training failed to improve for class {cls}")
        weights.append(w)
    return SvcModel(np.vstack(weights), classes, penalty, order)


def svc_predict(model: SvcModel, x) -> np.ndarray:
    """Class labels by argmax score; ties fall to the lowest class index."""
    scores = model.decision_scores(x)
    return model.classes[np.argmax(scores, axis=1)]


def persistent_class(history) -> int:
    """Mode of the last raw labels; ties resolve to the lower label.

    The caller's window must hold raw model outputs, never previous modes,
    or errors would feed back into the filter.
    """
    h = np.asarray(history, dtype=int)
    if h.size == 0:
        raise ValueError("empty history")
    return int(np.argmax(np.bincount(h)))


def csi_drop(csi_window) -> float:
    """Absolute deviation of the mean CSI from 1 over the recent window."""
    w = np.asarray(csi_window, dtype=float)
    return float(abs(1.0 - w.mean()))


@dataclass
class WindowModel:
    """Persistent pixelwise-median model of window artifacts."""

    capacity: int
    frame_set: list = field(default_factory=list)
    artifact: np.ndarray | None = None

    def update(self, frame: np.ndarray, label: int, csi_window) -> bool:
        """Admit a detrended frame if the sky is clear and CSI is stable.

        Returns True when the frame was added.  The artifact becomes
        available once the set reaches capacity and is the pixelwise median
        of the retained frames.
        """
        if label != CLEAR or csi_drop(csi_window) > CSI_STABILITY_LIMIT:
            return False
        self.frame_set.append(np.asarray(frame, dtype=float))
        if len(self.frame_set) >= self.capacity:
            self.artifact = np.median(np.stack(self.frame_set), axis=0)
        return True

    def end_of_day(self, seed: int = 0) -> None:
        """Re-initialize the retained set with uniformly sampled frames."""
        rng = np.random.default_rng(seed)
        keep = min(self.capacity, len(self.frame_set))
        if keep == 0:
            return
        idx = rng.choice(len(self.frame_set), size=keep, replace=False)
        self.frame_set = [self.frame_set[i] for i in sorted(idx)]


def window_update(model: WindowModel, frame: np.ndarray, label: int,
                  csi_window) -> WindowModel:
    """Functional wrapper over :meth:`WindowModel.update`."""
    model.update(frame, label, csi_window)
    return model


def apply_window(frame: np.ndarray, model: WindowModel,
                 warn=None) -> np.ndarray:
    """Subtract the window artifact; pass through when it is undefined."""
    arr = np.asarray(frame, dtype=float)
    if model.artifact is None:
        if warn is not None:
            warn(f"window artifact undefined "
                 f"({len(model.frame_set)}/{model.capacity} frames); "
                 "frame passed through")
        return arr.copy()
    return arr - model.artifact


def normalize_8bit(frame: np.ndarray) -> np.ndarray:
    """Min-shift, scale by 2^8 over the usable intensity band, clamp to 8 bits.

    Only used for segmentation-oriented outputs; feature extraction keeps
    the raw detrended values.
    """
    arr = np.asarray(frame, dtype=float)
    shifted = arr - arr.min()
    scaled = shifted / NORMALIZATION_DIVISOR * 2 ** 8
    return np.clip(scaled, 0.0, 255.0)
