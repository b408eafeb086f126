"""Tests for the sky-condition classifier and window-artifact model."""

import itertools

import numpy as np
import pytest

from skyflow.skystate import (
    CLEAR,
    CUMULUS,
    SvcModel,
    WindowModel,
    apply_window,
    csi_drop,
    normalize_8bit,
    persistent_class,
    sky_features,
    svc_objective,
    svc_predict,
    svc_train,
    _expand,
)


def blobs(n_classes=4, per_class=60, spread=0.35, dim=3, seed=0):
    """Well-separated Gaussian clusters with a trailing bias feature."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-4.0, 4.0, size=(n_classes, dim))
    xs, ys = [], []
    for k in range(n_classes):
        pts = centers[k] + rng.normal(0, spread, size=(per_class, dim))
        xs.append(pts)
        ys.append(np.full(per_class, k))
    x = np.vstack(xs)
    x = np.column_stack([x, np.ones(len(x))])
    return x, np.concatenate(ys)


class TestSvc:

    def test_two_class_separable_perfect(self):
        x, y = blobs(n_classes=2, seed=1)
        model = svc_train(x, y, penalty=10.0)
        assert np.mean(svc_predict(model, x) == y) == 1.0

    def test_four_class_accuracy(self):
        x, y = blobs(n_classes=4, seed=2)
        model = svc_train(x, y, penalty=10.0)
        assert np.mean(svc_predict(model, x) == y) >= 0.95

    def test_objective_below_zero_weights(self):
        x, y = blobs(n_classes=3, seed=3)
        model = svc_train(x, y, penalty=5.0)
        for k, cls in enumerate(model.classes):
            y_pm = np.where(y == cls, 1.0, -1.0)
            trained = svc_objective(model.weights[k], x, y_pm, 5.0)
            zero = svc_objective(np.zeros(x.shape[1]), x, y_pm, 5.0)
            assert trained < zero

    def test_prototype_classified(self):
        x, y = blobs(n_classes=4, seed=4)
        model = svc_train(x, y, penalty=10.0)
        for k in range(4):
            proto = x[y == k].mean(axis=0)
            assert svc_predict(model, proto[None, :])[0] == k

    def test_zero_weights_tie_to_class_zero(self):
        model = SvcModel(np.zeros((4, 5)), np.arange(4), 1.0)
        assert svc_predict(model, np.ones((1, 5)))[0] == 0

    def test_scale_invariant_argmax(self):
        x, y = blobs(n_classes=4, seed=5)
        model = svc_train(x, y, penalty=10.0)
        scaled = SvcModel(model.weights * 7.3, model.classes, model.penalty,
                          model.order)
        assert np.array_equal(svc_predict(model, x), svc_predict(scaled, x))

    def test_single_class_rejected(self):
        x, y = blobs(n_classes=1, seed=6)
        with pytest.raises(ValueError):
            svc_train(x, y)

    def test_bad_penalty(self):
        x, y = blobs(n_classes=2)
        with pytest.raises(ValueError):
            svc_train(x, y, penalty=0.0)

    def test_polynomial_expansion_order(self):
        # XOR-style data: linearly inseparable, quadratic separable
        rng = np.random.default_rng(7)
        pts = rng.uniform(-1, 1, size=(200, 2))
        labels = ((pts[:, 0] * pts[:, 1]) > 0).astype(int)
        x = np.column_stack([pts, np.ones(len(pts))])
        linear = svc_train(x, labels, penalty=10.0, order=1)
        quad = svc_train(x, labels, penalty=10.0, order=2)
        acc_lin = np.mean(svc_predict(linear, x) == labels)
        acc_quad = np.mean(svc_predict(quad, x) == labels)
        assert acc_quad >= 0.97
        assert acc_quad > acc_lin

    def test_expand_keeps_bias_once(self):
        x = np.array([[2.0, 3.0, 1.0]])
        phi = _expand(x, order=2)
        assert np.sum(np.all(phi == 1.0, axis=0)) == 1


class TestSkyFeatures:

    def test_layout_and_bias(self):
        rng = np.random.default_rng(8)
        t = rng.normal(280, 5, (60, 80))
        m = np.abs(rng.normal(1, 0.3, (60, 80)))
        f = sky_features(101325.0, 0.98, t, m)
        assert f.shape == (10,)
        assert f[0] == 101325.0
        assert f[1] == 0.98
        assert f[2] == pytest.approx(t.mean())
        assert f[3] == pytest.approx(t.var())
        assert f[-1] == 1.0

    def test_constant_frame_moments(self):
        f = sky_features(1e5, 1.0, np.full((4, 4), 280.0), np.zeros((4, 4)))
        assert f[3] == 0.0 and f[4] == 0.0 and f[5] == 0.0


class TestPersistentClass:

    def test_simple_mode(self):
        assert persistent_class([1, 1, 1, 2, 1]) == 1

    def test_single_flip_suppressed(self):
        for pos in range(5):
            window = [3] * 5
            window[pos] = 1
            assert persistent_class(window) == 3

    def test_tie_breaks_low(self):
        # exhaustive two-label windows of even length
        for a, b in itertools.combinations(range(4), 2):
            window = [a, a, b, b]
            assert persistent_class(window) == min(a, b)

    def test_majority_needed_to_flip(self):
        # with T = 5 and two labels, fewer than 3 changed entries cannot
        # change the mode
        base = [2] * 5
        for flips in itertools.combinations(range(5), 2):
            w = list(base)
            for i in flips:
                w[i] = 0
            assert persistent_class(w) == 2
        w = [0, 0, 0, 2, 2]
        assert persistent_class(w) == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            persistent_class([])


class TestWindowModel:

    def test_gate_on_class(self):
        model = WindowModel(capacity=3)
        added = model.update(np.zeros((4, 4)), CUMULUS, [1.0, 1.0])
        assert not added and len(model.frame_set) == 0

    def test_gate_on_csi(self):
        model = WindowModel(capacity=3)
        assert csi_drop([1.0, 1.0, 1.0]) == 0.0
        added = model.update(np.zeros((4, 4)), CLEAR, [0.7, 0.8])
        assert not added
        added = model.update(np.zeros((4, 4)), CLEAR, [1.0, 0.99])
        assert added

    def test_identical_frames_median(self):
        model = WindowModel(capacity=4)
        grid = np.full((6, 8), 37.0)
        for _ in range(4):
            model.update(grid, CLEAR, [1.0])
        assert model.artifact is not None
        assert np.array_equal(model.artifact, grid)

    def test_median_robust_to_minority_corruption(self):
        rng = np.random.default_rng(9)
        model = WindowModel(capacity=11)
        for i in range(11):
            frame = np.full((5, 5), 10.0)
            if i < 5:   # corrupt a minority
                frame += rng.uniform(50, 100, size=(5, 5))
            model.update(frame, CLEAR, [1.0])
        assert np.all(model.artifact == 10.0)

    def test_end_of_day_resample(self):
        model = WindowModel(capacity=3)
        for i in range(7):
            model.update(np.full((2, 2), float(i)), CLEAR, [1.0])
        model.end_of_day(seed=5)
        assert len(model.frame_set) == 3

    def test_planted_artifact_recovery(self):
        # a fixed artifact added to noisy clear frames is recovered by the
        # pixelwise median within < 1 intensity unit
        rng = np.random.default_rng(10)
        artifact = rng.uniform(-30.0, 30.0, size=(12, 16))
        model = WindowModel(capacity=250)
        for _ in range(300):
            clear = rng.normal(0.0, 4.0, size=(12, 16))
            model.update(artifact + clear, CLEAR, [1.0, 1.0, 0.99])
        err = np.abs(model.artifact - artifact)
        assert np.median(err) < 1.0


class TestApplyWindow:

    def test_zero_artifact_identity(self):
        model = WindowModel(capacity=1)
        model.update(np.zeros((3, 3)), CLEAR, [1.0])
        frame = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(apply_window(frame, model), frame)

    def test_frame_equals_artifact(self):
        model = WindowModel(capacity=1)
        grid = np.arange(9.0).reshape(3, 3)
        model.update(grid, CLEAR, [1.0])
        assert np.all(apply_window(grid, model) == 0.0)

    def test_undefined_artifact_passthrough_warns(self):
        model = WindowModel(capacity=5)
        messages = []
        frame = np.ones((2, 2))
        out = apply_window(frame, model, warn=messages.append)
        assert np.array_equal(out, frame)
        assert len(messages) == 1


class TestNormalize8bit:

    def test_constant_frame_zeros(self):
        assert np.all(normalize_8bit(np.full((4, 4), 123.4)) == 0.0)

    def test_clamp_boundary(self):
        frame = np.array([[0.0, 9700.0]])
        out = normalize_8bit(frame)
        assert out[0, 0] == 0.0
        assert out[0, 1] == 255.0

    def test_range_bounded(self):
        rng = np.random.default_rng(11)
        frame = rng.uniform(-5e3, 5e4, size=(30, 30))
        out = normalize_8bit(frame)
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_monotone_given_equal_minima(self):
        rng = np.random.default_rng(12)
        a = rng.uniform(0, 9000, size=(10, 10))
        b = a * rng.uniform(0.4, 1.0, size=(10, 10))   # b <= a pixelwise
        a.flat[0] = 0.0
        b.flat[0] = 0.0   # equal minima
        na, nb = normalize_8bit(a), normalize_8bit(b)
        assert np.all(na >= nb - 1e-12)
