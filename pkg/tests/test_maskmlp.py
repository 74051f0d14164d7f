"""The mask MLP: prediction range, analytic gradients, Adam updates, and
pixel-level mask refinement."""

import numpy as np
import pytest

from desksplat.core import TrainConfig
from desksplat.features import FeatureMap
from desksplat.maskmlp import (init_mask_mlp, mlp_adam_step, predict_mask,
                               predict_mask_backward, refine_mask)


def _fmap(seed=0, grid=4, dim=16):
    rng = np.random.default_rng(seed)
    return FeatureMap(values=rng.normal(size=(grid, grid, dim)),
                      level="low", source="builtin")


def _mlp(seed=0, dim=16, hidden=8):
    return init_mask_mlp(dim, hidden, np.random.default_rng(seed))


class TestPredict:
    def test_output_in_open_unit_interval(self):
        mask, _ = predict_mask(_mlp(), _fmap())
        assert mask.shape == (4, 4)
        assert np.all((mask > 0.0) & (mask < 1.0))

    def test_fresh_mlp_biased_towards_static(self):
        # the output bias initializes positive so training starts near "keep"
        masks = [predict_mask(_mlp(s), _fmap(s + 50))[0].mean()
                 for s in range(5)]
        assert np.mean(masks) > 0.5

    def test_deterministic(self):
        m1, _ = predict_mask(_mlp(3), _fmap(4))
        m2, _ = predict_mask(_mlp(3), _fmap(4))
        assert np.array_equal(m1, m2)


class TestBackward:
    def test_matches_finite_differences(self):
        mlp = _mlp(1)
        f = _fmap(2)
        d_mask = np.random.default_rng(3).normal(size=(4, 4))

        def loss(m):
            mask, _ = predict_mask(m, f)
            return float(np.sum(mask * d_mask))

        _, cache = predict_mask(mlp, f)
        grads = predict_mask_backward(mlp, cache, d_mask)
        eps = 1e-6
        def perturbed(name, k, delta):
            m = mlp.copy()
            if name == "b2":
                m.b2 = m.b2 + delta
            else:
                getattr(m, name).reshape(-1)[k] += delta
            return m

        for name, p in mlp.param_items():
            g = np.atleast_1d(grads[name]).reshape(-1)
            for k in range(min(p.size, 20)):
                fd = (loss(perturbed(name, k, eps))
                      - loss(perturbed(name, k, -eps))) / (2 * eps)
                assert g[k] == pytest.approx(fd, abs=1e-5), name


class TestAdam:
    def test_step_descends_simple_target(self):
        mlp = _mlp(5)
        f = _fmap(6)
        target = np.zeros((4, 4))  # push everything transient

        def current_loss():
            mask, _ = predict_mask(mlp, f)
            return float(np.mean((mask - target) ** 2))

        first = current_loss()
        for _ in range(200):
            mask, cache = predict_mask(mlp, f)
            d_mask = 2 * (mask - target) / mask.size
            grads = predict_mask_backward(mlp, cache, d_mask)
            mlp_adam_step(mlp, grads, 1e-2)
        assert current_loss() < 0.25 * first

    def test_nonfinite_gradients_skipped(self):
        mlp = _mlp(7)
        before = mlp.w1.copy()
        _, cache = predict_mask(mlp, _fmap(8))
        grads = predict_mask_backward(mlp, cache, np.ones((4, 4)))
        grads["w1"] = grads["w1"] * np.nan
        mlp_adam_step(mlp, grads, 1e-2)
        assert np.array_equal(mlp.w1, before)
        assert mlp.skipped_steps == 1

    def test_step_counter_advances(self):
        mlp = _mlp(9)
        _, cache = predict_mask(mlp, _fmap(10))
        grads = predict_mask_backward(mlp, cache, np.ones((4, 4)))
        mlp_adam_step(mlp, grads, 1e-3)
        assert mlp.step == 1


class TestRefine:
    def test_output_size_and_range(self):
        patch = np.random.default_rng(11).random((4, 4))
        px = refine_mask(patch, 64, 48, 7)
        assert px.shape == (48, 64)
        assert np.all((px >= 0.0) & (px <= 1.0))

    def test_erosion_expands_transient_region(self):
        """Dilating the transient (low) region == eroding the mask: the
        refined mask is pointwise <= the plain upsampled mask."""
        patch = np.ones((4, 4))
        patch[1, 1] = 0.0
        plain = refine_mask(patch, 56, 56, 1)
        dilated = refine_mask(patch, 56, 56, 7)
        assert np.all(dilated <= plain + 1e-12)
        assert dilated.sum() < plain.sum()

    def test_constant_mask_unchanged(self):
        px = refine_mask(np.full((4, 4), 0.7), 28, 28, 7)
        assert np.allclose(px, 0.7, atol=1e-12)
