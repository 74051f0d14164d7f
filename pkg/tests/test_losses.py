"""Loss functions: SSIM vs a naive oracle, residual bounds, cosine target
mapping, the decaying regularizer, and photometric gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desksplat.core import TrainConfig
from desksplat.losses import (SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
                              ResidualBounds, loss_cos, loss_mlp, loss_reg,
                              loss_residual, photometric_loss, psnr,
                              residual_bounds, ssim)


# ---------------------------------------------------------------- SSIM oracle

def _naive_ssim(a, b):
    """Direct per-window SSIM computation: explicit loops, no convolution
    tricks. Serves as the independent oracle."""
    r = SSIM_WINDOW // 2
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    win = np.outer(g, g)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    H, W, C = a.shape
    maps = np.zeros((H - 2 * r, W - 2 * r, C))
    for c in range(C):
        for i in range(r, H - r):
            for j in range(r, W - r):
                pa = a[i - r:i + r + 1, j - r:j + r + 1, c]
                pb = b[i - r:i + r + 1, j - r:j + r + 1, c]
                mx = np.sum(win * pa)
                my = np.sum(win * pb)
                sx2 = np.sum(win * pa * pa) - mx * mx
                sy2 = np.sum(win * pb * pb) - my * my
                sxy = np.sum(win * pa * pb) - mx * my
                maps[i - r, j - r, c] = ((2 * mx * my + SSIM_C1)
                                         * (2 * sxy + SSIM_C2)) / (
                    (mx * mx + my * my + SSIM_C1) * (sx2 + sy2 + SSIM_C2))
    m = maps.mean(axis=2)
    return float(m.mean()), m


class TestSsim:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.random((20, 24, 3))
        b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
        got, got_map = ssim(a, b)
        want, want_map = _naive_ssim(a, b)
        assert abs(got - want) < 1e-10
        assert np.max(np.abs(got_map - want_map)) < 1e-10

    def test_identical_images_score_one(self):
        img = np.random.default_rng(1).random((16, 16, 3))
        val, smap = ssim(img, img)
        assert val == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(smap, 1.0, atol=1e-12)

    def test_valid_region_shape(self):
        _, smap = ssim(np.zeros((30, 40, 3)), np.zeros((30, 40, 3)))
        assert smap.shape == (20, 30)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestPsnr:
    def test_known_value(self):
        a = np.zeros((4, 4)); b = np.full((4, 4), 0.5)
        assert psnr(a, b) == pytest.approx(-20 * np.log10(0.5))

    def test_identical_capped(self):
        img = np.random.default_rng(2).random((8, 8, 3))
        assert psnr(img, img) == 99.0


class TestResidualLoss:
    def test_bounds_from_quantiles(self):
        cfg = TrainConfig()
        rng = np.random.default_rng(3)
        res = rng.random((28, 28))
        b = residual_bounds(res, cfg.tau_u, cfg.tau_l)
        # the box-blurred residual thresholded at its quantiles
        assert b.b_low.shape == res.shape and b.b_high.shape == res.shape
        assert set(np.unique(b.b_low)) <= {0.0, 1.0}
        assert set(np.unique(b.b_high)) <= {0.0, 1.0}
        assert np.all(b.b_low <= b.b_high)

    def test_zero_iff_inside_band_randomized(self):
        """loss_residual is zero exactly when lower <= M <= upper, checked
        over 10^4 random (M, bounds) cases."""
        rng = np.random.default_rng(4)
        lower = (rng.random(10_000) < 0.3).astype(float)
        upper = np.maximum(lower, (rng.random(10_000) < 0.5).astype(float))
        M = rng.random(10_000)
        for k in range(10_000):
            b = ResidualBounds(b_low=np.array([[lower[k]]]),
                               b_high=np.array([[upper[k]]]))
            val, _ = loss_residual(np.array([[M[k]]]), b)
            inside = lower[k] <= M[k] <= upper[k]
            assert (val == 0.0) == inside, (M[k], lower[k], upper[k], val)

    def test_penalty_magnitudes(self):
        b = ResidualBounds(b_low=np.array([[1.0]]), b_high=np.array([[1.0]]))
        val, _ = loss_residual(np.array([[0.25]]), b)
        assert val == pytest.approx(0.75, abs=1e-12)
        b2 = ResidualBounds(b_low=np.array([[0.0]]), b_high=np.array([[0.0]]))
        val2, _ = loss_residual(np.array([[0.4]]), b2)
        assert val2 == pytest.approx(0.4, abs=1e-12)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(5)
        M = rng.random((6, 6))
        b = ResidualBounds(b_low=(rng.random((6, 6)) < 0.4).astype(float),
                           b_high=np.ones((6, 6)))
        _, grad = loss_residual(M, b)
        eps = 1e-7
        for idx in [(0, 0), (3, 4), (5, 5)]:
            M2 = M.copy(); M2[idx] += eps
            M3 = M.copy(); M3[idx] -= eps
            fd = (loss_residual(M2, b)[0] - loss_residual(M3, b)[0]) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, abs=1e-6)


class TestCosLoss:
    def test_zero_when_equal(self):
        m = np.random.default_rng(6).random((4, 4))
        val, _ = loss_cos(m, m)
        assert val == 0.0

    def test_mean_absolute_difference(self):
        M = np.array([[0.5, 1.0]])
        target = np.array([[0.0, 0.25]])
        val, _ = loss_cos(M, target)
        assert val == pytest.approx((0.5 + 0.75) / 2, abs=1e-12)


class TestRegLoss:
    def test_initial_value(self):
        M = np.array([[0.25, 0.75], [1.0, 0.5]])
        val, _ = loss_reg(M, 0, 400.0)
        assert val == pytest.approx(np.mean(np.abs(1 - M)), abs=1e-12)

    def test_decay_at_beta(self):
        M = np.array([[0.25, 0.75], [1.0, 0.5]])
        v0, _ = loss_reg(M, 0, 400.0)
        v1, _ = loss_reg(M, 400, 400.0)
        assert v1 == pytest.approx(np.exp(-1.0) * v0, abs=1e-12)

    @given(st.integers(0, 5000))
    @settings(max_examples=30, deadline=None)
    def test_monotone_decay(self, i):
        M = np.full((3, 3), 0.2)
        v_i, _ = loss_reg(M, i, 400.0)
        v_next, _ = loss_reg(M, i + 1, 400.0)
        assert v_next <= v_i


def test_combined_mlp_loss_weights():
    cfg = TrainConfig()
    total = loss_mlp(0.3, 0.5, 0.1, cfg)
    assert total == pytest.approx(0.5 * 0.3 + 0.5 * 0.5 + 2.0 * 0.1, abs=1e-12)


class TestPhotometric:
    def test_perfect_render_zero_loss(self):
        img = np.random.default_rng(7).random((16, 16, 3))
        val, grad = photometric_loss(img, img, np.ones((16, 16)), 0.2)
        assert val == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        mask = rng.random((16, 16))
        _, grad = photometric_loss(a, b, mask, 0.2)
        eps = 1e-6
        for idx in [(2, 3, 0), (8, 8, 1), (13, 1, 2)]:
            a2 = a.copy(); a2[idx] += eps
            a3 = a.copy(); a3[idx] -= eps
            fd = (photometric_loss(a2, b, mask, 0.2)[0]
                  - photometric_loss(a3, b, mask, 0.2)[0]) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, abs=1e-5)

    def test_zero_mask_kills_pixel_gradient(self):
        rng = np.random.default_rng(9)
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        mask = np.ones((16, 16))
        mask[7, 7] = 0.0
        val1, _ = photometric_loss(a, b, mask, 0.2)
        a2 = a.copy()
        a2[7, 7] += 0.2  # masked-out pixel
        # L1 part must not change; SSIM windows overlapping the pixel may,
        # so compare with the mask applied to the D-SSIM map as implemented:
        # the masked pixel's own L1 contribution is exactly zero.
        _, grad = photometric_loss(a, b, mask, 0.2)
        l1_only, _ = photometric_loss(a, b, mask, 1e-9)
        a3 = a.copy(); a3[7, 7] = b[7, 7]
        l1_same, _ = photometric_loss(a3, b, mask, 1e-9)
        assert l1_only == pytest.approx(l1_same, rel=1e-6)
