"""Parameter containers, activations, covariance building, and cameras."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from desksplat.core import (Camera, DegenerateRotationError, GaussianSet,
                            TrainConfig, activate_parameters, build_covariance,
                            clamp_image, logit, quat_to_rotation, sigmoid)


def _random_set(n=5, seed=0, sh_bands=4):
    rng = np.random.default_rng(seed)
    return GaussianSet(
        positions=rng.normal(size=(n, 3)),
        log_scales=rng.normal(size=(n, 3)) * 0.3 - 1.0,
        rotations=rng.normal(size=(n, 4)),
        opacity_logits=rng.normal(size=n),
        colors=rng.normal(size=(n, sh_bands, 3)),
    )


class TestGaussianSet:
    def test_count_and_bands(self):
        g = _random_set(7, sh_bands=4)
        assert g.count == 7
        assert g.sh_bands == 4

    def test_validate_rejects_bad_shapes(self):
        g = _random_set(5)
        g.rotations = g.rotations[:, :3]
        with pytest.raises(ValueError):
            g.validate()

    def test_copy_is_deep(self):
        g = _random_set(3)
        c = g.copy()
        c.positions[0, 0] = 123.0
        assert g.positions[0, 0] != 123.0


class TestActivations:
    def test_sigmoid_logit_inverse(self):
        x = np.linspace(-8, 8, 101)
        assert np.allclose(logit(sigmoid(x)), x, atol=1e-9)

    def test_opacity_in_unit_interval(self):
        act = activate_parameters(_random_set(20))
        assert np.all(act.opacities > 0) and np.all(act.opacities < 1)

    def test_scales_positive(self):
        act = activate_parameters(_random_set(20))
        assert np.all(act.scales > 0)

    def test_quaternions_unit_norm(self):
        act = activate_parameters(_random_set(20))
        assert np.allclose(np.linalg.norm(act.quaternions, axis=1), 1.0)

    def test_zero_quaternion_rejected(self):
        g = _random_set(3)
        g.rotations[1] = 0.0
        with pytest.raises(DegenerateRotationError):
            activate_parameters(g)


class TestRotations:
    def test_identity_quaternion(self):
        R = quat_to_rotation(np.array([[1.0, 0.0, 0.0, 0.0]]))[0]
        assert np.allclose(R, np.eye(3), atol=1e-12)

    def test_known_z_rotation(self):
        # 90 degrees about z: w = cos(45°), z = sin(45°)
        c = np.cos(np.pi / 4)
        R = quat_to_rotation(np.array([[c, 0.0, 0.0, c]]))[0]
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.allclose(R, expected, atol=1e-12)

    @given(arrays(np.float64, (4,), elements=st.floats(-2, 2)).filter(
        lambda q: np.linalg.norm(q) > 1e-3))
    @settings(max_examples=50, deadline=None)
    def test_rotation_is_orthonormal(self, q):
        R = quat_to_rotation((q / np.linalg.norm(q))[None])[0]
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert np.isclose(np.linalg.det(R), 1.0, atol=1e-9)


class TestCovariance:
    def test_symmetric_positive_definite(self):
        act = activate_parameters(_random_set(30))
        cov = build_covariance(act.scales, act.quaternions)
        assert np.allclose(cov, np.swapaxes(cov, 1, 2), atol=1e-12)
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_axis_aligned_case(self):
        s = np.array([[0.5, 1.0, 2.0]])
        q = np.array([[1.0, 0.0, 0.0, 0.0]])
        cov = build_covariance(s, q)[0]
        assert np.allclose(cov, np.diag([0.25, 1.0, 4.0]), atol=1e-12)

    def test_eigenvalues_are_squared_scales(self):
        act = activate_parameters(_random_set(10))
        cov = build_covariance(act.scales, act.quaternions)
        for k in range(10):
            ev = np.sort(np.linalg.eigvalsh(cov[k]))
            assert np.allclose(ev, np.sort(act.scales[k] ** 2), rtol=1e-9)


class TestCamera:
    def _cam(self):
        return Camera(fx=100.0, fy=100.0, cx=32.0, cy=32.0,
                      rotation=np.eye(3), translation=np.array([0.0, 0.0, 2.0]),
                      width=64, height=64)

    def test_center(self):
        assert np.allclose(self._cam().center, [0.0, 0.0, -2.0])

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            Camera(100.0, 100.0, 32.0, 32.0, np.eye(3) * 1.1,
                   np.zeros(3), 64, 64)

    def test_resized_halves_focals(self):
        small = self._cam().resized(32, 32)
        assert small.fx == pytest.approx(50.0)
        assert small.width == 32
        # half-pixel-center convention: cx maps through the pixel-center grid
        assert small.cx == pytest.approx((32.0 + 0.5) * 0.5 - 0.5)


class TestTrainConfig:
    def test_default_schedule_scaling(self):
        cfg = TrainConfig()
        assert cfg.total_iters == 6000
        assert cfg.densify_start_iter == 2000
        assert cfg.opacity_reset_start_iter == 3000
        assert cfg.opacity_reset_interval == 600
        assert cfg.beta_reg == 400.0
        cfg.validate()

    def test_threshold_order_enforced(self):
        with pytest.raises(ValueError):
            TrainConfig(tau_u=0.9, tau_l=0.5).validate()

    def test_iteration_bounds_enforced(self):
        with pytest.raises(ValueError):
            TrainConfig(densify_end_iter=7000).validate()

    def test_even_dilation_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(dilation_kernel=6).validate()

    def test_replace_returns_new(self):
        cfg = TrainConfig()
        c2 = cfg.replace(seed=9)
        assert c2.seed == 9 and cfg.seed == 0


def test_clamp_image():
    img = np.array([[-0.5, 0.3], [1.7, 1.0]])
    assert np.array_equal(clamp_image(img), [[0.0, 0.3], [1.0, 1.0]])
