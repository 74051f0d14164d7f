"""Synthetic scene generation: determinism, occlusion targeting, camera
geometry, and ground-truth mask consistency."""

import numpy as np
import pytest

from desksplat.scenegen import (MASK_DIFF_THRESHOLD, SceneParams,
                                generate_scene, render_dataset)

SMALL = SceneParams(n_static=80, n_train_views=10, n_test_views=3,
                    image_size=48)


@pytest.fixture(scope="module")
def bundle():
    return render_dataset(generate_scene(7, SMALL))


class TestDeterminism:
    def test_same_seed_same_scene(self):
        a = render_dataset(generate_scene(3, SMALL))
        b = render_dataset(generate_scene(3, SMALL))
        assert np.array_equal(a.train_views[0].image, b.train_views[0].image)
        assert np.array_equal(a.points_xyz, b.points_xyz)

    def test_different_seed_different_scene(self):
        a = render_dataset(generate_scene(3, SMALL))
        b = render_dataset(generate_scene(4, SMALL))
        assert not np.array_equal(a.train_views[0].image, b.train_views[0].image)


class TestStructure:
    def test_view_counts(self, bundle):
        assert len(bundle.train_views) == 10
        assert len(bundle.test_views) == 3

    def test_images_in_range(self, bundle):
        for v in bundle.train_views + bundle.test_views:
            assert v.image.shape == (48, 48, 3)
            assert np.all((v.image >= 0.0) & (v.image <= 1.0))

    def test_cameras_orthonormal(self, bundle):
        for v in bundle.train_views:
            R = v.camera.rotation
            assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)

    def test_init_points_shape(self, bundle):
        assert bundle.points_xyz.shape == (80, 3)
        assert bundle.points_rgb.shape == (80, 3)
        assert np.all((bundle.points_rgb >= 0.0) & (bundle.points_rgb <= 1.0))

    def test_params_validated(self):
        with pytest.raises(ValueError):
            generate_scene(0, SceneParams(n_train_views=2))


class TestOcclusion:
    def test_target_hit_within_tolerance(self, bundle):
        assert bundle.measured_occlusion == pytest.approx(
            SMALL.occlusion, abs=SMALL.occlusion_tol + 0.02)

    @staticmethod
    def _clean(bundle, cam):
        from desksplat.renderer import render
        from desksplat.scenegen import RENDER_CULL_SIGMA
        return render(bundle.scene.static, cam,
                      background=bundle.scene.params.background,
                      cull_sigma=RENDER_CULL_SIGMA)[0]

    def test_mask_matches_image_difference(self, bundle):
        """gt_mask is 0 exactly where a distractor changed the clean render."""
        for v in bundle.train_views[:3]:
            clean = self._clean(bundle, v.camera)
            diff = (np.abs(v.image - clean) > MASK_DIFF_THRESHOLD).any(axis=2)
            assert np.array_equal(v.gt_mask < 0.5, diff)

    def test_test_views_clean(self, bundle):
        for v in bundle.test_views:
            assert np.allclose(v.image, self._clean(bundle, v.camera),
                               atol=1e-12)

    def test_mask_binary(self, bundle):
        for v in bundle.train_views:
            assert set(np.unique(v.gt_mask)) <= {0.0, 1.0}


class TestContaminatedInit:
    def test_extra_points_when_enabled(self):
        p = SceneParams(n_static=80, n_train_views=10, n_test_views=2,
                        image_size=48, contaminate_init=True)
        b = render_dataset(generate_scene(5, p))
        assert b.points_xyz.shape[0] > 80
