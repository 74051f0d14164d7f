"""Patch feature extraction, cosine maps, and the FMAP file format."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desksplat.core import TrainConfig
from desksplat.features import (FMAP_MAGIC, FeatureFormatError, FeatureMap,
                                cosine_mask, extract_features, level_edge,
                                load_feature_map, write_feature_map)

CFG = TrainConfig()


class TestExtract:
    def test_grid_shapes(self):
        low = extract_features(np.zeros((56, 56, 3)), "low", CFG)
        high = extract_features(np.zeros((126, 126, 3)), "high", CFG)
        assert low.values.shape == (4, 4, 16)
        assert high.values.shape == (9, 9, 16)

    def test_level_edges(self):
        assert level_edge("low", CFG) == 56
        assert level_edge("high", CFG) == 126
        with pytest.raises(ValueError):
            level_edge("mid", CFG)

    def test_constant_image_uniform_features(self):
        f = extract_features(np.full((56, 56, 3), 0.5), "low", CFG)
        flat = f.values.reshape(-1, 16)
        assert np.allclose(flat, flat[0], atol=1e-12)
        # std and gradient channels vanish on a constant image
        assert np.allclose(flat[0, 3:8], 0.0, atol=1e-12)

    def test_resizes_arbitrary_input(self):
        f = extract_features(np.random.default_rng(0).random((128, 128, 3)),
                             "low", CFG)
        assert f.values.shape == (4, 4, 16)

    def test_patch_shift_consistency(self):
        """Shifting by one full patch shifts the grid by one cell."""
        rng = np.random.default_rng(1)
        img = rng.random((70, 70, 3))  # 5x5 grid of 14-px patches
        cfg = TrainConfig(low_res_edge=70)
        a = extract_features(img, "low", cfg)
        b = extract_features(np.roll(img, 14, axis=1), "low", cfg)
        assert np.allclose(a.values[:, :-1], b.values[:, 1:], atol=1e-10)


class TestCosineMask:
    def _fmap(self, values):
        return FeatureMap(values=np.asarray(values, dtype=np.float64),
                          level="low", source="builtin")

    def test_identical_features_give_one(self):
        f = self._fmap(np.random.default_rng(0).random((4, 4, 16)) + 0.1)
        assert np.allclose(cosine_mask(f, f).values, 1.0, atol=1e-12)

    def test_orthogonal_gives_zero(self):
        a = np.zeros((1, 1, 4)); a[0, 0, 0] = 1.0
        b = np.zeros((1, 1, 4)); b[0, 0, 1] = 1.0
        assert cosine_mask(self._fmap(a), self._fmap(b)).values[0, 0] == 0.0

    def test_cosine_three_quarters_maps_to_half(self):
        a = np.zeros((1, 1, 2)); a[0, 0] = [1.0, 0.0]
        c = 0.75
        b = np.zeros((1, 1, 2)); b[0, 0] = [c, np.sqrt(1 - c * c)]
        out = cosine_mask(self._fmap(a), self._fmap(b)).values[0, 0]
        assert out == pytest.approx(0.5, abs=1e-12)

    def test_zero_norm_counted(self):
        a = np.zeros((2, 2, 3))
        a[0, 0] = 1.0
        m = cosine_mask(self._fmap(a), self._fmap(np.ones((2, 2, 3))))
        assert m.zero_norm_count == 3
        assert m.values[0, 1] == 0.0

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_scale_invariant(self, seed, lam):
        rng = np.random.default_rng(seed)
        a = self._fmap(rng.normal(size=(3, 3, 8)))
        b = self._fmap(rng.normal(size=(3, 3, 8)))
        ab = cosine_mask(a, b).values
        ba = cosine_mask(b, a).values
        assert np.allclose(ab, ba, atol=1e-12)
        scaled = self._fmap(lam * a.values)
        assert np.allclose(cosine_mask(a, scaled).values, 1.0, atol=1e-9)

    def test_zero_wherever_cosine_below_half(self):
        rng = np.random.default_rng(4)
        a = self._fmap(rng.normal(size=(6, 6, 8)))
        b = self._fmap(rng.normal(size=(6, 6, 8)))
        out = cosine_mask(a, b).values
        na = a.values / np.linalg.norm(a.values, axis=2, keepdims=True)
        nb = b.values / np.linalg.norm(b.values, axis=2, keepdims=True)
        cos = np.sum(na * nb, axis=2)
        assert np.all(out[cos <= 0.5] == 0.0)
        assert np.allclose(out[cos > 0.5], (2 * cos - 1)[cos > 0.5], atol=1e-12)

    def test_grid_mismatch_rejected(self):
        a = self._fmap(np.ones((2, 2, 4)))
        b = self._fmap(np.ones((3, 3, 4)))
        with pytest.raises(ValueError):
            cosine_mask(a, b)


class TestFmapFormat:
    def test_round_trip(self, tmp_path):
        vals = np.random.default_rng(0).random((4, 4, 16)).astype(np.float32)
        p = tmp_path / "x.fmap"
        write_feature_map(FeatureMap(values=vals.astype(np.float64),
                                     level="low", source="builtin"), p)
        f = load_feature_map(p)
        assert f.source == "external"
        assert np.array_equal(f.values.astype(np.float32), vals)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.fmap"
        p.write_bytes(b"XMAP" + b"\0" * 32)
        with pytest.raises(FeatureFormatError):
            load_feature_map(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.fmap"
        header = FMAP_MAGIC + struct.pack("<IIII", 1, 4, 4, 16)
        p.write_bytes(header + np.zeros(200, dtype="<f4").tobytes())
        with pytest.raises(FeatureFormatError):
            load_feature_map(p)

    def test_header_fields(self, tmp_path):
        p = tmp_path / "h.fmap"
        write_feature_map(FeatureMap(values=np.zeros((9, 9, 16)),
                                     level="high", source="builtin"), p)
        raw = p.read_bytes()
        assert raw[:4] == FMAP_MAGIC
        version, gh, gw, dim = struct.unpack_from("<IIII", raw, 4)
        assert (version, gh, gw, dim) == (1, 9, 9, 16)
