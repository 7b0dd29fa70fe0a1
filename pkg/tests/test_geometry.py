import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energygan.errors import DegenerateConfigurationError, DimensionError, PointAtInfinityError
from energygan.geometry import (
    CorrespondenceSet,
    Homography,
    apply_homography,
    conditioning_transform,
    estimate_homography_dlt,
    symmetric_eigen,
    warp_raster,
)

from oracles import bilinear_at


def random_homography(rng, persp=1e-3):
    m = np.eye(3)
    m[:2, :2] += 0.3 * rng.normal(size=(2, 2))
    m[:2, 2] = rng.uniform(-20, 20, 2)
    m[2, :2] = persp * rng.normal(size=2)
    return Homography(m)


def correspondences(h, n, rng, lo=0.0, hi=100.0):
    plane = rng.uniform(lo, hi, (n, 2))
    return CorrespondenceSet(apply_homography(h, plane), plane)


class TestHomography:
    def test_normalized_to_unit_corner(self):
        h = Homography(2 * np.eye(3))
        assert h.matrix[2, 2] == 1.0
        np.testing.assert_array_equal(h.matrix, np.eye(3))

    def test_singular_rejected(self):
        with pytest.raises(DegenerateConfigurationError):
            Homography([[1, 2, 0], [2, 4, 0], [0, 0, 1]])

    def test_vanishing_corner_rejected(self):
        with pytest.raises(DegenerateConfigurationError):
            Homography([[0, 1, 0], [1, 0, 0], [1, 0, 0]])

    def test_apply_examples(self):
        assert tuple(apply_homography(Homography.identity(), (7, 11))) == (7.0, 11.0)
        assert tuple(Homography.translation(1, 0).apply((0, 0))) == (1.0, 0.0)

    def test_point_at_infinity(self):
        h = Homography([[1, 0, 0], [0, 1, 0], [1, 0, 1]])
        with pytest.raises(PointAtInfinityError):
            h.apply((-1.0, 0.0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_inverse_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        h = random_homography(rng)
        p = rng.uniform(0, 64, (10, 2))
        np.testing.assert_allclose(h.apply(h.inverse().apply(p)), p, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_composition_on_points(self, seed):
        rng = np.random.default_rng(seed)
        h1, h2 = random_homography(rng), random_homography(rng)
        p = rng.uniform(0, 64, (10, 2))
        np.testing.assert_allclose((h2 @ h1).apply(p), h2.apply(h1.apply(p)), atol=1e-9)


class TestEigen:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_numpy(self, seed):
        a = np.random.default_rng(seed).normal(size=(9, 9))
        a = a @ a.T
        vals, vecs = symmetric_eigen(a)
        np.testing.assert_allclose(vals, np.linalg.eigvalsh(a), rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(a @ vecs, vecs * vals, atol=1e-9)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(9), atol=1e-12)

    def test_conditioning_moments(self):
        pts = np.random.default_rng(0).uniform(10, 90, (30, 2))
        q = apply_homography(conditioning_transform(pts), pts)
        np.testing.assert_allclose(q.mean(axis=0), 0, atol=1e-12)
        assert np.sqrt((q**2).sum(axis=1).mean()) == pytest.approx(np.sqrt(2))


class TestDLT:
    def test_unit_square_identity(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        h = estimate_homography_dlt(CorrespondenceSet(sq, sq))
        np.testing.assert_allclose(h.matrix, np.eye(3), atol=1e-9)

    def test_translation_exact(self):
        plane = np.array([[0, 0], [10, 0], [10, 7], [0, 7], [4, 3]], dtype=float)
        h = estimate_homography_dlt(CorrespondenceSet(plane + [3, -2], plane))
        np.testing.assert_allclose(h.matrix, Homography.translation(3, -2).matrix, atol=1e-9)

    def test_twenty_point_random(self):
        rng = np.random.default_rng(1)
        h = random_homography(rng)
        est = estimate_homography_dlt(correspondences(h, 20, rng))
        assert np.linalg.norm(est.matrix - h.matrix) < 1e-6

    def test_minimal_four_points_exact(self):
        rng = np.random.default_rng(2)
        c = CorrespondenceSet(rng.uniform(0, 50, (4, 2)), rng.uniform(0, 50, (4, 2)))
        h = estimate_homography_dlt(c)
        assert np.abs(h.apply(c.plane_points) - c.scene_points).max() < 1e-9

    def test_collinear_raises(self):
        plane = np.stack([np.arange(6.0), 2 * np.arange(6.0) + 1], axis=1)
        with pytest.raises(DegenerateConfigurationError):
            estimate_homography_dlt(CorrespondenceSet(plane + 1, plane))

    def test_too_few_points(self):
        with pytest.raises(DegenerateConfigurationError):
            CorrespondenceSet(np.zeros((3, 2)), np.zeros((3, 2)))
        with pytest.raises(DimensionError):
            CorrespondenceSet(np.zeros((5, 2)), np.zeros((4, 2)))

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        h = random_homography(rng)
        c = correspondences(h, 12, rng)
        s = 7.5
        scaled = estimate_homography_dlt(CorrespondenceSet(c.scene_points * s, c.plane_points * s))
        sm = np.diag([s, s, 1.0])
        expect = Homography(sm @ h.matrix @ np.linalg.inv(sm))
        np.testing.assert_allclose(scaled.matrix, expect.matrix, atol=1e-6)


class TestWarp:
    def test_identity(self):
        img = np.random.default_rng(0).normal(size=(6, 7))
        for mode in ("bilinear", "nearest"):
            np.testing.assert_allclose(warp_raster(img, Homography.identity(), img.shape, mode), img)

    def test_integer_translation(self):
        img = np.arange(20, dtype=float).reshape(4, 5)
        out = warp_raster(img, Homography.translation(1, 2), (4, 5))
        np.testing.assert_array_equal(out[2:, 1:], img[:2, :4])
        assert not out[:2].any() and not out[:, 0].any()

    def test_bilinear_matches_pointwise_oracle(self):
        rng = np.random.default_rng(4)
        img = rng.normal(size=(9, 8))
        h = random_homography(rng, persp=5e-3)
        h = Homography.translation(4, 4) @ Homography(np.diag([0.7, 0.7, 1.0]) @ h.matrix) @ Homography.translation(-4, -4)
        out = warp_raster(img, h, (9, 8))
        inv = h.inverse()
        for y in range(9):
            for x in range(8):
                sx, sy = inv.apply((x, y))
                assert out[y, x] == pytest.approx(bilinear_at(img, sx, sy), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_nearest_adds_no_labels(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.integers(0, 3, size=(12, 12)).astype(float)
        h = Homography.translation(6, 6) @ random_homography(rng, 2e-3) @ Homography.translation(-6, -6)
        out = warp_raster(mask, h, (12, 12), "nearest")
        assert set(np.unique(out)) <= set(np.unique(mask)) | {0.0}

    def test_round_trip_psnr(self):
        ys, xs = np.mgrid[0:64, 0:64]
        img = np.sin(xs / 6.0) * np.cos(ys / 7.0)
        rng = np.random.default_rng(5)
        h = (Homography.translation(32, 32)
             @ Homography([[1.02, 0.05, 0], [-0.04, 0.98, 0], [4e-4, -3e-4, 1]])
             @ Homography.translation(-32, -32))
        back = warp_raster(warp_raster(img, h, img.shape), h.inverse(), img.shape)
        inner = (slice(12, 52), slice(12, 52))
        mse = np.mean((back[inner] - img[inner]) ** 2)
        psnr = 10 * np.log10((img.max() - img.min()) ** 2 / mse)
        assert psnr > 35, psnr
        del rng

    def test_extent_validated(self):
        with pytest.raises(DimensionError):
            warp_raster(np.ones((2, 2)), Homography.identity(), (0, 3))
