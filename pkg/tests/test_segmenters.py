import numpy as np
import pytest

from segfusion import (
    DimensionMismatch,
    MultiBandImage,
    Segmentation,
    adjusted_rand_index,
    band_ensemble,
    generate_synthetic,
    kmeans,
    kmeans_segment,
)


def two_blocks():
    bands = np.zeros((2, 6, 8))
    bands[0, :, 4:] = 100
    bands[1, :, 4:] = 50
    truth = Segmentation((np.arange(48) % 8 >= 4).astype(int), 8, 6)
    return MultiBandImage(bands), truth


def three_clusters(seed):
    img, _ = generate_synthetic(16, 16, 3, 2, 4.0, seed=seed)
    return img


class TestImage:
    def test_single_band_promoted(self):
        img = MultiBandImage(np.zeros((3, 4)))
        assert (img.num_bands, img.height, img.width) == (1, 3, 4)
        assert img.band_names == ("band0",)

    def test_bad_shape(self):
        with pytest.raises(DimensionMismatch):
            MultiBandImage(np.zeros((2, 2, 2, 2)))

    def test_name_count(self):
        with pytest.raises(ValueError):
            MultiBandImage(np.zeros((2, 3, 3)), ("a",))

    def test_features_row_major(self):
        img = MultiBandImage(np.arange(12).reshape(2, 2, 3))
        assert img.features()[:, 0].tolist() == [0, 1, 2, 3, 4, 5]
        assert img.features()[:, 1].tolist() == [6, 7, 8, 9, 10, 11]

    def test_zscore(self):
        z = MultiBandImage(np.random.default_rng(0).normal(5, 3, (2, 4, 4))).features(zscore=True)
        assert np.allclose(z.mean(axis=0), 0) and np.allclose(z.std(axis=0), 1)

    def test_subset_rows_and_mask(self):
        img = MultiBandImage(np.arange(24).reshape(2, 3, 4))
        assert img.subset(rows=(1, 3)).bands.shape == (2, 2, 4)
        mask = np.zeros((3, 4), bool)
        mask[0, 1] = mask[2, 3] = True
        sub = img.subset(mask=mask)
        assert sub.bands.shape == (2, 1, 2) and sub.bands[0, 0].tolist() == [1, 11]


class TestKMeans:
    def test_separable_blocks(self):
        img, truth = two_blocks()
        assert adjusted_rand_index(kmeans_segment(img, 2, seed=3), truth) == 1.0

    def test_k_one(self):
        img, _ = two_blocks()
        s = kmeans_segment(img, 1)
        assert set(s.labels) == {0} and s.num_labels == 1

    def test_more_clusters_than_points_stays_dense(self):
        img = MultiBandImage(np.array([[[1.0, 1.0, 5.0, 5.0]]]))
        s = kmeans_segment(img, 4, seed=0)
        assert s.num_labels == 2 and sorted(set(s.labels)) == [0, 1]

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros(4), 0)
        with pytest.raises(ValueError):
            kmeans(np.zeros(4), 2, max_iter=0)

    def test_inertia_non_increasing(self):
        for seed in range(20):
            res = kmeans(three_clusters(seed).features(), 3, seed=seed)
            assert all(b <= a + 1e-9 for a, b in zip(res.inertia, res.inertia[1:]))

    def test_deterministic(self):
        img = three_clusters(1)
        a = kmeans(img.features(), 3, seed=9)
        b = kmeans(img.features(), 3, seed=9)
        assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centers, b.centers)

    def test_near_multi_restart_optimum(self):
        hits = 0
        for seed in range(20):
            x = three_clusters(100 + seed).features()
            best = kmeans(x, 3, seed=seed + 1, n_init=100).inertia[-1]
            hits += kmeans(x, 3, seed=seed).inertia[-1] <= best + 1e-6
        assert hits >= 18

    def test_n_init_never_worse(self):
        x = three_clusters(5).features()
        assert kmeans(x, 3, seed=2, n_init=5).inertia[-1] <= kmeans(x, 3, seed=2).inertia[-1]


class TestBandEnsemble:
    def test_identical_bands_identical_members(self):
        band = np.random.default_rng(4).normal(0, 1, (6, 6))
        ens = band_ensemble(MultiBandImage(np.stack([band] * 3)), 3, seeds=(7,))
        assert ens[0] == ens[1] == ens[2]

    def test_one_member_per_band(self):
        img, _ = generate_synthetic(16, 16, 4, 7, 5.0, seed=2)
        ens = band_ensemble(img, 4, seeds=range(7))
        assert len(ens) == 7
        assert ens.provenance[3].startswith("kmeans band=band3 k=4")

    def test_members_differ_when_bands_differ(self):
        img, _ = generate_synthetic(32, 32, 5, 4, 10.0, seed=8)
        ens = band_ensemble(img, 5, seeds=(0,))
        assert len({hash(s) for s in ens}) > 1

    def test_seed_count_checked(self):
        img, _ = two_blocks()
        with pytest.raises(ValueError):
            band_ensemble(img, 2, seeds=(1, 2, 3))
