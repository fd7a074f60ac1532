import struct

import numpy as np
import pytest

from spl_advise.data import (
    BadMagicError,
    CountMismatchError,
    Dataset,
    DatasetError,
    TruncatedFileError,
    gen_gaussian_blobs,
    hflip_batch,
    load_csv,
    load_idx,
    split_dataset,
    standardize,
)
from spl_advise.numerics import rng_child


class TestGaussianBlobs:
    def test_two_tight_blobs(self):
        ds = gen_gaussian_blobs(2, 1, 10, 2, 10.0, 0.1, rng_child(0, 0))
        assert ds.n_samples == 20
        assert ds.class_count == 2
        centers = ds.subcluster_centers
        within = max(
            np.linalg.norm(ds.features[ds.subcluster_ids == k] - centers[k], axis=1).max()
            for k in range(2)
        )
        between = np.linalg.norm(centers[0] - centers[1])
        assert within < 0.1 * between

    def test_sample_counts_balanced(self):
        ds = gen_gaussian_blobs(8, 3, 100, 10, 10.0, 1.0, rng_child(1, 0))
        assert ds.n_samples == 2400
        counts = np.bincount(ds.labels)
        assert (counts == 300).all()

    def test_empirical_means_near_generating_centers(self):
        n = 400
        std = 0.7
        ds = gen_gaussian_blobs(3, 2, n, 5, 20.0, std, rng_child(2, 0))
        bound = 3 * std / np.sqrt(n)
        for k in range(6):
            emp = ds.features[ds.subcluster_ids == k].mean(axis=0)
            err = np.abs(emp - ds.subcluster_centers[k])
            assert (err < 3 * bound).all()  # per-coordinate, generous tail

    def test_bit_identical_given_seed(self):
        a = gen_gaussian_blobs(3, 2, 10, 4, 5.0, 0.3, rng_child(3, 0))
        b = gen_gaussian_blobs(3, 2, 10, 4, 5.0, 0.3, rng_child(3, 0))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            gen_gaussian_blobs(0, 1, 1, 1, 1.0, 1.0, rng_child(0, 0))
        with pytest.raises(ValueError):
            gen_gaussian_blobs(2, 1, 5, 2, 1.0, 0.0, rng_child(0, 0))


def _write_idx_pair(tmp_path, images, labels, image_magic=0x803, label_magic=0x801):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    img_path = tmp_path / "images.idx"
    lbl_path = tmp_path / "labels.idx"
    img_path.write_bytes(
        struct.pack(">iiii", image_magic, n, h, w) + images.tobytes()
    )
    lbl_path.write_bytes(
        struct.pack(">ii", label_magic, len(labels))
        + bytes(int(v) for v in labels)
    )
    return img_path, lbl_path


class TestLoadIdx:
    def test_well_formed_fixture(self, tmp_path):
        images = np.arange(16, dtype=np.uint8).reshape(4, 2, 2)
        img, lbl = _write_idx_pair(tmp_path, images, [0, 1, 2, 1])
        ds = load_idx(img, lbl)
        assert ds.features.shape == (4, 4)
        assert ds.image_shape == (2, 2)
        np.testing.assert_array_equal(ds.labels, [0, 1, 2, 1])

    def test_byte_255_scales_to_exactly_one(self, tmp_path):
        images = np.full((2, 2, 2), 255, dtype=np.uint8)
        img, lbl = _write_idx_pair(tmp_path, images, [0, 1])
        ds = load_idx(img, lbl)
        assert (ds.features == 1.0).all()

    def test_count_mismatch(self, tmp_path):
        images = np.zeros((4, 2, 2), dtype=np.uint8)
        images[:, 0, 0] = [1, 2, 3, 4]
        img, lbl = _write_idx_pair(tmp_path, images, [0, 1, 0])
        with pytest.raises(CountMismatchError):
            load_idx(img, lbl)

    def test_bad_magic(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        images[0, 0, 0] = 9
        img, lbl = _write_idx_pair(tmp_path, images, [0, 1], image_magic=0x123)
        with pytest.raises(BadMagicError, match="0x00000123"):
            load_idx(img, lbl)

    def test_truncated_file(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        images[1, 1, 1] = 3
        img, lbl = _write_idx_pair(tmp_path, images, [0, 1])
        img.write_bytes(img.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError):
            load_idx(img, lbl)


class TestLoadCsv:
    def test_basic_load_and_label_mapping(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,species,b\n1.0,cat,2.0\n3.0,dog,4.0\n5.0,cat,6.0\n")
        ds = load_csv(path, "species")
        assert ds.class_count == 2
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])  # cat < dog
        np.testing.assert_allclose(ds.features, [[1, 2], [3, 4], [5, 6]])

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DatasetError, match="species"):
            load_csv(path, "species")

    def test_non_numeric_feature_reported_with_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,y\n1.0,0\noops,1\n")
        with pytest.raises(DatasetError, match=":3"):
            load_csv(path, "y")


class TestSplitStandardize:
    def test_split_80_20(self):
        ds = gen_gaussian_blobs(2, 1, 50, 3, 8.0, 1.0, rng_child(5, 0))
        split = split_dataset(ds, 0.2, rng_child(5, 1))
        assert split.train.size == 80
        assert split.test.size == 20
        union = np.union1d(split.train, split.test)
        np.testing.assert_array_equal(union, np.arange(100))

    def test_split_is_permutation_partition(self):
        ds = gen_gaussian_blobs(3, 1, 21, 2, 8.0, 1.0, rng_child(6, 0))
        for frac in (0.1, 0.33, 0.5):
            split = split_dataset(ds, frac, rng_child(6, 1))
            assert np.intersect1d(split.train, split.test).size == 0
            assert split.train.size + split.test.size == ds.n_samples

    def test_standardized_train_stats(self):
        ds = gen_gaussian_blobs(4, 2, 40, 6, 15.0, 2.0, rng_child(7, 0))
        split = split_dataset(ds, 0.25, rng_child(7, 1))
        out = standardize(ds, split)
        train = out.features[split.train]
        assert np.abs(train.mean(axis=0)).max() < 1e-10
        assert np.abs(train.std(axis=0) - 1.0).max() < 1e-10

    def test_constant_column_maps_to_zero(self):
        feats = np.column_stack([np.arange(10.0), np.full(10, 3.25)])
        ds = Dataset(feats, np.arange(10) % 2, 2, "toy")
        split = split_dataset(ds, 0.3, rng_child(8, 0))
        out = standardize(ds, split)
        assert (out.features[:, 1] == 0.0).all()


class TestHflip:
    def test_flip_reverses_rows(self):
        X = np.arange(6.0).reshape(1, 6)  # one 2x3 image
        out = hflip_batch(X, (2, 3), rng_child(9, 0), prob=1.0)
        np.testing.assert_array_equal(out, [[2, 1, 0, 5, 4, 3]])

    def test_prob_zero_is_identity(self):
        rng = rng_child(9, 1)
        X = rng.normal(size=(5, 4))
        out = hflip_batch(X, (2, 2), rng, prob=0.0)
        np.testing.assert_array_equal(out, X)
