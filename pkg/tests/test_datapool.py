"""Dataset loading and pool-partition behavior."""

import json

import numpy as np
import pytest
import yaml

from osal import datapool as dp
from osal.errors import (
    BudgetError,
    FormatError,
    LabelRangeError,
    PoolMembershipError,
    ShapeError,
)


def blob_config(**over):
    cfg = {"classes": 4, "n_per_class": 50, "dim": 2, "stddev": 0.3, "seed": 11}
    cfg.update(over)
    return cfg


def write_blob_config(tmp_path, **over):
    p = tmp_path / "blobs.yaml"
    p.write_text(yaml.safe_dump(blob_config(**over)))
    return p


class TestIdx:
    def test_roundtrip_counts_and_scale(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(12, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=12, dtype=np.uint8)
        dp.write_idx_images(tmp_path / "train-images-idx3-ubyte", imgs)
        dp.write_idx_labels(tmp_path / "train-labels-idx1-ubyte", labels)
        ds = dp.load_dataset(tmp_path, "idx", name="toy")
        assert ds.num_train == 12
        assert ds.dim == 784
        assert ds.feature_shape == (1, 28, 28)
        np.testing.assert_allclose(
            ds.train_features, imgs.reshape(12, -1) / 255.0
        )
        assert ds.train_features.min() >= 0.0 and ds.train_features.max() <= 1.0
        np.testing.assert_array_equal(ds.train_labels, labels.astype(np.int64))
        assert ds.train_ids[0] == "toy/train/00000"
        assert len(set(ds.train_ids)) == 12

    def test_eval_split_loaded_when_present(self, tmp_path):
        rng = np.random.default_rng(1)
        for prefix, n in (("train", 6), ("t10k", 4)):
            dp.write_idx_images(
                tmp_path / f"{prefix}-images-idx3-ubyte",
                rng.integers(0, 256, size=(n, 8, 8), dtype=np.uint8),
            )
            dp.write_idx_labels(
                tmp_path / f"{prefix}-labels-idx1-ubyte",
                rng.integers(0, 10, size=n, dtype=np.uint8),
            )
        ds = dp.load_dataset(tmp_path, "idx")
        assert ds.num_train == 6
        assert len(ds.eval_ids) == 4
        assert not set(ds.train_ids) & set(ds.eval_ids)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "train-images-idx3-ubyte"
        p.write_bytes(b"\x00\x00\x0c\x03" + b"\x00" * 16)
        (tmp_path / "train-labels-idx1-ubyte").write_bytes(b"")
        with pytest.raises(FormatError):
            dp.load_dataset(tmp_path, "idx")

    def test_truncated_body(self, tmp_path):
        import struct

        p = tmp_path / "train-images-idx3-ubyte"
        p.write_bytes(struct.pack(">IIII", dp.IDX_IMAGES_MAGIC, 5, 4, 4) + b"\x00" * 10)
        (tmp_path / "train-labels-idx1-ubyte").write_bytes(b"")
        with pytest.raises(FormatError):
            dp.load_dataset(tmp_path, "idx")

    def test_label_out_of_range(self, tmp_path):
        dp.write_idx_images(
            tmp_path / "train-images-idx3-ubyte", np.zeros((3, 4, 4), dtype=np.uint8)
        )
        dp.write_idx_labels(
            tmp_path / "train-labels-idx1-ubyte", np.array([0, 1, 11], dtype=np.uint8)
        )
        with pytest.raises(LabelRangeError):
            dp.load_dataset(tmp_path, "idx")


class TestCifarBinary:
    def make_batch(self, path, labels, fill):
        recs = []
        for lab, val in zip(labels, fill):
            recs.append(bytes([lab]) + bytes([val]) * 3072)
        path.write_bytes(b"".join(recs))

    def test_load(self, tmp_path):
        self.make_batch(tmp_path / "data_batch_1.bin", [0, 3], [10, 20])
        self.make_batch(tmp_path / "data_batch_2.bin", [9], [30])
        self.make_batch(tmp_path / "test_batch.bin", [1], [40])
        ds = dp.load_dataset(tmp_path, "cifar_binary", name="c10")
        assert ds.num_train == 3
        assert ds.feature_shape == (3, 32, 32)
        assert ds.dim == 3072
        np.testing.assert_array_equal(ds.train_labels, [0, 3, 9])
        np.testing.assert_allclose(ds.train_features[1], 20 / 255.0)
        assert len(ds.eval_ids) == 1
        np.testing.assert_allclose(ds.eval_features[0], 40 / 255.0)

    def test_bad_record_size(self, tmp_path):
        (tmp_path / "data_batch_1.bin").write_bytes(b"\x00" * 3000)
        with pytest.raises(FormatError):
            dp.load_dataset(tmp_path, "cifar_binary")

    def test_label_byte_out_of_range(self, tmp_path):
        self.make_batch(tmp_path / "data_batch_1.bin", [0, 10], [1, 1])
        with pytest.raises(LabelRangeError):
            dp.load_dataset(tmp_path, "cifar_binary")


class TestBlobs:
    def test_generator_counts(self, tmp_path):
        ds = dp.load_dataset(write_blob_config(tmp_path), "synthetic_blobs")
        assert ds.num_train == 200
        assert ds.num_classes == 4
        assert ds.feature_shape == (2,)
        counts = np.bincount(ds.train_labels, minlength=4)
        np.testing.assert_array_equal(counts, [50, 50, 50, 50])
        assert len(ds.eval_ids) == 4 * 12

    def test_deterministic(self, tmp_path):
        a = dp.generate_blobs(blob_config())
        b = dp.generate_blobs(blob_config())
        np.testing.assert_array_equal(a.train_features, b.train_features)

    def test_explicit_centers_respected(self):
        centers = [[0.0, 0.0], [100.0, 0.0]]
        ds = dp.generate_blobs(
            blob_config(classes=2, centers=centers, stddev=0.1, n_per_class=20)
        )
        for c in (0, 1):
            mean = ds.train_features[ds.train_labels == c].mean(axis=0)
            np.testing.assert_allclose(mean, centers[c], atol=0.2)

    def test_center_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dp.generate_blobs(blob_config(centers=[[0.0, 0.0]]))

    def test_missing_key(self):
        cfg = blob_config()
        del cfg["stddev"]
        with pytest.raises(FormatError):
            dp.generate_blobs(cfg)

    def test_unknown_format_and_missing_path(self, tmp_path):
        p = write_blob_config(tmp_path)
        with pytest.raises(FormatError):
            dp.load_dataset(p, "parquet")
        with pytest.raises(FormatError):
            dp.load_dataset(tmp_path / "nope.yaml", "synthetic_blobs")


class TestSplitInitial:
    def test_sizes_and_disjoint(self):
        ds = dp.generate_blobs(blob_config(n_per_class=25))  # N=100
        pool = dp.split_initial(ds, m=10, seed=7)
        assert len(pool.labeled_ids) == 10
        assert len(pool.unlabeled_ids) == 90
        assert not set(pool.labeled_ids) & set(pool.unlabeled_ids)
        assert pool.stage == 0
        for sid in pool.labeled_ids:
            assert pool.oracle_labels[sid] == ds.true_label_of(sid)

    def test_same_seed_same_pool(self):
        ds = dp.generate_blobs(blob_config())
        a = dp.split_initial(ds, m=40, seed=3)
        b = dp.split_initial(ds, m=40, seed=3)
        assert a == b
        c = dp.split_initial(ds, m=40, seed=4)
        assert set(a.labeled_ids) != set(c.labeled_ids)

    def test_m_too_large(self):
        ds = dp.generate_blobs(blob_config(n_per_class=25))
        with pytest.raises(BudgetError):
            dp.split_initial(ds, m=100, seed=0)
        with pytest.raises(BudgetError):
            dp.split_initial(ds, m=0, seed=0)


class TestBiasedPool:
    def test_excluded_classes_absent_from_labeled(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.make_biased_pool(ds, {0, 1}, m=20, seed=5)
        labels = {ds.true_label_of(s) for s in pool.labeled_ids}
        assert labels <= {2, 3}
        assert len(pool.labeled_ids) == 20
        u_labels = {ds.true_label_of(s) for s in pool.unlabeled_ids}
        assert {0, 1} <= u_labels

    def test_many_classes_exclusion(self):
        ds = dp.generate_blobs(blob_config(classes=100, n_per_class=5, stddev=0.05))
        excluded = set(range(20))
        pool = dp.make_biased_pool(ds, excluded, m=300, seed=1)
        labels = {ds.true_label_of(s) for s in pool.labeled_ids}
        assert labels <= set(range(20, 100))

    def test_empty_exclusion_matches_split_initial(self):
        ds = dp.generate_blobs(blob_config())
        assert dp.make_biased_pool(ds, set(), m=30, seed=9) == dp.split_initial(
            ds, m=30, seed=9
        )

    def test_insufficient_eligible(self):
        ds = dp.generate_blobs(blob_config())
        with pytest.raises(BudgetError):
            dp.make_biased_pool(ds, {0, 1, 2}, m=60, seed=0)
        with pytest.raises(BudgetError):
            dp.make_biased_pool(ds, {0, 1, 2, 3}, m=10, seed=0)


class TestMixOod:
    def shifted(self, shift, **over):
        base = dp.default_blob_centers(4, 2, 6.0 * 0.3)
        return dp.generate_blobs(
            blob_config(
                name="far", seed=99, centers=(base + shift).tolist(), **over
            )
        )

    def test_mix_counts_and_tags(self):
        ds = dp.generate_blobs(blob_config(n_per_class=25))  # N=100
        pool = dp.split_initial(ds, m=10, seed=0)
        merged, mixed = dp.mix_ood(pool, ds, self.shifted(10.0, n_per_class=25), 0.2)
        assert len(mixed.unlabeled_ids) == len(pool.unlabeled_ids) + 20
        assert mixed.labeled_ids == pool.labeled_ids
        foreign = [s for s in mixed.unlabeled_ids if merged.origin_of(s) is not None]
        assert len(foreign) == 20
        for sid in foreign:
            assert merged.true_label_of(sid) is None
            assert merged.origin_of(sid) == "far"
        in_dist = [s for s in mixed.unlabeled_ids if merged.origin_of(s) is None]
        assert len(in_dist) == 90

    def test_floor_to_zero_is_noop(self):
        ds = dp.generate_blobs(blob_config(n_per_class=25))
        pool = dp.split_initial(ds, m=10, seed=0)
        merged, mixed = dp.mix_ood(pool, ds, self.shifted(10.0, n_per_class=25), 0.001)
        assert mixed == pool
        assert merged is ds

    def test_shift_survives_loading(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        merged, mixed = dp.mix_ood(pool, ds, self.shifted(10.0), 0.2)
        foreign = [s for s in mixed.unlabeled_ids if merged.origin_of(s) is not None]
        # in-dist blobs live within ~3 units of the origin; the +10 shift puts
        # every foreign record far outside that ball
        assert np.linalg.norm(merged.features_for(foreign), axis=1).min() > 6.0
        assert np.linalg.norm(ds.train_features, axis=1).max() < 6.0

    def test_fraction_bounds(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        for bad in (0.0, 1.0, -0.1):
            with pytest.raises(BudgetError):
                dp.mix_ood(pool, ds, self.shifted(10.0), bad)

    def test_vector_dim_mismatch(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        foreign = dp.generate_blobs(blob_config(name="far", dim=3, seed=99))
        with pytest.raises(ShapeError):
            dp.mix_ood(pool, ds, foreign, 0.2)


class TestAdaptFeatures:
    def test_identity(self):
        x = np.random.default_rng(0).random((5, 12))
        assert dp.adapt_features(x, (3, 2, 2), (3, 2, 2)) is x

    def test_channel_replicate_and_resize(self):
        x = np.full((2, 16), 0.5)
        out = dp.adapt_features(x, (1, 4, 4), (3, 8, 8))
        assert out.shape == (2, 3 * 8 * 8)
        np.testing.assert_allclose(out, 0.5)

    def test_channel_average(self):
        imgs = np.stack(
            [np.full((3, 2, 2), v) for v in (0.0, 1.0)]
        )  # ch means 0 and 1
        imgs[:, 1] += 0.3
        out = dp.adapt_features(imgs.reshape(2, -1), (3, 2, 2), (1, 2, 2))
        np.testing.assert_allclose(out[0], 0.1)
        np.testing.assert_allclose(out[1], 1.1)

    def test_impossible(self):
        with pytest.raises(ShapeError):
            dp.adapt_features(np.zeros((1, 8)), (2, 2, 2), (3, 2, 2))
        with pytest.raises(ShapeError):
            dp.adapt_features(np.zeros((1, 4)), (4,), (2, 2))


class TestPromote:
    def test_moves_and_increments(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        picks = list(pool.unlabeled_ids[:5])
        nxt = dp.promote(pool, {s: ds.true_label_of(s) for s in picks})
        assert len(nxt.labeled_ids) == 15
        assert len(nxt.unlabeled_ids) == len(pool.unlabeled_ids) - 5
        assert nxt.stage == 1
        assert not set(nxt.labeled_ids) & set(nxt.unlabeled_ids)
        for s in picks:
            assert nxt.oracle_labels[s] == ds.true_label_of(s)

    def test_empty_promote_advances_stage_only(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        nxt = dp.promote(pool, {})
        assert nxt.labeled_ids == pool.labeled_ids
        assert nxt.unlabeled_ids == pool.unlabeled_ids
        assert nxt.stage == 1

    def test_membership_errors(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        with pytest.raises(PoolMembershipError):
            dp.promote(pool, {pool.labeled_ids[0]: 0})
        with pytest.raises(PoolMembershipError):
            dp.promote(pool, {"ghost/train/00000": 0})

    def test_conservation_over_stages(self):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        promoted = 0
        for t in range(5):
            batch = list(pool.unlabeled_ids[: 3 + t])
            pool = dp.promote(pool, {s: ds.true_label_of(s) for s in batch})
            promoted += len(batch)
            assert len(pool.labeled_ids) - 10 == promoted


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        ds = dp.generate_blobs(blob_config())
        pool = dp.split_initial(ds, m=10, seed=0)
        pool = dp.promote(pool, {pool.unlabeled_ids[0]: 2})
        streams = {"train": [1, 2, 3], "acquire": [4, 5]}
        path = tmp_path / "pool.json"
        dp.save_pool(pool, path, streams)
        loaded, got_streams = dp.load_pool(path)
        assert loaded == pool
        assert got_streams == streams
        dp.save_pool(loaded, tmp_path / "pool2.json", got_streams)
        assert path.read_bytes() == (tmp_path / "pool2.json").read_bytes()

    def test_foreign_block(self, tmp_path):
        ds = dp.generate_blobs(blob_config(n_per_class=25))
        pool = dp.split_initial(ds, m=10, seed=0)
        base = dp.default_blob_centers(4, 2, 1.8)
        far = dp.generate_blobs(
            blob_config(name="far", seed=99, centers=(base + 10).tolist(), n_per_class=25)
        )
        merged, _ = dp.mix_ood(pool, ds, far, 0.2)
        dp.save_foreign_block(merged, tmp_path)
        manifest = json.loads((tmp_path / "foreign.json").read_text())
        assert len(manifest["ids"]) == 20
        feats = np.load(tmp_path / "foreign.npy")
        np.testing.assert_array_equal(feats, merged.features_for(manifest["ids"]))


class TestRandomOperationSequences:
    """Invariant fuzzing: promote/mix in random order never breaks the pool."""

    def test_sequences(self):
        master = np.random.default_rng(2024)
        for _ in range(50):
            seed = int(master.integers(2**31))
            rng = np.random.default_rng(seed)
            ds = dp.generate_blobs(blob_config(n_per_class=15, seed=seed))
            pool = dp.split_initial(ds, m=5, seed=seed)
            merged = ds
            initial = len(pool.labeled_ids)
            promoted = 0
            for _step in range(rng.integers(3, 8)):
                if rng.random() < 0.25:
                    base = dp.default_blob_centers(4, 2, 1.8)
                    far = dp.generate_blobs(
                        blob_config(
                            name=f"far{_step}",
                            seed=seed + _step,
                            centers=(base + 10).tolist(),
                            n_per_class=15,
                        )
                    )
                    merged, pool = dp.mix_ood(pool, merged, far, float(rng.uniform(0.05, 0.3)))
                else:
                    k = int(rng.integers(0, min(4, len(pool.unlabeled_ids)) + 1))
                    batch = list(rng.choice(pool.unlabeled_ids, size=k, replace=False))
                    pool = dp.promote(
                        pool, {s: rng.integers(0, 4) for s in batch}
                    )
                    promoted += k
                pool.check_invariants()
                assert len(pool.labeled_ids) - initial == promoted
