from __future__ import annotations

import numpy as np
import pytest

from tactile_transformer.data import (
    DatasetError,
    DatasetSplit,
    LabeledSample,
    NormalizationStats,
    SyntheticTaskSpec,
    TactileTensor,
    denormalize,
    generate_synthetic,
    load_dataset,
    normalize,
    save_dataset,
    synthetic_templates,
)


def small_spec(**kw) -> SyntheticTaskSpec:
    base = dict(
        mode="mixed",
        classes=4,
        frames=20,
        height=16,
        width=16,
        noise_std=0.05,
        train_per_class=3,
        val_per_class=2,
        test_per_class=2,
        seed=11,
    )
    base.update(kw)
    return SyntheticTaskSpec(**base)


class TestTactileTensor:
    def test_validation(self):
        with pytest.raises(DatasetError, match="4-D"):
            TactileTensor(np.zeros((3, 4, 5)))
        with pytest.raises(DatasetError, match="non-finite"):
            TactileTensor(np.full((1, 2, 2, 2), np.inf))
        with pytest.raises(DatasetError, match="positive"):
            TactileTensor(np.zeros((1, 2, 2, 2)), sample_rate_hz=0.0)

    def test_label_range_checked(self):
        t = TactileTensor(np.zeros((1, 2, 2, 2)))
        with pytest.raises(DatasetError, match="out of range"):
            DatasetSplit([LabeledSample(t, 2)], [], [], ["a", "b"])


class TestSyntheticGenerator:
    def test_spec_validation(self):
        with pytest.raises(DatasetError, match="M < 2"):
            small_spec(classes=1)
        with pytest.raises(DatasetError, match="nonpositive"):
            small_spec(height=0)
        with pytest.raises(DatasetError, match="mode"):
            small_spec(mode="nope")
        with pytest.raises(DatasetError, match="divisible"):
            small_spec(mode="temporal-pair", frames=21)

    def test_determinism_bit_identical(self):
        a = generate_synthetic(small_spec())
        b = generate_synthetic(small_spec())
        assert a.fingerprint() == b.fingerprint()
        for sa, sb in zip(a.train, b.train):
            assert np.array_equal(sa.tensor.values, sb.tensor.values)

    def test_different_seeds_differ(self):
        a = generate_synthetic(small_spec())
        b = generate_synthetic(small_spec(seed=12))
        assert a.fingerprint() != b.fingerprint()

    def test_split_sizes_and_labels(self):
        ds = generate_synthetic(small_spec())
        assert len(ds.train) == 12 and len(ds.validation) == 8 and len(ds.test) == 8
        assert sorted({s.label for s in ds.train}) == [0, 1, 2, 3]
        assert ds.class_names == ["spatial_0", "spatial_1", "temporal_0", "temporal_1"]

    def test_spatial_pair_confinement_and_frame_sums(self):
        spec = small_spec(mode="spatial-pair", classes=2, noise_std=0.0)
        names, templates = synthetic_templates(spec)
        left, right = templates[0], templates[1]
        w = spec.width
        left_cols = np.flatnonzero(left.sum(axis=(0, 1, 2)) > 0)
        right_cols = np.flatnonzero(right.sum(axis=(0, 1, 2)) > 0)
        assert left_cols.max() < w // 2 <= right_cols.min()
        # per-frame spatial means identical across classes at zero noise
        np.testing.assert_allclose(
            left.mean(axis=(0, 2, 3)), right.mean(axis=(0, 2, 3)), atol=1e-12
        )

    def test_spatial_pair_heatmaps_differ_strongly(self):
        spec = small_spec(mode="spatial-pair", classes=2, noise_std=0.08)
        _, templates = synthetic_templates(spec)
        gap = np.abs(templates[0].mean(axis=1) - templates[1].mean(axis=1)).max()
        assert gap >= 10 * spec.noise_std

    def test_temporal_pair_shares_time_averaged_heatmap(self):
        spec = small_spec(mode="temporal-pair", classes=2, noise_std=0.0)
        _, templates = synthetic_templates(spec)
        np.testing.assert_allclose(
            templates[0].mean(axis=1), templates[1].mean(axis=1), atol=1e-12
        )
        assert np.abs(templates[0] - templates[1]).max() > 0.5

    def test_temporal_pair_is_segment_permutation(self):
        spec = small_spec(mode="temporal-pair", classes=2, noise_std=0.0)
        _, templates = synthetic_templates(spec)
        sl = spec.segment_frames
        segs0 = [templates[0][:, i * sl : (i + 1) * sl].tobytes() for i in range(spec.frames // sl)]
        segs1 = [templates[1][:, i * sl : (i + 1) * sl].tobytes() for i in range(spec.frames // sl)]
        assert sorted(segs0) == sorted(segs1) and segs0 != segs1

    def test_centroid_oracles_on_temporal_pair(self):
        # heatmap centroids are blind to order; full series are not
        spec = small_spec(
            mode="temporal-pair", classes=2, noise_std=0.05,
            train_per_class=25, val_per_class=2, test_per_class=50, seed=3,
        )
        ds = generate_synthetic(spec)

        def centroid_acc(feat):
            cents = {}
            for s in ds.train:
                cents.setdefault(s.label, []).append(feat(s.tensor.values))
            cents = {k: np.mean(v, axis=0) for k, v in cents.items()}
            hits = sum(
                1
                for s in ds.test
                if min(cents, key=lambda k: np.linalg.norm(feat(s.tensor.values) - cents[k]))
                == s.label
            )
            return hits / len(ds.test)

        assert centroid_acc(lambda v: v.mean(axis=1).ravel()) <= 0.6
        assert centroid_acc(lambda v: v.ravel()) >= 0.95

    def test_too_many_temporal_classes_rejected(self):
        with pytest.raises(DatasetError, match="segment orders"):
            synthetic_templates(small_spec(mode="temporal-pair", classes=25))

    def test_grid_too_small_rejected(self):
        with pytest.raises(DatasetError, match="too"):
            synthetic_templates(small_spec(mode="spatial-pair", classes=2, height=8, width=8))


class TestNormalization:
    def test_hand_computed_two_point_stats(self):
        a = TactileTensor(np.zeros((1, 1, 1, 1)))
        b = TactileTensor(np.full((1, 1, 1, 1), 2.0))
        stats = NormalizationStats.from_samples([a, b])
        assert stats.mean.ravel()[0] == 1.0 and stats.std.ravel()[0] == 1.0
        np.testing.assert_array_equal(normalize(a, stats).values.ravel(), [-1.0])
        np.testing.assert_array_equal(normalize(b, stats).values.ravel(), [1.0])

    def test_constant_tensor_normalizes_to_zero(self):
        t = TactileTensor(np.full((1, 3, 2, 2), 5.0))
        stats = NormalizationStats.from_samples([t])
        np.testing.assert_array_equal(normalize(t, stats).values, np.zeros((1, 3, 2, 2)))

    def test_round_trip_within_tolerance(self):
        rng = np.random.default_rng(0)
        samples = [TactileTensor(rng.standard_normal((2, 4, 3, 3)) * 3 + 1) for _ in range(4)]
        stats = NormalizationStats.from_samples(samples)
        back = denormalize(normalize(samples[0], stats), stats)
        np.testing.assert_allclose(back.values, samples[0].values, atol=1e-6)

    def test_std_floor_applies(self):
        t = TactileTensor(np.full((1, 2, 1, 1), 3.0))
        stats = NormalizationStats.from_samples([t])
        assert stats.std.ravel()[0] == 1e-6

    def test_shape_mismatch_rejected(self):
        t = TactileTensor(np.zeros((1, 2, 2, 2)))
        stats = NormalizationStats.from_samples([t])
        other = TactileTensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(DatasetError, match="stats shape mismatch"):
            normalize(other, stats)


class TestDiskRoundTrip:
    def test_save_load_round_trip_bit_exact(self, tmp_path):
        ds = generate_synthetic(small_spec())
        manifest = save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path, manifest)
        assert back.class_names == ds.class_names
        for orig, loaded in zip(ds.train, back.train):
            assert loaded.label == orig.label
            # float32 quantization on disk, so compare at float32 resolution
            np.testing.assert_array_equal(
                loaded.tensor.values, orig.tensor.values.astype("<f4").astype(np.float64)
            )

    def test_single_sample_round_trip(self, tmp_path):
        values = np.random.default_rng(0).standard_normal((1, 45, 32, 32)).astype("<f4")
        ds = DatasetSplit(
            [LabeledSample(TactileTensor(values.astype(np.float64)), 0)], [], [], ["only"]
        )
        manifest = save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path, manifest)
        assert len(back.train) == 1
        assert np.array_equal(back.train[0].tensor.values, values.astype(np.float64))

    def test_empty_manifest_rejected(self, tmp_path):
        m = tmp_path / "manifest.txt"
        m.write_text("#shape: 1 2 2 2\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="empty manifest"):
            load_dataset(tmp_path, m)

    def test_missing_file_reported(self, tmp_path):
        m = tmp_path / "manifest.txt"
        m.write_text("#shape: 1 2 2 2\nmissing.f32,a,train\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="missing file"):
            load_dataset(tmp_path, m)

    def test_shape_mismatch_reported(self, tmp_path):
        np.zeros(7, dtype="<f4").tofile(tmp_path / "x.f32")
        m = tmp_path / "manifest.txt"
        m.write_text("#shape: 1 2 2 2\nx.f32,a,train\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="shape mismatch"):
            load_dataset(tmp_path, m)

    def test_unknown_label_reported(self, tmp_path):
        np.zeros(8, dtype="<f4").tofile(tmp_path / "x.f32")
        m = tmp_path / "manifest.txt"
        m.write_text("#shape: 1 2 2 2\n#classes: a,b\nx.f32,zzz,train\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="unknown label"):
            load_dataset(tmp_path, m)

    def test_unknown_split_reported(self, tmp_path):
        np.zeros(8, dtype="<f4").tofile(tmp_path / "x.f32")
        m = tmp_path / "manifest.txt"
        m.write_text("#shape: 1 2 2 2\nx.f32,a,holdout\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="unknown split"):
            load_dataset(tmp_path, m)

    def test_missing_shape_directive_reported(self, tmp_path):
        np.zeros(8, dtype="<f4").tofile(tmp_path / "x.f32")
        m = tmp_path / "manifest.txt"
        m.write_text("x.f32,a,train\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="#shape"):
            load_dataset(tmp_path, m)


class TestBalancing:
    def write_unbalanced(self, tmp_path, counts=(5, 2), val=2, test=3):
        lines = ["#shape: 1 2 2 2", "#classes: a,b"]
        rng = np.random.default_rng(0)
        idx = 0
        for label, n in zip(("a", "b"), counts):
            for _ in range(n):
                name = f"s{idx}.f32"
                rng.standard_normal(8).astype("<f4").tofile(tmp_path / name)
                lines.append(f"{name},{label},train")
                idx += 1
        for label in ("a", "b"):
            for _ in range(val):
                name = f"s{idx}.f32"
                rng.standard_normal(8).astype("<f4").tofile(tmp_path / name)
                lines.append(f"{name},{label},validation")
                idx += 1
            for _ in range(test):
                name = f"s{idx}.f32"
                rng.standard_normal(8).astype("<f4").tofile(tmp_path / name)
                lines.append(f"{name},{label},test")
                idx += 1
        m = tmp_path / "manifest.txt"
        m.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return m

    def test_balancing_hits_exact_target_without_touching_eval_splits(self, tmp_path):
        m = self.write_unbalanced(tmp_path)
        ds = load_dataset(tmp_path, m, balance_train_to=4)
        per_class = {c: sum(1 for s in ds.train if s.label == c) for c in (0, 1)}
        assert per_class == {0: 4, 1: 4}
        assert len(ds.validation) == 4 and len(ds.test) == 6
        assert {s.label for s in ds.train} == {0, 1}

    def test_balancing_is_deterministic(self, tmp_path):
        m = self.write_unbalanced(tmp_path)
        a = load_dataset(tmp_path, m, balance_train_to=4, balance_seed=5)
        b = load_dataset(tmp_path, m, balance_train_to=4, balance_seed=5)
        assert a.fingerprint() == b.fingerprint()

    def test_reference_split_sizes(self, tmp_path):
        # 9 classes with 500 validation / 1000 test samples each -> 4500 / 9000
        # (single-cell tensors keep 13.5k files cheap)
        lines = ["#shape: 1 1 1 1", "#classes: " + ",".join(f"c{i}" for i in range(9))]
        idx = 0
        for c in range(9):
            for split, n in (("train", 2), ("validation", 500), ("test", 1000)):
                for _ in range(n):
                    name = f"s{idx}.f32"
                    np.full(1, idx, dtype="<f4").tofile(tmp_path / name)
                    lines.append(f"{name},c{c},{split}")
                    idx += 1
        m = tmp_path / "manifest.txt"
        m.write_text("\n".join(lines) + "\n", encoding="utf-8")
        ds = load_dataset(tmp_path, m)
        assert len(ds.validation) == 4500 and len(ds.test) == 9000
