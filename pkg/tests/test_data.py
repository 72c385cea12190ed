"""Synthetic dataset generation, normalization and persistence."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bamm.data import (
    ConfigurationError,
    DatasetError,
    FamilyConfig,
    FrameMatrix,
    GeneratorSpec,
    MotionRecord,
    NormStats,
    compute_norm_stats,
    denormalize,
    generate_dataset,
    load_dataset,
    normalize,
    pad_to_stride,
    save_dataset,
    DOWNSAMPLE,
    FEATURE_DIM,
)


def make_spec(**kwargs) -> GeneratorSpec:
    defaults = dict(families=[FamilyConfig("wave", 3)], seed=7)
    defaults.update(kwargs)
    return GeneratorSpec(**defaults)


class TestGenerateDataset:
    def test_deterministic_for_fixed_seed(self):
        a = generate_dataset(make_spec())
        b = generate_dataset(make_spec())
        assert len(a) == len(b) == 3
        for ra, rb in zip(a, b):
            assert ra.id == rb.id and ra.label == rb.label
            np.testing.assert_array_equal(ra.motion.frames, rb.motion.frames)

    def test_different_seed_changes_data(self):
        a = generate_dataset(make_spec(seed=7))
        b = generate_dataset(make_spec(seed=8))
        assert not np.array_equal(a[0].motion.frames, b[0].motion.frames)

    def test_bimodal_family_produces_two_length_clusters(self):
        spec = make_spec(families=[FamilyConfig("walk_then_jump", 200)])
        lengths = [r.motion.n_frames for r in generate_dataset(spec)]
        # Modes at 48 and 160 frames; both clusters present, nothing between.
        short = [n for n in lengths if n < 100]
        long = [n for n in lengths if n >= 100]
        assert len(short) > 40 and len(long) > 40
        assert all(abs(n - 48) < 20 for n in short)
        assert all(abs(n - 160) < 40 for n in long)

    def test_count_zero_gives_empty_sequence(self):
        assert generate_dataset(make_spec(families=[FamilyConfig("wave", 0)])) == []

    def test_empty_family_list_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_dataset(GeneratorSpec(families=[]))

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_dataset(make_spec(families=[FamilyConfig("moonwalk", 1)]))

    def test_lengths_within_range_and_padding_aligns(self):
        spec = make_spec(
            families=[FamilyConfig(name, 20) for name in ("wave", "jump", "circle_walk")],
            length_range=(8, 200),
        )
        for rec in generate_dataset(spec):
            n = rec.motion.n_frames
            assert 8 <= n <= 200
            padded = pad_to_stride(rec.motion)
            assert padded.n_frames % DOWNSAMPLE == 0
            assert abs(padded.n_frames - n) <= DOWNSAMPLE // 2

    def test_labels_follow_family_order(self):
        spec = make_spec(families=[FamilyConfig("jump", 2), FamilyConfig("spin", 2)])
        labels = {r.id.split("-")[0]: r.label for r in generate_dataset(spec)}
        assert labels == {"jump": 0, "spin": 1}

    def test_feature_dim(self):
        rec = generate_dataset(make_spec())[0]
        assert rec.motion.feature_dim == FEATURE_DIM


class TestNormStats:
    def test_constant_feature_hits_std_floor(self):
        frames = np.ones((8, 2), dtype=np.float32) * 5.0
        stats = compute_norm_stats([MotionRecord("a", 0, FrameMatrix(frames))])
        assert stats.mean[0] == pytest.approx(5.0)
        assert stats.std[0] == pytest.approx(1e-6)

    def test_hand_computed_population_std(self):
        # frames [0], [2] in one feature: mean 1, population std 1
        frames = np.array([[0.0], [2.0], [0.0], [2.0]], dtype=np.float32)
        stats = compute_norm_stats([MotionRecord("a", 0, FrameMatrix(frames))])
        assert stats.mean[0] == pytest.approx(1.0)
        assert stats.std[0] == pytest.approx(1.0)

    def test_normalize_then_stats_is_standard(self):
        records = generate_dataset(make_spec(families=[FamilyConfig("circle_walk", 5)]))
        stats = compute_norm_stats(records)
        renorm = [
            MotionRecord(r.id, r.label, normalize(r.motion, stats)) for r in records
        ]
        again = compute_norm_stats(renorm)
        assert np.abs(again.mean).max() < 1e-5
        # Features at the std floor stay degenerate; others standardize to 1.
        live = stats.std > 1e-5
        assert np.abs(again.std[live] - 1.0).max() < 1e-5

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            compute_norm_stats([])


class TestNormalize:
    def test_mean_vector_maps_to_zero(self):
        stats = NormStats(mean=np.array([2.0, -1.0]), std=np.array([3.0, 0.5]))
        motion = FrameMatrix(np.tile(stats.mean, (4, 1)))
        assert np.abs(normalize(motion, stats).frames).max() == 0.0

    def test_hand_computed_example(self):
        # (3 - 1) / 2 = 1
        stats = NormStats(mean=np.array([1.0]), std=np.array([2.0]))
        motion = FrameMatrix(np.full((4, 1), 3.0))
        np.testing.assert_allclose(normalize(motion, stats).frames, 1.0)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(0)
        motion = FrameMatrix(rng.normal(size=(12, 5)).astype(np.float32))
        stats = NormStats(mean=rng.normal(size=5), std=rng.uniform(0.5, 2.0, size=5))
        back = denormalize(normalize(motion, stats), stats)
        np.testing.assert_allclose(back.frames, motion.frames, atol=1e-6)

    def test_dimension_mismatch_rejected(self):
        stats = NormStats(mean=np.zeros(3), std=np.ones(3))
        with pytest.raises(ValueError):
            normalize(FrameMatrix(np.zeros((4, 2))), stats)


class TestPadToStride:
    @pytest.mark.parametrize("tau,expected", [(8, 8), (9, 8), (10, 8), (11, 12), (49, 48), (50, 48)])
    def test_nearest_multiple_ties_down(self, tau, expected):
        motion = FrameMatrix(np.arange(tau, dtype=np.float32)[:, None].repeat(2, axis=1))
        assert pad_to_stride(motion).n_frames == expected

    def test_padding_repeats_last_frame(self):
        frames = np.arange(5, dtype=np.float32)[:, None]
        padded = pad_to_stride(FrameMatrix(frames))
        # 5 frames round to 4 (truncate); 7 frames round to 8 (pad)
        assert padded.n_frames == 4
        padded_up = pad_to_stride(FrameMatrix(np.arange(7, dtype=np.float32)[:, None]))
        assert padded_up.n_frames == 8
        assert padded_up.frames[-1, 0] == padded_up.frames[-2, 0] == 6.0


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        records = generate_dataset(make_spec(families=[FamilyConfig("jump", 5)]))
        path = tmp_path / "data.jsonl"
        save_dataset(records, path)
        loaded = load_dataset(path)
        assert len(loaded) == 5
        for a, b in zip(records, loaded):
            assert a.id == b.id and a.label == b.label and a.motion.fps == b.motion.fps
            np.testing.assert_array_equal(a.motion.frames, b.motion.frames)

    def test_missing_label_field_names_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        good = json.dumps({"id": "a", "label": 0, "fps": 20, "frames": [[0.0]] * 4})
        bad = json.dumps({"id": "b", "fps": 20, "frames": [[0.0]] * 4})
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(DatasetError, match="line 2.*label"):
            load_dataset(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(DatasetError, match="line 1"):
            load_dataset(path)

    def test_inconsistent_feature_dim_rejected(self, tmp_path):
        path = tmp_path / "mixed.jsonl"
        rows = [
            {"id": "a", "label": 0, "fps": 20, "frames": [[0.0] * 8] * 4},
            {"id": "b", "label": 0, "fps": 20, "frames": [[0.0] * 12] * 4},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        with pytest.raises(DatasetError, match="inconsistent"):
            load_dataset(path)

    def test_save_rejects_mixed_dims(self, tmp_path):
        records = [
            MotionRecord("a", 0, FrameMatrix(np.zeros((4, 8), dtype=np.float32))),
            MotionRecord("b", 0, FrameMatrix(np.zeros((4, 12), dtype=np.float32))),
        ]
        with pytest.raises(DatasetError):
            save_dataset(records, tmp_path / "x.jsonl")


@settings(max_examples=25, deadline=None)
@given(
    tau=st.integers(4, 40),
    dim=st.integers(1, 6),
    seed=st.integers(0, 2**16),
)
def test_normalize_round_trip_property(tau, dim, seed):
    rng = np.random.default_rng(seed)
    motion = FrameMatrix(rng.normal(scale=3.0, size=(tau, dim)).astype(np.float32))
    stats = NormStats(mean=rng.normal(size=dim), std=rng.uniform(0.1, 4.0, size=dim))
    back = denormalize(normalize(motion, stats), stats)
    np.testing.assert_allclose(back.frames, motion.frames, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(tau=st.integers(4, 99))
def test_pad_to_stride_property(tau):
    motion = FrameMatrix(np.zeros((tau, 2), dtype=np.float32))
    padded = pad_to_stride(motion)
    assert padded.n_frames % DOWNSAMPLE == 0
    assert abs(padded.n_frames - tau) <= DOWNSAMPLE // 2 or padded.n_frames == DOWNSAMPLE
