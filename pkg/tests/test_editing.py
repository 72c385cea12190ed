"""Edit fidelity (preserved positions survive exactly), span conversion,
identity edits, and long-sequence stitching arithmetic."""

import numpy as np
import pytest
import torch

from bamm.data import FrameMatrix
from bamm.decoding import DecodeConfig
from bamm.editing import (
    EditRequest,
    StoryScript,
    edit,
    frame_span_to_token_span,
    generate_long,
)
from bamm.rng import derive_seed, torch_generator


def cfg(**kwargs) -> DecodeConfig:
    defaults = dict(t_max=12, seed=0)
    defaults.update(kwargs)
    return DecodeConfig(**defaults)


def random_frames(n, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, dim)).astype(np.float32)


class TestSpanConversion:
    def test_outward_rounding_example(self):
        # Frames [23, 42) snap outward to tokens 6..11 (frames [20, 44)).
        assert frame_span_to_token_span((23, 42)) == (6, 11)

    def test_aligned_span_is_exact(self):
        assert frame_span_to_token_span((20, 44)) == (6, 11)

    def test_single_frame_maps_to_one_token(self):
        assert frame_span_to_token_span((5, 6)) == (2, 2)

    def test_invalid_span_rejected(self):
        with pytest.raises(ValueError):
            frame_span_to_token_span((10, 10))
        with pytest.raises(ValueError):
            frame_span_to_token_span((-1, 4))


class TestEdit:
    def test_inpaint_preserves_edges_exactly(self, tiny_generator):
        source = random_frames(80, seed=1)  # 20 tokens
        req = EditRequest(label=0, task="inpaint", frames=source, decode=cfg(seed=2))
        result = edit(tiny_generator, req)
        assert result.masked_positions == tuple(range(6, 16))
        assert result.preserved_positions == tuple(range(1, 6)) + tuple(range(16, 21))
        np.testing.assert_array_equal(
            result.grid[0, [p - 1 for p in result.preserved_positions]],
            result.source_grid[0, [p - 1 for p in result.preserved_positions]],
        )
        assert result.frames.n_frames == 80

    def test_residual_rows_preserved_outside_mask(self, tiny_generator):
        source = random_frames(48, seed=3)  # 12 tokens
        req = EditRequest(label=1, task="outpaint", frames=source, decode=cfg(seed=4))
        result = edit(tiny_generator, req)
        keep = [p - 1 for p in result.preserved_positions]
        np.testing.assert_array_equal(result.grid[:, keep], result.source_grid[:, keep])

    def test_identity_edit_round_trips_through_tokenizer(self, tiny_generator):
        source = random_frames(40, seed=5)
        req = EditRequest(label=0, task="custom", frames=source, spans=(), decode=cfg())
        result = edit(tiny_generator, req)
        np.testing.assert_array_equal(result.grid, result.source_grid)
        # Identity edit equals the tokenizer round-trip of the source.
        recon = tiny_generator.frames_from_grid(result.source_grid)
        np.testing.assert_array_equal(result.frames.frames, recon.frames)

    def test_prefix_task_regenerates_trailing_half(self, tiny_generator):
        base = np.arange(10, dtype=np.int64) % 7
        grid = np.stack([base, base, base])
        req = EditRequest(label=2, task="prefix", tokens=grid, decode=cfg(seed=6))
        result = edit(tiny_generator, req)
        assert result.masked_positions == tuple(range(6, 11))
        np.testing.assert_array_equal(result.grid[0, :5], base[:5])

    def test_token_sequence_source_without_residuals(self, tiny_generator):
        tokens = np.array([1, 2, 3, 4, 5, 6, 7, 0], dtype=np.int64)
        req = EditRequest(label=0, task="suffix", tokens=tokens, decode=cfg(seed=7))
        result = edit(tiny_generator, req)
        assert result.grid.shape == (3, 8)
        preserved = [p - 1 for p in result.preserved_positions]
        np.testing.assert_array_equal(result.grid[0, preserved], tokens[preserved])

    def test_custom_spans_frame_indexed(self, tiny_generator):
        source = random_frames(48, seed=8)
        req = EditRequest(
            label=0, task="custom", frames=source, spans=((8, 16),), decode=cfg(seed=9)
        )
        result = edit(tiny_generator, req)
        assert result.masked_positions == (3, 4)

    def test_out_of_range_custom_span_rejected(self, tiny_generator):
        source = random_frames(16, seed=10)  # 4 tokens
        req = EditRequest(
            label=0, task="custom", frames=source, spans=((12, 24),), decode=cfg()
        )
        with pytest.raises(ValueError):
            edit(tiny_generator, req)

    def test_requires_exactly_one_source(self):
        with pytest.raises(ValueError):
            EditRequest(label=0, task="inpaint")
        with pytest.raises(ValueError):
            EditRequest(
                label=0, task="inpaint", frames=random_frames(16), tokens=np.zeros(4, dtype=np.int64)
            )

    def test_deterministic_for_fixed_seed(self, tiny_generator):
        source = random_frames(40, seed=11)
        req = EditRequest(label=1, task="inpaint", frames=source, decode=cfg(seed=12))
        a = edit(tiny_generator, req)
        b = edit(tiny_generator, req)
        np.testing.assert_array_equal(a.frames.frames, b.frames.frames)
        np.testing.assert_array_equal(a.grid, b.grid)


class TestGenerateLong:
    def test_stitched_length_arithmetic(self, tiny_generator):
        script = StoryScript(entries=((0, 10), (1, 10)), t_trans=4)
        frames, grid = generate_long(tiny_generator, script, cfg(seed=13))
        assert grid.shape[1] == 24  # 10 + 4 + 10
        assert frames.n_frames == 96

    def test_three_segments(self, tiny_generator):
        script = StoryScript(entries=((0, 6), (1, 6), (2, 6)), t_trans=2)
        _, grid = generate_long(tiny_generator, script, cfg(seed=14))
        assert grid.shape[1] == 6 * 3 + 2 * 2

    def test_single_entry_rejected(self):
        with pytest.raises(ValueError):
            StoryScript(entries=((0, 10),), t_trans=4)

    def test_segment_shorter_than_window_rejected(self, tiny_generator):
        script = StoryScript(entries=((0, 1), (1, 10)), t_trans=6)
        with pytest.raises(ValueError, match="t_target"):
            generate_long(tiny_generator, script, cfg(seed=15))

    def test_segment_tokens_survive_stitching(self, tiny_generator):
        from dataclasses import replace

        base_cfg = cfg(seed=16)
        script = StoryScript(entries=((0, 8), (2, 8)), t_trans=4)
        _, grid = generate_long(tiny_generator, script, base_cfg)
        for k, (label, t_target) in enumerate(script.entries):
            seg_cfg = replace(base_cfg, seed=derive_seed(base_cfg.seed, "segment", k))
            rng = torch_generator(seg_cfg.seed, "decode")
            tokens, _, _ = tiny_generator.generate_base(label, seg_cfg, rng, t_target)
            start = k * (8 + script.t_trans)
            np.testing.assert_array_equal(grid[0, start : start + 8], tokens)

    def test_transition_window_capacity_checked(self, tiny_generator):
        script = StoryScript(entries=((0, 10), (1, 10)), t_trans=40)
        with pytest.raises(ValueError, match="capacity"):
            generate_long(tiny_generator, script, cfg(seed=17))
