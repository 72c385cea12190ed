"""Zero-shot temporal editing over tokenized motion, and long-sequence
synthesis by generating transitions between independently generated
segments.

Editing re-predicts only masked token positions with the end marker
anchored at the source length; unmasked base tokens are preserved exactly
and their residual-layer ids are kept from the source's own encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch

from .data import FrameMatrix, normalize, pad_to_stride, DOWNSAMPLE
from .decoding import DecodeConfig, DecodeTrace, MotionGenerator, RefinePass
from .masks import SequenceLayout, edit_mask
from .rng import derive_seed, torch_generator
from .tokenizer import rvq_encode
from .transformer import logits_cfg

EDIT_TASKS = ("inpaint", "outpaint", "prefix", "suffix", "custom")


@dataclass
class EditRequest:
    label: int
    task: str
    frames: np.ndarray | None = None  # (tau, D) raw motion
    tokens: np.ndarray | None = None  # (t,) base ids or (V, t) grid
    spans: tuple[tuple[int, int], ...] = ()  # half-open frame spans, custom task
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    fps: int = 20

    def __post_init__(self) -> None:
        if self.task not in EDIT_TASKS:
            raise ValueError(f"unknown edit task {self.task!r}; known: {EDIT_TASKS}")
        if (self.frames is None) == (self.tokens is None):
            raise ValueError("exactly one of frames/tokens must be provided")


@dataclass
class EditResult:
    frames: FrameMatrix
    grid: np.ndarray
    source_grid: np.ndarray
    masked_positions: tuple[int, ...]
    preserved_positions: tuple[int, ...]
    trace: DecodeTrace


@dataclass
class StoryScript:
    """Ordered (label, optional token length) entries plus a transition length."""

    entries: tuple[tuple[int, int | None], ...]
    t_trans: int = 4

    def __post_init__(self) -> None:
        if len(self.entries) < 2:
            raise ValueError("a story needs at least 2 entries")
        if self.t_trans < 1:
            raise ValueError("t_trans must be >= 1")


def frame_span_to_token_span(span: tuple[int, int]) -> tuple[int, int]:
    """Half-open frame span -> inclusive 1-indexed token span, rounded outward."""
    a, b = span
    if a < 0 or b <= a:
        raise ValueError(f"invalid frame span {span}; need 0 <= start < end")
    return a // DOWNSAMPLE + 1, math.ceil(b / DOWNSAMPLE)


def _source_grid(generator: MotionGenerator, req: EditRequest) -> tuple[np.ndarray, int]:
    """Token grid for the edit source; returns (grid, fps)."""
    if req.frames is not None:
        motion = pad_to_stride(normalize(FrameMatrix(req.frames, fps=req.fps), generator.stats))
        grid, _ = generator.tokenizer.tokenize(torch.from_numpy(motion.frames))
        return grid.numpy().astype(np.int64), motion.fps
    tokens = np.asarray(req.tokens, dtype=np.int64)
    n_quantizers = generator.tokenizer.config.n_quantizers
    if tokens.ndim == 2:
        if tokens.shape[0] != n_quantizers:
            raise ValueError(f"grid must have {n_quantizers} rows, got {tokens.shape[0]}")
        return tokens.copy(), req.fps
    # Base-only source: residual rows are re-derived by the refiner everywhere.
    grid = generator.refine_residuals(tokens.tolist(), req.label, req.decode)
    return grid, req.fps


def _refine_masked_columns(
    generator: MotionGenerator,
    grid: np.ndarray,
    label: int,
    masked: Sequence[int],
    cfg: DecodeConfig,
) -> np.ndarray:
    """Re-predict residual rows at masked columns only; other columns keep
    their source ids."""
    n_quantizers = grid.shape[0]
    if n_quantizers == 1 or not masked:
        return grid
    assert generator.refiner is not None
    t = grid.shape[1]
    cols = np.asarray([p - 1 for p in masked], dtype=np.int64)
    label_t = torch.tensor([label, label], dtype=torch.long)
    null = torch.tensor([False, True])
    out = grid.copy()
    for v in range(1, n_quantizers):
        lower = torch.from_numpy(out[:v])[None].expand(2, v, t).long()
        with torch.no_grad():
            logits = generator.refiner.forward_refiner(lower, v, label_t, null)
        guided = logits_cfg(logits[0], logits[1], cfg.cfg_refine)
        picks = guided.argmax(dim=-1).numpy()
        out[v, cols] = picks[cols]
    return out


def edit(generator: MotionGenerator, req: EditRequest) -> EditResult:
    """Apply a temporal editing task; unmasked base tokens survive bit-exact."""
    source, fps = _source_grid(generator, req)
    t = source.shape[1]
    token_spans = tuple(frame_span_to_token_span(s) for s in req.spans) if req.task == "custom" else ()
    unmasked, masked = edit_mask(t, req.task, token_spans)
    rng = torch_generator(req.decode.seed, "edit", req.task)

    base = source[0].tolist()
    if masked:
        new_base, confs, _ = generator.sequential_repredict(
            base,
            req.label,
            unmasked,
            masked,
            req.decode.cfg_s2,
            req.decode.temperature_2,
            rng,
            req.decode.top_k,
        )
    else:
        new_base, confs = list(base), []

    grid = source.copy()
    grid[0] = np.asarray(new_base, dtype=np.int64)
    grid = _refine_masked_columns(generator, grid, req.label, masked, req.decode)

    preserved = tuple(p for p in range(1, t + 1) if p not in masked)
    mismatch = [p for p in preserved if grid[0, p - 1] != source[0, p - 1]]
    assert not mismatch, f"edit altered preserved positions {mismatch}"

    frames = generator.frames_from_grid(grid)
    trace = DecodeTrace(
        iter1_tokens=base,
        confidences=[],
        predicted_t=t,
        cap_hit=False,
        end_suppressed=0,
        grid=grid.tolist(),
    )
    if masked:
        trace.passes.append(RefinePass(list(masked), list(new_base), list(confs)))
    return EditResult(
        frames=frames,
        grid=grid,
        source_grid=source,
        masked_positions=tuple(masked),
        preserved_positions=preserved,
        trace=trace,
    )


def generate_long(
    generator: MotionGenerator,
    script: StoryScript,
    cfg: DecodeConfig,
    transition_condition: str = "next",
) -> tuple[FrameMatrix, np.ndarray]:
    """Generate each segment independently, then fill transitions conditioned
    on the previous segment's tail and the next segment's head.

    Returns (frames, full token grid); token length is the segment sum plus
    (n-1) * t_trans.
    """
    if transition_condition not in ("next", "null"):
        raise ValueError("transition_condition must be 'next' or 'null'")
    half = math.ceil(script.t_trans / 2)
    window_len = 2 * half + script.t_trans
    if window_len + 2 > generator.transformer.config.max_len:
        raise ValueError(
            f"transition window {window_len} exceeds model capacity "
            f"{generator.transformer.config.max_len - 2}"
        )

    seg_tokens: list[list[int]] = []
    seg_grids: list[np.ndarray] = []
    for k, (label, t_target) in enumerate(script.entries):
        seg_cfg = replace(cfg, seed=derive_seed(cfg.seed, "segment", k))
        rng = torch_generator(seg_cfg.seed, "decode")
        tokens, _, _ = generator.generate_base(label, seg_cfg, rng, t_target)
        if len(tokens) < half:
            raise ValueError(
                f"segment {k} has {len(tokens)} tokens but the transition window needs "
                f"{half}; request a longer t_target"
            )
        seg_tokens.append(tokens)
        seg_grids.append(generator.refine_residuals(tokens, label, seg_cfg))

    transitions: list[np.ndarray] = []
    for k in range(len(seg_tokens) - 1):
        next_label = script.entries[k + 1][0]
        window = seg_tokens[k][-half:] + [0] * script.t_trans + seg_tokens[k + 1][:half]
        t_w = len(window)
        layout = SequenceLayout(t_w)
        masked = tuple(range(half + 1, half + script.t_trans + 1))
        unmasked = tuple(sorted({0, layout.end_pos} | (set(layout.motion_positions) - set(masked))))
        rng = torch_generator(cfg.seed, "transition", k)
        cond_label = next_label
        filled, _, _ = generator.sequential_repredict(
            window, cond_label, unmasked, masked, cfg.cfg_s2, cfg.temperature_2, rng, cfg.top_k
        )
        trans_base = filled[half : half + script.t_trans]

        # Residual rows for the transition come from refining the window and
        # keeping only the transition columns; boundary columns keep their
        # segment grids.
        window_grid = np.zeros((seg_grids[0].shape[0], t_w), dtype=np.int64)
        window_grid[0] = np.asarray(filled, dtype=np.int64)
        window_grid[:, :half] = seg_grids[k][:, -half:]
        window_grid[:, half + script.t_trans :] = seg_grids[k + 1][:, :half]
        window_grid[0, half : half + script.t_trans] = trans_base
        window_grid = _refine_masked_columns(
            generator, window_grid, cond_label, masked, cfg
        )
        transitions.append(window_grid[:, half : half + script.t_trans])

    pieces = []
    for k, grid in enumerate(seg_grids):
        pieces.append(grid)
        if k < len(transitions):
            pieces.append(transitions[k])
    full_grid = np.concatenate(pieces, axis=1)
    expected = sum(len(s) for s in seg_tokens) + (len(seg_tokens) - 1) * script.t_trans
    assert full_grid.shape[1] == expected, "stitched length mismatch"
    return generator.frames_from_grid(full_grid), full_grid
