"""Cascaded decoding: autoregressive first pass with implicit length
prediction, bidirectional refinement passes over low-confidence tokens,
length-restricted generation with the end marker anchored as a condition,
and greedy residual-layer refinement down to frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import FrameMatrix, NormStats, denormalize
from .masks import build_causal_mask, lowest_confidence_positions, refinement_mask, SequenceLayout
from .rng import torch_generator
from .tokenizer import MotionTokenizer, rvq_decode
from .transformer import MotionTransformer, RefinementTransformer, logits_cfg

DECODE_PRESETS = {
    "toy": (2.0, 2.0, 2.0),
    "humanml3d-paper": (4.0, 3.0, 6.0),
    "kit-paper": (2.0, 2.0, 6.0),
}


@dataclass
class DecodeConfig:
    cfg_s1: float = 2.0  # guidance scale, autoregressive pass
    cfg_s2: float = 2.0  # guidance scale, refinement passes
    cfg_refine: float = 2.0  # guidance scale, residual-layer refinement
    temperature_1: float = 1.0
    temperature_2: float = 1.0
    strategy: str = "every_other"
    conf_threshold: float = 0.5
    n_iterations: int = 2
    t_max: int = 50
    top_k: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.cfg_s1, self.cfg_s2, self.cfg_refine) < 0:
            raise ValueError("guidance scales must be >= 0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.n_iterations not in (1, 2, 3):
            raise ValueError("n_iterations must be 1, 2 or 3")

    @classmethod
    def preset(cls, name: str, **overrides) -> "DecodeConfig":
        if name not in DECODE_PRESETS:
            raise ValueError(f"unknown decode preset {name!r}; known: {sorted(DECODE_PRESETS)}")
        s1, s2, sr = DECODE_PRESETS[name]
        return cls(cfg_s1=s1, cfg_s2=s2, cfg_refine=sr, **overrides)

    @classmethod
    def from_dict(cls, raw: dict) -> "DecodeConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown DecodeConfig keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path: str | Path) -> "DecodeConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RefinePass:
    masked: list[int]
    tokens_after: list[int]
    confidences_after: list[float]


@dataclass
class DecodeTrace:
    iter1_tokens: list[int]
    confidences: list[float]
    predicted_t: int
    cap_hit: bool
    end_suppressed: int
    requested_t: int | None = None
    end_prob_max: float | None = None
    passes: list[RefinePass] = field(default_factory=list)
    grid: list[list[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class MissingArtifact(FileNotFoundError):
    """A required checkpoint or metadata file is absent."""


def _apply_top_k(logits: torch.Tensor, k: int | None) -> torch.Tensor:
    if k is None or k >= logits.shape[-1]:
        return logits
    kth = torch.topk(logits, k, dim=-1).values[..., -1:]
    return logits.masked_fill(logits < kth, float("-inf"))


class MotionGenerator:
    """Frozen model bundle exposing the decoding, refinement and editing core."""

    def __init__(
        self,
        tokenizer: MotionTokenizer,
        transformer: MotionTransformer,
        refiner: RefinementTransformer | None,
        stats: NormStats,
        labels: list[str],
        fps: int = 20,
    ) -> None:
        self.tokenizer = tokenizer
        self.transformer = transformer
        self.refiner = refiner
        self.stats = stats
        self.labels = labels
        self.fps = fps
        self.tokenizer.eval()
        self.transformer.eval()
        if self.refiner is not None:
            self.refiner.eval()

    @property
    def end_id(self) -> int:
        return self.transformer.end_id

    @property
    def n_codes(self) -> int:
        return self.transformer.config.n_codes

    @classmethod
    def load(cls, ckpt_dir: str | Path) -> "MotionGenerator":
        ckpt_dir = Path(ckpt_dir)
        needed = {
            "tokenizer": ckpt_dir / "tokenizer.ckpt",
            "transformer": ckpt_dir / "transformer.ckpt",
            "norm stats": ckpt_dir / "norm_stats.json",
            "label vocabulary": ckpt_dir / "labels.json",
        }
        for kind, path in needed.items():
            if not path.exists():
                raise MissingArtifact(f"missing {kind} artifact: {path}")
        tokenizer = MotionTokenizer.load(needed["tokenizer"])
        transformer = MotionTransformer.load(needed["transformer"])
        refiner_path = ckpt_dir / "refiner.ckpt"
        refiner = None
        if tokenizer.config.n_quantizers > 1:
            if not refiner_path.exists():
                raise MissingArtifact(f"missing refiner artifact: {refiner_path}")
            refiner = RefinementTransformer.load(refiner_path)
        stats = NormStats.from_json(needed["norm stats"])
        meta = json.loads(needed["label vocabulary"].read_text())
        return cls(tokenizer, transformer, refiner, stats, meta["labels"], fps=meta.get("fps", 20))

    # -- guided forward helpers ---------------------------------------------

    def _guided_row_batch(
        self, tokens: torch.Tensor, label: torch.Tensor, mask: torch.Tensor, row: int, scale: float
    ) -> torch.Tensor:
        """Fused conditional/unconditional forward; returns guided logits at one row."""
        b = tokens.shape[0]
        doubled = torch.cat([tokens, tokens], dim=0)
        labels = torch.cat([label, label], dim=0)
        null = torch.cat(
            [torch.zeros(b, dtype=torch.bool), torch.ones(b, dtype=torch.bool)], dim=0
        )
        with torch.no_grad():
            logits = self.transformer.forward_main(doubled, labels, null, mask)
        row_logits = logits[:, row, :]
        return logits_cfg(row_logits[:b], row_logits[b:], scale)

    # -- iteration 1: autoregressive with implicit length --------------------

    def decode_iter1_batch(
        self, labels: Sequence[int], cfg: DecodeConfig, rng: torch.Generator
    ) -> list[tuple[list[int], list[float], int, bool, int]]:
        """Batched left-to-right sampling under the unidirectional mask.

        Returns per sample: (tokens, confidences, t, cap_hit, end_suppressed).
        """
        b = len(labels)
        label_t = torch.as_tensor(labels, dtype=torch.long)
        buf = torch.zeros(b, cfg.t_max, dtype=torch.long)
        conf = torch.zeros(b, cfg.t_max)
        t_out = torch.full((b,), -1, dtype=torch.long)
        suppressed = torch.zeros(b, dtype=torch.long)
        alive = torch.ones(b, dtype=torch.bool)
        for p in range(1, cfg.t_max + 1):
            mask = build_causal_mask(p + 1, ())
            guided = self._guided_row_batch(buf[:, :p], label_t, mask, p - 1, cfg.cfg_s1)
            if p == 1:
                suppressed += (guided.argmax(dim=-1) == self.end_id).long()
                guided[:, self.end_id] = float("-inf")
            guided = _apply_top_k(guided, cfg.top_k)
            probs = F.softmax(guided / cfg.temperature_1, dim=-1)
            nxt = torch.multinomial(probs, 1, generator=rng).squeeze(1)
            picked = probs.gather(1, nxt[:, None]).squeeze(1)
            ended = alive & (nxt == self.end_id)
            t_out[ended] = p - 1
            writing = alive & ~ended
            buf[writing, p - 1] = nxt[writing]
            conf[writing, p - 1] = picked[writing]
            alive = alive & ~ended
            if not alive.any():
                break
        cap_hit = alive.clone()
        t_out[alive] = cfg.t_max
        out = []
        for i in range(b):
            t_i = int(t_out[i])
            out.append(
                (
                    buf[i, :t_i].tolist(),
                    conf[i, :t_i].tolist(),
                    t_i,
                    bool(cap_hit[i]),
                    int(suppressed[i]),
                )
            )
        return out

    def decode_iter1(
        self, label: int, cfg: DecodeConfig, rng: torch.Generator
    ) -> tuple[list[int], list[float], int, bool, int]:
        return self.decode_iter1_batch([label], cfg, rng)[0]

    # -- sequential re-prediction core (refinement / restriction / editing) --

    def sequential_repredict(
        self,
        tokens: Sequence[int],
        label: int,
        unmasked: Sequence[int],
        positions: Sequence[int],
        scale: float,
        temperature: float,
        rng: torch.Generator,
        top_k: int | None = None,
    ) -> tuple[list[int], list[float], float]:
        """Re-predict the given motion positions left to right with the end
        marker anchored at t+1 and excluded from sampling.

        Inputs at positions not yet re-predicted keep their given tokens;
        newly written tokens become visible to later masked queries through
        the causal clause. Returns (tokens, confidences at re-predicted
        positions in ascending order, max end-marker probability observed).
        """
        t = len(tokens)
        layout = SequenceLayout(t)
        buf = torch.tensor(list(tokens) + [self.end_id], dtype=torch.long)[None, :]
        label_t = torch.tensor([label], dtype=torch.long)
        mask = build_causal_mask(layout.length, unmasked)
        confs: list[float] = []
        end_prob_max = 0.0
        for p in sorted(positions):
            if not 1 <= p <= t:
                raise ValueError(f"position {p} outside motion range [1, {t}]")
            guided = self._guided_row_batch(buf, label_t, mask, p - 1, scale)[0]
            guided[self.end_id] = float("-inf")
            guided = _apply_top_k(guided, top_k)
            probs = F.softmax(guided / temperature, dim=-1)
            end_prob_max = max(end_prob_max, float(probs[self.end_id]))
            nxt = int(torch.multinomial(probs, 1, generator=rng))
            confs.append(float(probs[nxt]))
            buf[0, p - 1] = nxt
        return buf[0, :t].tolist(), confs, end_prob_max

    def decode_iter2(
        self,
        tokens: Sequence[int],
        confidences: Sequence[float],
        label: int,
        cfg: DecodeConfig,
        rng: torch.Generator,
        fraction: float | None = None,
    ) -> tuple[list[int], list[float], list[int]]:
        """One bidirectional refinement pass; only masked positions may change.

        ``fraction`` overrides the configured strategy with a
        lowest-confidence fraction (used by the third iteration).
        """
        t = len(tokens)
        if fraction is not None:
            masked = lowest_confidence_positions(t, confidences, fraction)
            layout = SequenceLayout(t)
            unmasked = tuple(
                sorted({0, layout.end_pos} | (set(layout.motion_positions) - set(masked)))
            )
        else:
            unmasked, masked = refinement_mask(t, cfg.strategy, confidences, cfg.conf_threshold)
        if not masked:
            return list(tokens), list(confidences), []
        new_tokens, new_confs, _ = self.sequential_repredict(
            tokens, label, unmasked, masked, cfg.cfg_s2, cfg.temperature_2, rng, cfg.top_k
        )
        out_conf = list(confidences)
        for p, c in zip(sorted(masked), new_confs):
            out_conf[p - 1] = c
        changed = [p for p in range(1, t + 1) if p not in masked and new_tokens[p - 1] != tokens[p - 1]]
        assert not changed, f"refinement altered unmasked positions {changed}"
        return new_tokens, out_conf, list(masked)

    def decode_length_restricted(
        self, label: int, t_target: int, cfg: DecodeConfig, rng: torch.Generator
    ) -> tuple[list[int], list[float], float]:
        """Generate exactly t_target tokens with the end marker as an input
        condition; the end id is excluded from every sampling distribution."""
        if not 1 <= t_target <= cfg.t_max:
            raise ValueError(f"t_target must lie in [1, {cfg.t_max}], got {t_target}")
        unmasked = (0, t_target + 1)
        tokens, confs, end_prob_max = self.sequential_repredict(
            [0] * t_target,
            label,
            unmasked,
            list(range(1, t_target + 1)),
            cfg.cfg_s1,
            cfg.temperature_1,
            rng,
            cfg.top_k,
        )
        return tokens, confs, end_prob_max

    # -- residual refinement --------------------------------------------------

    def refine_residuals(
        self, base: Sequence[int], label: int, cfg: DecodeConfig
    ) -> np.ndarray:
        """Greedy per-layer prediction of residual token rows; row 0 is the base."""
        t = len(base)
        n_quantizers = self.tokenizer.config.n_quantizers
        grid = np.zeros((n_quantizers, t), dtype=np.int64)
        grid[0] = np.asarray(base, dtype=np.int64)
        if n_quantizers == 1:
            return grid
        assert self.refiner is not None, "residual stack requires a refiner checkpoint"
        label_t = torch.tensor([label, label], dtype=torch.long)
        null = torch.tensor([False, True])
        for v in range(1, n_quantizers):
            lower = torch.from_numpy(grid[:v])[None].expand(2, v, t).long()
            with torch.no_grad():
                logits = self.refiner.forward_refiner(lower, v, label_t, null)
            guided = logits_cfg(logits[0], logits[1], cfg.cfg_refine)
            grid[v] = guided.argmax(dim=-1).numpy()
        return grid

    # -- full pipeline ---------------------------------------------------------

    def generate_base(
        self, label: int, cfg: DecodeConfig, rng: torch.Generator, t_target: int | None = None
    ) -> tuple[list[int], list[float], DecodeTrace]:
        """Iteration-1 (or length-restricted) pass plus configured refinement passes."""
        if t_target is None:
            tokens, confs, t, cap_hit, suppressed = self.decode_iter1(label, cfg, rng)
            trace = DecodeTrace(
                iter1_tokens=list(tokens),
                confidences=list(confs),
                predicted_t=t,
                cap_hit=cap_hit,
                end_suppressed=suppressed,
            )
        else:
            tokens, confs, end_prob_max = self.decode_length_restricted(label, t_target, cfg, rng)
            trace = DecodeTrace(
                iter1_tokens=list(tokens),
                confidences=list(confs),
                predicted_t=t_target,
                cap_hit=False,
                end_suppressed=0,
                requested_t=t_target,
                end_prob_max=end_prob_max,
            )
        if cfg.n_iterations >= 2 and tokens:
            tokens, confs, masked = self.decode_iter2(tokens, confs, label, cfg, rng)
            trace.passes.append(RefinePass(list(masked), list(tokens), list(confs)))
        if cfg.n_iterations >= 3 and tokens:
            tokens, confs, masked = self.decode_iter2(
                tokens, confs, label, cfg, rng, fraction=1.0 / 3.0
            )
            trace.passes.append(RefinePass(list(masked), list(tokens), list(confs)))
        return tokens, confs, trace

    def frames_from_grid(self, grid: np.ndarray) -> FrameMatrix:
        latent = rvq_decode(torch.from_numpy(grid), self.tokenizer.stack)
        decoded = self.tokenizer.decode(latent).numpy()
        return denormalize(FrameMatrix(decoded, fps=self.fps), self.stats)

    def generate(
        self, label: int, cfg: DecodeConfig, t_target: int | None = None
    ) -> tuple[FrameMatrix, DecodeTrace]:
        """Full cascade: sample tokens, refine residual layers, decode frames."""
        if not 0 <= label < self.transformer.config.n_labels:
            raise ValueError(f"label {label} outside vocabulary [0, {self.transformer.config.n_labels})")
        rng = torch_generator(cfg.seed, "decode")
        tokens, _, trace = self.generate_base(label, cfg, rng, t_target)
        assert all(tok != self.end_id for tok in tokens), "end id leaked into motion tokens"
        grid = self.refine_residuals(tokens, label, cfg)
        trace.grid = grid.tolist()
        return self.frames_from_grid(grid), trace
