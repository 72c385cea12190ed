"""Masked self-attention transformer over motion tokens, plus the residual
refinement transformer that predicts higher quantizer layers.

Sequence layout for the main model: position 0 holds the condition
embedding (label or the learned null vector), positions 1..t the motion
token embeddings, position t+1 the end-marker embedding. The output at
row p scores the token at position p+1, so the condition row predicts the
first motion token and row t predicts the end marker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .rng import derive_seed


@dataclass
class TransformerConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    n_codes: int = 64  # K; the end marker uses id K
    n_labels: int = 5
    max_len: int = 52
    dropout: float = 0.1
    refiner_n_quantizers: int = 3  # V; refiner predicts layers 1..V-1
    refiner_use_condition: bool = True

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def end_id(self) -> int:
        return self.n_codes


def transformer_preset(name: str, n_codes: int, n_labels: int, n_quantizers: int) -> TransformerConfig:
    if name == "toy":
        return TransformerConfig(
            n_codes=n_codes, n_labels=n_labels, refiner_n_quantizers=n_quantizers
        )
    if name == "paper":
        return TransformerConfig(
            n_layers=6,
            n_heads=6,
            d_model=384,
            n_codes=n_codes,
            n_labels=n_labels,
            refiner_n_quantizers=n_quantizers,
        )
    raise ValueError(f"unknown transformer preset {name!r}")


def masked_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """softmax(Q K^T / sqrt(d_k) + mask) V with an additive {0, -inf} bias.

    Shapes (..., L, d_k); the mask broadcasts against the (..., L, L)
    score matrix. Returns (context, attention weights).
    """
    if not (torch.isfinite(q).all() and torch.isfinite(k).all() and torch.isfinite(v).all()):
        raise ValueError("non-finite attention inputs")
    d_k = q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(d_k) + mask
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


def logits_cfg(cond: torch.Tensor, uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Guided logits: (1 + s) * conditional - s * unconditional."""
    if cond.shape != uncond.shape:
        raise ValueError(f"shape mismatch {tuple(cond.shape)} vs {tuple(uncond.shape)}")
    return (1.0 + scale) * cond - scale * uncond


class SelfAttention(nn.Module):
    def __init__(self, cfg: TransformerConfig) -> None:
        super().__init__()
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, length, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        split = lambda t: t.view(b, length, self.n_heads, d // self.n_heads).transpose(1, 2)
        ctx, _ = masked_attention(split(q), split(k), split(v), mask)
        ctx = ctx.transpose(1, 2).reshape(b, length, d)
        return self.drop(self.proj(ctx))


class Block(nn.Module):
    def __init__(self, cfg: TransformerConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, 4 * cfg.d_model),
            nn.GELU(),
            nn.Linear(4 * cfg.d_model, cfg.d_model),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


class ConditionEmbedding(nn.Module):
    """Label-embedding table plus a trained null vector for unconditional passes."""

    def __init__(self, n_labels: int, d_model: int) -> None:
        super().__init__()
        self.table = nn.Embedding(n_labels, d_model)
        self.null_vector = nn.Parameter(torch.randn(d_model) * 0.02)

    def forward(self, labels: torch.Tensor, null_mask: torch.Tensor) -> torch.Tensor:
        cond = self.table(labels)
        return torch.where(null_mask[:, None], self.null_vector[None, :], cond)


class MotionTransformer(nn.Module):
    """Predicts next-token distributions over K code ids plus the end marker."""

    def __init__(self, cfg: TransformerConfig, seed: int = 0) -> None:
        torch.manual_seed(derive_seed(seed, "main-transformer-init"))
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.n_codes + 1, cfg.d_model)
        self.cond = ConditionEmbedding(cfg.n_labels, cfg.d_model)
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_len, cfg.d_model) * 0.02)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.n_codes + 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def end_id(self) -> int:
        return self.config.end_id

    def embed_inputs(
        self, tokens: torch.Tensor, labels: torch.Tensor, null_mask: torch.Tensor
    ) -> torch.Tensor:
        """Token ids for positions 1..L-1 -> embeddings for positions 0..L-1."""
        b, lm = tokens.shape
        if lm + 1 > self.config.max_len:
            raise ValueError(f"sequence length {lm + 1} exceeds max_len {self.config.max_len}")
        if (tokens < 0).any() or (tokens > self.config.n_codes).any():
            raise ValueError("token id out of vocabulary")
        x0 = self.cond(labels, null_mask)[:, None, :]
        x = torch.cat([x0, self.tok_emb(tokens)], dim=1)
        return x + self.pos_emb[: lm + 1]

    def forward_from_embeddings(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.ln_f(x))

    def forward_main(
        self,
        tokens: torch.Tensor,
        labels: torch.Tensor,
        null_mask: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        """(B, L-1) ids, labels, null flags, (L, L) or (B, 1, L, L) mask -> (B, L, K+1) logits."""
        return self.forward_from_embeddings(self.embed_inputs(tokens, labels, null_mask), mask)

    def save(self, path: str | Path, extra_config: dict | None = None) -> None:
        config = {"kind": "transformer", "transformer": asdict(self.config)}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, config, {k: v for k, v in self.state_dict().items()})

    @classmethod
    def load(cls, path: str | Path) -> "MotionTransformer":
        config, tensors = load_checkpoint(path)
        model = cls(TransformerConfig(**config["transformer"]))
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        model.eval()
        return model


class RefinementTransformer(nn.Module):
    """Full-attention transformer predicting residual quantizer layers.

    Inputs at each motion position are the summed code embeddings of the
    layers below the target layer, plus a learned embedding of the target
    layer index; the condition token is included by default.
    """

    def __init__(self, cfg: TransformerConfig, seed: int = 0) -> None:
        torch.manual_seed(derive_seed(seed, "refiner-init"))
        super().__init__()
        self.config = cfg
        self.code_emb = nn.Embedding(cfg.n_codes, cfg.d_model)
        self.layer_emb = nn.Embedding(cfg.refiner_n_quantizers, cfg.d_model)
        self.cond = ConditionEmbedding(cfg.n_labels, cfg.d_model)
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_len, cfg.d_model) * 0.02)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.n_codes)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward_refiner(
        self,
        lower_ids: torch.Tensor,
        target_layer: int,
        labels: torch.Tensor,
        null_mask: torch.Tensor,
        key_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """(B, v, t) ids of layers 0..v-1 -> (B, t, K) logits for layer v.

        ``key_padding`` is an optional (B, t) bool mask marking padded
        motion positions to exclude from attention.
        """
        if target_layer < 1 or target_layer >= self.config.refiner_n_quantizers:
            raise ValueError(
                f"target_layer must lie in [1, {self.config.refiner_n_quantizers}), got {target_layer}"
            )
        b, v, t = lower_ids.shape
        if v != target_layer:
            raise ValueError(f"expected {target_layer} input layers, got {v}")
        if t + 1 > self.config.max_len:
            raise ValueError(f"sequence length {t + 1} exceeds max_len {self.config.max_len}")
        motion = self.code_emb(lower_ids).sum(dim=1)
        motion = motion + self.layer_emb(torch.tensor(target_layer))[None, None, :]
        if self.config.refiner_use_condition:
            x0 = self.cond(labels, null_mask)[:, None, :]
        else:
            x0 = self.cond.null_vector[None, None, :].expand(b, 1, -1)
        x = torch.cat([x0, motion], dim=1) + self.pos_emb[: t + 1]
        mask = torch.zeros(t + 1, t + 1)
        if key_padding is not None:
            bias = torch.zeros(b, 1, t + 1, t + 1)
            bias[:, 0, :, 1:] = torch.where(key_padding[:, None, :], float("-inf"), 0.0)
            mask = mask + bias
        logits = self.forward_from_embeddings(x, mask)
        return logits[:, 1:, :]

    def forward_from_embeddings(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.ln_f(x))

    def save(self, path: str | Path, extra_config: dict | None = None) -> None:
        config = {"kind": "refiner", "transformer": asdict(self.config)}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, config, {k: v for k, v in self.state_dict().items()})

    @classmethod
    def load(cls, path: str | Path) -> "RefinementTransformer":
        config, tensors = load_checkpoint(path)
        model = cls(TransformerConfig(**config["transformer"]))
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        model.eval()
        return model
