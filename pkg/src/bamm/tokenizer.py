"""Residual-VQ motion tokenizer.

A strided 1-d convolutional encoder maps a (tau, D) frame matrix to a
(tau/4, code_dim) latent sequence; a stack of quantizers encodes it as
discrete ids, each layer quantizing the residual left by the previous
one. Codebooks are maintained by EMA statistics (not gradients) with
periodic dead-code resets; the encoder/decoder train through the
quantizer via the straight-through estimator plus a commitment term.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DOWNSAMPLE, FrameMatrix
from .rng import derive_seed, torch_generator


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; training aborted."""


@dataclass
class TokenizerConfig:
    feature_dim: int = 12
    width: int = 96
    code_dim: int = 64
    codebook_size: int = 64  # K
    n_quantizers: int = 3  # V
    n_res_blocks: int = 2
    dropout: float = 0.0
    commit_beta: float = 0.25
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    dead_code_threshold: float = 1.0
    dead_code_interval: int = 50
    velocity_weight: float = 0.5

    def __post_init__(self) -> None:
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        if self.n_quantizers < 1:
            raise ValueError("n_quantizers must be >= 1")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")


def tokenizer_preset(name: str, feature_dim: int = 12) -> TokenizerConfig:
    if name == "toy":
        return TokenizerConfig(feature_dim=feature_dim)
    if name == "paper":
        return TokenizerConfig(
            feature_dim=feature_dim,
            width=512,
            code_dim=512,
            codebook_size=512,
            n_quantizers=6,
            dropout=0.2,
        )
    raise ValueError(f"unknown tokenizer preset {name!r}")


# ---------------------------------------------------------------------------
# Quantization


class Codebook:
    """One quantization layer: K code vectors plus EMA cluster statistics."""

    def __init__(
        self,
        n_codes: int,
        dim: int,
        rng: torch.Generator | None = None,
        codes: torch.Tensor | None = None,
    ) -> None:
        if n_codes < 2:
            raise ValueError("a codebook needs at least 2 codes")
        if codes is None:
            codes = torch.randn(n_codes, dim, generator=rng) * 0.1
        self.codes = codes.float()
        self.ema_cluster_size = torch.ones(n_codes)
        self.ema_embed_sum = self.codes.clone()

    @property
    def n_codes(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def clone(self) -> "Codebook":
        out = Codebook.__new__(Codebook)
        out.codes = self.codes.clone()
        out.ema_cluster_size = self.ema_cluster_size.clone()
        out.ema_embed_sum = self.ema_embed_sum.clone()
        return out


class RvqStack:
    """Ordered quantizer layers; layer 0 is the base sequence."""

    def __init__(self, layers: Sequence[Codebook]) -> None:
        if not layers:
            raise ValueError("RvqStack needs at least one layer")
        dims = {cb.dim for cb in layers}
        sizes = {cb.n_codes for cb in layers}
        if len(dims) > 1 or len(sizes) > 1:
            raise ValueError("all layers must share K and code dim")
        self.layers = list(layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_codes(self) -> int:
        return self.layers[0].n_codes

    @property
    def dim(self) -> int:
        return self.layers[0].dim


def quantize_nearest(z: torch.Tensor, cb: Codebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest code by squared Euclidean distance; ties resolve to the smallest index.

    Accepts a single (d,) vector or a batch (n, d); returns (ids, codes)
    with matching leading shape.
    """
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.ndim != 2 or zb.shape[1] != cb.dim:
        raise ValueError(f"expected vectors of dim {cb.dim}, got shape {tuple(z.shape)}")
    if not torch.isfinite(zb).all():
        raise ValueError("non-finite input to quantize_nearest")
    codes = cb.codes.to(zb.dtype)
    d2 = (
        zb.pow(2).sum(dim=1, keepdim=True)
        - 2.0 * zb @ codes.T
        + codes.pow(2).sum(dim=1)[None, :]
    )
    ids = torch.argmin(d2, dim=1)
    picked = codes[ids]
    if single:
        return ids[0], picked[0]
    return ids, picked


def rvq_encode(z: torch.Tensor, stack: RvqStack) -> tuple[torch.Tensor, torch.Tensor]:
    """Greedy residual quantization of a (t, d) latent sequence.

    Returns (ids, residual_norms): ids is (V, t); residual_norms[v] is the
    mean (over positions) L2 norm of the residual remaining after layers
    0..v have been subtracted.
    """
    if z.ndim != 2 or z.shape[1] != stack.dim:
        raise ValueError(f"expected (t, {stack.dim}) latents, got shape {tuple(z.shape)}")
    residual = z
    rows, norms = [], []
    for cb in stack.layers:
        ids, codes = quantize_nearest(residual, cb)
        residual = residual - codes
        rows.append(ids)
        norms.append(residual.norm(dim=1).mean())
    return torch.stack(rows), torch.stack(norms)


def rvq_decode(ids: torch.Tensor, stack: RvqStack, upto_layer: int | None = None) -> torch.Tensor:
    """Sum of selected code vectors over layers [0, upto_layer)."""
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.ndim != 2:
        raise ValueError("token grid must be (V, t)")
    upto = stack.n_layers if upto_layer is None else upto_layer
    if not 1 <= upto <= stack.n_layers or upto > ids.shape[0]:
        raise ValueError(f"upto_layer {upto} out of range for grid with {ids.shape[0]} rows")
    if (ids < 0).any() or (ids >= stack.n_codes).any():
        raise ValueError(f"token id out of range [0, {stack.n_codes})")
    out = torch.zeros(ids.shape[1], stack.dim)
    for v in range(upto):
        out = out + stack.layers[v].codes[ids[v]]
    return out


def commitment_loss(
    z: torch.Tensor, codes: torch.Tensor, beta: float, reduction: str = "mean"
) -> torch.Tensor:
    """beta * ||z - sg(codes)||^2; gradient w.r.t. z is 2*beta*(z - codes) under sum."""
    sq = (z - codes.detach()).pow(2)
    return beta * (sq.sum() if reduction == "sum" else sq.mean())


def ema_update(
    cb: Codebook,
    ids: torch.Tensor,
    vectors: torch.Tensor,
    decay: float,
    eps: float = 1e-5,
) -> Codebook:
    """EMA codebook maintenance; ``eps`` is Laplace smoothing on cluster sizes.

    cluster' = decay * cluster + (1 - decay) * count
    sum'     = decay * sum + (1 - decay) * assigned-vector sum
    code'    = sum' / smoothed(cluster')
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    k = cb.n_codes
    counts = torch.bincount(ids, minlength=k).to(vectors.dtype)
    sums = torch.zeros(k, cb.dim, dtype=vectors.dtype)
    sums.index_add_(0, ids, vectors)
    out = cb.clone()
    out.ema_cluster_size = decay * cb.ema_cluster_size.to(vectors.dtype) + (1 - decay) * counts
    out.ema_embed_sum = decay * cb.ema_embed_sum.to(vectors.dtype) + (1 - decay) * sums
    if eps > 0:
        total = out.ema_cluster_size.sum()
        smoothed = (out.ema_cluster_size + eps) / (total + k * eps) * total
    else:
        smoothed = out.ema_cluster_size
    out.codes = out.ema_embed_sum / smoothed.clamp_min(1e-12)[:, None]
    return out


def reset_dead_codes(
    cb: Codebook,
    encoder_outputs: torch.Tensor,
    threshold: float,
    rng: torch.Generator | None = None,
) -> tuple[Codebook, int]:
    """Re-initialize codes whose EMA cluster size fell below ``threshold``.

    Dead codes are replaced by encoder outputs sampled from the batch
    (with replacement when the batch is smaller than the reset count).
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    dead = cb.ema_cluster_size < threshold
    n_reset = int(dead.sum())
    if n_reset == 0:
        return cb, 0
    n = encoder_outputs.shape[0]
    if n == 0:
        raise ValueError("cannot reset dead codes from an empty batch")
    if n >= n_reset:
        pick = torch.randperm(n, generator=rng)[:n_reset]
    else:
        pick = torch.randint(n, (n_reset,), generator=rng)
    out = cb.clone()
    fresh = encoder_outputs[pick].float()
    out.codes[dead] = fresh
    out.ema_cluster_size[dead] = 1.0
    out.ema_embed_sum[dead] = fresh
    return out, n_reset


# ---------------------------------------------------------------------------
# Encoder / decoder networks


class ResBlock1d(nn.Module):
    def __init__(self, width: int, dilation: int, dropout: float) -> None:
        super().__init__()
        self.conv1 = nn.Conv1d(width, width, 3, padding=dilation, dilation=dilation)
        self.conv2 = nn.Conv1d(width, width, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.relu(x))
        h = self.conv2(self.drop(F.relu(h)))
        return x + h


class MotionEncoder(nn.Module):
    """(B, tau, D) -> (B, tau/4, code_dim): two stride-2 stages."""

    def __init__(self, cfg: TokenizerConfig) -> None:
        super().__init__()
        layers: list[nn.Module] = [nn.Conv1d(cfg.feature_dim, cfg.width, 3, padding=1), nn.ReLU()]
        for _ in range(2):
            layers.append(nn.Conv1d(cfg.width, cfg.width, 4, stride=2, padding=1))
            layers.extend(
                ResBlock1d(cfg.width, 3**i, cfg.dropout) for i in range(cfg.n_res_blocks)
            )
        layers.append(nn.Conv1d(cfg.width, cfg.code_dim, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] % DOWNSAMPLE != 0:
            raise ValueError(f"frame count {x.shape[-2]} is not a multiple of {DOWNSAMPLE}")
        return self.net(x.transpose(-1, -2)).transpose(-1, -2)


class MotionDecoder(nn.Module):
    """(B, t, code_dim) -> (B, 4t, D): mirrored nearest-neighbor upsampling."""

    def __init__(self, cfg: TokenizerConfig) -> None:
        super().__init__()
        layers: list[nn.Module] = [nn.Conv1d(cfg.code_dim, cfg.width, 3, padding=1), nn.ReLU()]
        for _ in range(2):
            layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
            layers.append(nn.Conv1d(cfg.width, cfg.width, 3, padding=1))
            layers.extend(
                ResBlock1d(cfg.width, 3**i, cfg.dropout) for i in range(cfg.n_res_blocks)
            )
        layers.append(nn.Conv1d(cfg.width, cfg.feature_dim, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z.transpose(-1, -2)).transpose(-1, -2)


class MotionTokenizer:
    """Frozen-friendly bundle of encoder, decoder and quantizer stack."""

    def __init__(self, cfg: TokenizerConfig, seed: int = 0) -> None:
        self.config = cfg
        torch.manual_seed(derive_seed(seed, "tokenizer-init"))
        self.encoder = MotionEncoder(cfg)
        self.decoder = MotionDecoder(cfg)
        rng = torch_generator(seed, "tokenizer-codebooks")
        self.stack = RvqStack(
            [Codebook(cfg.codebook_size, cfg.code_dim, rng) for _ in range(cfg.n_quantizers)]
        )

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.decoder.parameters()

    def train(self) -> None:
        self.encoder.train()
        self.decoder.train()

    def eval(self) -> None:
        self.encoder.eval()
        self.decoder.eval()

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """(tau, D) normalized frames -> (tau/4, code_dim) latents."""
        with torch.no_grad():
            return self.encoder(frames[None])[0]

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """(t, code_dim) latents -> (4t, D) normalized frames."""
        if latent.shape[0] < 1:
            raise ValueError("latent sequence must have t >= 1")
        with torch.no_grad():
            return self.decoder(latent[None])[0]

    def tokenize(self, frames: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Normalized frames -> ((V, t) token grid, per-layer residual norms)."""
        return rvq_encode(self.encode(frames), self.stack)

    def detokenize(self, grid: torch.Tensor, upto_layer: int | None = None) -> torch.Tensor:
        return self.decode(rvq_decode(grid, self.stack, upto_layer))

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        tensors: dict[str, torch.Tensor] = {}
        for name, t in self.encoder.state_dict().items():
            tensors[f"encoder.{name}"] = t
        for name, t in self.decoder.state_dict().items():
            tensors[f"decoder.{name}"] = t
        for v, cb in enumerate(self.stack.layers):
            tensors[f"quantizer.{v}.codes"] = cb.codes
            tensors[f"quantizer.{v}.ema_cluster_size"] = cb.ema_cluster_size
            tensors[f"quantizer.{v}.ema_embed_sum"] = cb.ema_embed_sum
        save_checkpoint(path, {"kind": "tokenizer", "tokenizer": asdict(self.config)}, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "MotionTokenizer":
        config, tensors = load_checkpoint(path)
        cfg = TokenizerConfig(**config["tokenizer"])
        tok = cls(cfg)
        enc_state = {
            k[len("encoder."):]: torch.from_numpy(v)
            for k, v in tensors.items()
            if k.startswith("encoder.")
        }
        dec_state = {
            k[len("decoder."):]: torch.from_numpy(v)
            for k, v in tensors.items()
            if k.startswith("decoder.")
        }
        tok.encoder.load_state_dict(enc_state)
        tok.decoder.load_state_dict(dec_state)
        for v, cb in enumerate(tok.stack.layers):
            cb.codes = torch.from_numpy(tensors[f"quantizer.{v}.codes"]).clone()
            cb.ema_cluster_size = torch.from_numpy(tensors[f"quantizer.{v}.ema_cluster_size"]).clone()
            cb.ema_embed_sum = torch.from_numpy(tensors[f"quantizer.{v}.ema_embed_sum"]).clone()
        tok.eval()
        return tok


# ---------------------------------------------------------------------------
# Training


@dataclass
class TokenizerTrainConfig:
    steps: int = 2500
    batch_size: int = 32
    window: int = 64  # crop length in frames
    lr: float = 2e-4
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 100


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor, velocity_weight: float) -> torch.Tensor:
    """Smooth-L1 on features plus a weighted first-difference (velocity) term."""
    loss = F.smooth_l1_loss(pred, target)
    if velocity_weight > 0:
        loss = loss + velocity_weight * F.smooth_l1_loss(
            pred[..., 1:, :] - pred[..., :-1, :], target[..., 1:, :] - target[..., :-1, :]
        )
    return loss


def vq_train_step(
    batch: torch.Tensor,
    tokenizer: MotionTokenizer,
    optimizer: torch.optim.Optimizer,
    step: int,
    rng: torch.Generator,
) -> dict[str, float]:
    """One optimization step: straight-through reconstruction + commitment,
    EMA codebook updates, periodic dead-code reset."""
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    cfg = tokenizer.config
    z = tokenizer.encoder(batch)
    flat = z.reshape(-1, cfg.code_dim)

    quantized = torch.zeros_like(flat)
    commit = flat.new_zeros(())
    residual = flat
    layer_inputs: list[torch.Tensor] = []
    layer_ids: list[torch.Tensor] = []
    for cb in tokenizer.stack.layers:
        layer_inputs.append(residual.detach())
        ids, codes = quantize_nearest(residual.detach(), cb)
        commit = commit + commitment_loss(residual, codes, 1.0)
        quantized = quantized + codes
        residual = residual - codes
        layer_ids.append(ids)
    commit = cfg.commit_beta * commit

    straight_through = flat + (quantized - flat).detach()
    recon = tokenizer.decoder(straight_through.view_as(z))
    recon_loss = reconstruction_loss(recon, batch, cfg.velocity_weight)
    total = recon_loss + commit
    if not torch.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss at step {step}: recon={recon_loss.item()}, commit={commit.item()}"
        )

    optimizer.zero_grad()
    total.backward()
    torch.nn.utils.clip_grad_norm_(list(tokenizer.parameters()), 1.0)
    optimizer.step()

    with torch.no_grad():
        for v, cb in enumerate(tokenizer.stack.layers):
            updated = ema_update(cb, layer_ids[v], layer_inputs[v], cfg.ema_decay, cfg.ema_eps)
            if cfg.dead_code_interval > 0 and step > 0 and step % cfg.dead_code_interval == 0:
                updated, _ = reset_dead_codes(
                    updated, layer_inputs[v], cfg.dead_code_threshold, rng
                )
            tokenizer.stack.layers[v] = updated

    return {"recon": recon_loss.item(), "commit": commit.item(), "total": total.item()}


def _crop_or_pad(frames: np.ndarray, window: int, rng: torch.Generator) -> np.ndarray:
    n = frames.shape[0]
    if n == window:
        return frames
    if n > window:
        start = int(torch.randint(n - window + 1, (), generator=rng))
        return frames[start : start + window]
    pad = np.repeat(frames[-1:], window - n, axis=0)
    return np.concatenate([frames, pad], axis=0)


def train_tokenizer(
    normalized_frames: Sequence[np.ndarray],
    tokenizer: MotionTokenizer,
    cfg: TokenizerTrainConfig,
) -> list[dict]:
    """Train on random fixed-length crops of pre-normalized frame arrays."""
    if not normalized_frames:
        raise ValueError("empty dataset")
    tokenizer.train()
    optimizer = torch.optim.AdamW(
        list(tokenizer.parameters()), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    history: list[dict] = []
    for step in range(cfg.steps):
        g = torch_generator(cfg.seed, "tokenizer-step", step)
        torch.manual_seed(derive_seed(cfg.seed, "tokenizer-dropout", step))
        idx = torch.randint(len(normalized_frames), (cfg.batch_size,), generator=g)
        batch = torch.from_numpy(
            np.stack([_crop_or_pad(normalized_frames[int(i)], cfg.window, g) for i in idx])
        ).float()
        losses = vq_train_step(batch, tokenizer, optimizer, step, g)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            history.append({"step": step, **losses})
    tokenizer.eval()
    return history
