"""Hybrid attention-masking training for the main transformer, and residual
layer prediction training for the refinement transformer.

Each example is trained either under the unidirectional mask (pure
left-to-right, with the end marker supervised at the final row) or under a
bidirectional mask where 50-100% of motion positions are masked and only
masked targets contribute loss; masked input positions are corrupted with
random tokens, and conditions are dropped for classifier-free guidance.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .masks import SequenceLayout, TrainingMask, build_causal_mask, sample_training_mask
from .rng import derive_seed, torch_generator
from .tokenizer import MotionTokenizer, TrainingDiverged
from .transformer import MotionTransformer, RefinementTransformer
from .data import MotionRecord, NormStats, normalize, pad_to_stride


@dataclass
class TrainConfig:
    lam: float = 0.5  # probability of the unidirectional mode
    ratio_range: tuple[float, float] = (0.5, 1.0)
    corrupt_prob: float = 0.5
    cond_drop_prob: float = 0.1
    lr: float = 2e-4
    lr_milestones: tuple[int, ...] = (5000, 8000)
    lr_factor: float = 0.1
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    batch_size: int = 32
    refiner_batch_size: int = 32
    total_steps: int = 10000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 2500
    preset: str = "toy"

    def __post_init__(self) -> None:
        for name in ("lam", "corrupt_prob", "cond_drop_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if list(self.lr_milestones) != sorted(self.lr_milestones):
            raise ValueError("lr_milestones must be increasing")

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        raw = dict(raw)
        for key in ("ratio_range", "lr_milestones"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_preset(name: str) -> TrainConfig:
    if name == "toy":
        return TrainConfig()
    if name == "paper":
        return TrainConfig(
            lr_milestones=(50000, 80000),
            total_steps=100000,
            batch_size=512,
            refiner_batch_size=64,
            preset="paper",
        )
    raise ValueError(f"unknown train preset {name!r}")


@dataclass
class TokenizedSample:
    label: int
    grid: np.ndarray  # (V, t) int64 base + residual token ids


def tokenize_dataset(
    records: Sequence[MotionRecord],
    tokenizer: MotionTokenizer,
    stats: NormStats,
    t_max: int = 50,
) -> list[TokenizedSample]:
    """Freeze the tokenizer and convert records to token grids (cropped to t_max)."""
    tokenizer.eval()
    samples = []
    for rec in records:
        frames = pad_to_stride(normalize(rec.motion, stats)).frames
        grid, _ = tokenizer.tokenize(torch.from_numpy(frames))
        grid = grid[:, :t_max]
        samples.append(TokenizedSample(label=rec.label, grid=grid.numpy().astype(np.int64)))
    return samples


# ---------------------------------------------------------------------------
# Batch corruption / condition dropout


def corrupt_inputs(
    tokens: torch.Tensor,
    masked_positions: Sequence[int],
    corrupt_prob: float,
    n_codes: int,
    rng: torch.Generator,
) -> torch.Tensor:
    """Replace masked motion inputs with uniform random code ids w.p. corrupt_prob.

    ``tokens`` holds ids for positions 1..t+1 (motion plus the end marker);
    unmasked positions, the condition, and the end marker are never altered.
    """
    if not 0.0 <= corrupt_prob <= 1.0:
        raise ValueError(f"corrupt_prob must lie in [0, 1], got {corrupt_prob}")
    out = tokens.clone()
    if not masked_positions or corrupt_prob == 0.0:
        return out
    pos = torch.as_tensor(masked_positions, dtype=torch.long)
    flip = torch.rand(len(pos), generator=rng) < corrupt_prob
    if flip.any():
        replacements = torch.randint(n_codes, (int(flip.sum()),), generator=rng)
        out[pos[flip] - 1] = replacements
    return out


def drop_condition(n: int, p_drop: float, rng: torch.Generator) -> torch.Tensor:
    """Boolean mask selecting samples whose condition is replaced by the null vector."""
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError(f"p_drop must lie in [0, 1], got {p_drop}")
    return torch.rand(n, generator=rng) < p_drop


# ---------------------------------------------------------------------------
# Hybrid loss


@dataclass
class LossReport:
    total: torch.Tensor
    uni_component: torch.Tensor | None
    bi_component: torch.Tensor | None
    n_uni_samples: int
    n_bi_samples: int
    tokens_uni: int
    tokens_bi: int


def hybrid_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    lengths: Sequence[int],
    training_masks: Sequence[TrainingMask],
    lam: float,
) -> LossReport:
    """Negative log-likelihood under the per-sample masking mode.

    Unidirectional samples take cross-entropy at rows 0..t (all motion
    targets plus the end marker). Bidirectional samples take it only at
    rows whose target position is masked, which keeps targets that are
    directly visible through the unmasked set out of the loss. Per-sample
    losses are summed over contributing rows; the batch loss is the
    lam-weighted combination of per-mode means (or the present mode's mean
    when only one mode occurs).
    """
    log_probs = F.log_softmax(logits, dim=-1)
    uni_losses: list[torch.Tensor] = []
    bi_losses: list[torch.Tensor] = []
    tokens_uni = tokens_bi = 0
    for i, (t_i, tm) in enumerate(zip(lengths, training_masks)):
        if tm.mode == "uni":
            rows = list(range(t_i + 1))  # targets are positions 1..t+1
        else:
            unmasked = set(tm.unmasked)
            assert all(p not in unmasked for p in tm.masked), "masked target inside unmasked set"
            rows = [p - 1 for p in tm.masked]
            if not rows:
                warnings.warn(f"sample {i}: empty masked set in bi mode, skipped")
                continue
        row_idx = torch.as_tensor(rows, dtype=torch.long)
        nll = -log_probs[i, row_idx, targets[i, row_idx]].sum()
        if tm.mode == "uni":
            uni_losses.append(nll)
            tokens_uni += len(rows)
        else:
            bi_losses.append(nll)
            tokens_bi += len(rows)

    uni = torch.stack(uni_losses).mean() if uni_losses else None
    bi = torch.stack(bi_losses).mean() if bi_losses else None
    if uni is not None and bi is not None:
        total = lam * uni + (1.0 - lam) * bi
    elif uni is not None:
        total = uni
    elif bi is not None:
        total = bi
    else:
        raise ValueError("no loss-contributing samples in batch")
    return LossReport(
        total=total,
        uni_component=uni,
        bi_component=bi,
        n_uni_samples=len(uni_losses),
        n_bi_samples=len(bi_losses),
        tokens_uni=tokens_uni,
        tokens_bi=tokens_bi,
    )


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass
class MainBatch:
    inputs: torch.Tensor  # (B, L-1) possibly corrupted ids for positions 1..t+1
    targets: torch.Tensor  # (B, L-1) clean ids
    labels: torch.Tensor
    null_mask: torch.Tensor
    masks: torch.Tensor  # (B, 1, L, L)
    lengths: list[int]
    training_masks: list[TrainingMask]


def assemble_main_batch(
    samples: Sequence[TokenizedSample],
    indices: Sequence[int],
    cfg: TrainConfig,
    end_id: int,
    rng: torch.Generator,
    forced_mode: str | None = None,
) -> MainBatch:
    """Build a padded batch with per-sample masks, corruption and condition dropout.

    Padding uses the end-marker id and padded keys stay invisible to every
    loss-contributing query because they are never unmasked and never
    precede a loss row.
    """
    chosen = [samples[i] for i in indices]
    lengths = [s.grid.shape[1] for s in chosen]
    t_pad = max(lengths)
    length = t_pad + 2
    inputs = torch.full((len(chosen), length - 1), end_id, dtype=torch.long)
    targets = torch.full((len(chosen), length - 1), end_id, dtype=torch.long)
    masks = torch.empty(len(chosen), 1, length, length)
    training_masks: list[TrainingMask] = []
    lam = 1.0 if forced_mode == "uni" else (0.0 if forced_mode == "bi" else cfg.lam)
    for i, sample in enumerate(chosen):
        t_i = lengths[i]
        base = torch.from_numpy(sample.grid[0]).long()
        seq = torch.cat([base, torch.tensor([end_id])])
        tm = sample_training_mask(t_i, rng, lam, cfg.ratio_range)
        training_masks.append(tm)
        corrupted = corrupt_inputs(seq, tm.masked, cfg.corrupt_prob, end_id, rng)
        inputs[i, : t_i + 1] = corrupted
        targets[i, : t_i + 1] = seq
        masks[i, 0] = build_causal_mask(length, tm.unmasked)
    labels = torch.tensor([s.label for s in chosen], dtype=torch.long)
    null_mask = drop_condition(len(chosen), cfg.cond_drop_prob, rng)
    return MainBatch(inputs, targets, labels, null_mask, masks, lengths, training_masks)


# ---------------------------------------------------------------------------
# Training loops


def _probe_masked_accuracy(
    model: MotionTransformer, batch: MainBatch
) -> float:
    """Fraction of masked bidirectional targets recovered by argmax."""
    model.eval()
    with torch.no_grad():
        logits = model.forward_main(batch.inputs, batch.labels, batch.null_mask, batch.masks)
    hits = total = 0
    for i, tm in enumerate(batch.training_masks):
        rows = [p - 1 for p in tm.masked if tm.mode == "bi"]
        if not rows:
            continue
        idx = torch.as_tensor(rows, dtype=torch.long)
        pred = logits[i, idx].argmax(dim=-1)
        hits += int((pred == batch.targets[i, idx]).sum())
        total += len(rows)
    model.train()
    return hits / total if total else float("nan")


def train_main(
    samples: Sequence[TokenizedSample],
    model: MotionTransformer,
    cfg: TrainConfig,
    out_dir: str | Path,
    probe_samples: Sequence[TokenizedSample] | None = None,
) -> list[dict]:
    """Train the main transformer; writes checkpoints and a JSON-Lines metrics log."""
    if not samples:
        raise ValueError("empty token dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "transformer.ckpt"
    metrics_path = out_dir / "transformer_metrics.jsonl"
    end_id = model.end_id

    probe_batch = None
    if probe_samples:
        g = torch_generator(cfg.seed, "main-probe")
        probe_batch = assemble_main_batch(
            probe_samples,
            list(range(len(probe_samples))),
            replace(cfg, corrupt_prob=0.0, cond_drop_prob=0.0),
            end_id,
            g,
            forced_mode="bi",
        )

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(cfg.lr_milestones), gamma=cfg.lr_factor
    )
    model.train()
    history: list[dict] = []
    with open(metrics_path, "w") as log:
        for step in range(cfg.total_steps):
            g = torch_generator(cfg.seed, "main-step", step)
            torch.manual_seed(derive_seed(cfg.seed, "main-dropout", step))
            idx = torch.randint(len(samples), (cfg.batch_size,), generator=g).tolist()
            batch = assemble_main_batch(samples, idx, cfg, end_id, g)
            logits = model.forward_main(batch.inputs, batch.labels, batch.null_mask, batch.masks)
            report = hybrid_loss(logits, batch.targets, batch.lengths, batch.training_masks, cfg.lam)
            if not torch.isfinite(report.total):
                model.save(ckpt_path, {"step": step, "diverged": True})
                raise TrainingDiverged(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            report.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            scheduler.step()

            if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
                entry = {
                    "step": step,
                    "loss_total": report.total.item(),
                    "loss_uni": None if report.uni_component is None else report.uni_component.item(),
                    "loss_bi": None if report.bi_component is None else report.bi_component.item(),
                    "masked_acc": _probe_masked_accuracy(model, probe_batch)
                    if probe_batch is not None
                    else None,
                    "lr": scheduler.get_last_lr()[0],
                }
                log.write(json.dumps(entry) + "\n")
                history.append(entry)
            if cfg.checkpoint_every > 0 and step > 0 and step % cfg.checkpoint_every == 0:
                model.save(ckpt_path, {"step": step})
    model.save(ckpt_path, {"step": cfg.total_steps})
    model.eval()
    return history


def train_refiner(
    samples: Sequence[TokenizedSample],
    model: RefinementTransformer,
    cfg: TrainConfig,
    out_dir: str | Path,
) -> list[dict]:
    """Train the refiner: per step, pick a target layer v uniformly from [1, V)
    and cross-entropy its ids against the summed lower-layer context."""
    n_quantizers = model.config.refiner_n_quantizers
    if n_quantizers < 2:
        warnings.warn("single-quantizer stack: refiner training is a no-op")
        return []
    if not samples:
        raise ValueError("empty token dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "refiner.ckpt"
    metrics_path = out_dir / "refiner_metrics.jsonl"

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(cfg.lr_milestones), gamma=cfg.lr_factor
    )
    model.train()
    history: list[dict] = []
    with open(metrics_path, "w") as log:
        for step in range(cfg.total_steps):
            g = torch_generator(cfg.seed, "refiner-step", step)
            torch.manual_seed(derive_seed(cfg.seed, "refiner-dropout", step))
            v = int(torch.randint(1, n_quantizers, (), generator=g))
            idx = torch.randint(len(samples), (cfg.refiner_batch_size,), generator=g).tolist()
            chosen = [samples[i] for i in idx]
            lengths = [s.grid.shape[1] for s in chosen]
            t_pad = max(lengths)
            lower = torch.zeros(len(chosen), v, t_pad, dtype=torch.long)
            target = torch.zeros(len(chosen), t_pad, dtype=torch.long)
            pad = torch.ones(len(chosen), t_pad, dtype=torch.bool)
            for i, s in enumerate(chosen):
                t_i = lengths[i]
                lower[i, :, :t_i] = torch.from_numpy(s.grid[:v])
                target[i, :t_i] = torch.from_numpy(s.grid[v])
                pad[i, :t_i] = False
            labels = torch.tensor([s.label for s in chosen], dtype=torch.long)
            null_mask = drop_condition(len(chosen), cfg.cond_drop_prob, g)
            logits = model.forward_refiner(lower, v, labels, null_mask, key_padding=pad)
            valid = ~pad
            loss = F.cross_entropy(logits[valid], target[valid])
            if not torch.isfinite(loss):
                model.save(ckpt_path, {"step": step, "diverged": True})
                raise TrainingDiverged(f"non-finite refiner loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            scheduler.step()
            if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
                entry = {"step": step, "loss": loss.item(), "layer": v, "lr": scheduler.get_last_lr()[0]}
                log.write(json.dumps(entry) + "\n")
                history.append(entry)
    model.save(ckpt_path, {"step": cfg.total_steps})
    model.eval()
    return history
