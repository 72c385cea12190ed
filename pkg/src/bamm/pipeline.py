"""One-call training of the full stack (tokenizer, transformer, refiner)
from a record list to a loadable checkpoint directory."""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .data import MotionRecord, compute_norm_stats, normalize, pad_to_stride
from .decoding import MotionGenerator
from .tokenizer import (
    MotionTokenizer,
    TokenizerTrainConfig,
    tokenizer_preset,
    train_tokenizer,
)
from .training import TrainConfig, tokenize_dataset, train_main, train_refiner, train_preset
from .transformer import MotionTransformer, RefinementTransformer, transformer_preset


def train_stack(
    records: Sequence[MotionRecord],
    ckpt_dir: str | Path,
    labels: Sequence[str] | None = None,
    preset: str = "toy",
    seed: int = 7,
    tokenizer_steps: int | None = None,
    main_steps: int | None = None,
    refiner_steps: int | None = None,
    probe_size: int = 32,
) -> tuple[MotionGenerator, dict]:
    """Train all three components and return the loaded generator plus timings.

    Step overrides shrink the preset schedules for quick runs; None keeps
    the preset totals.
    """
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    stats = compute_norm_stats(records)
    stats.to_json(ckpt_dir / "norm_stats.json")
    n_labels = max(r.label for r in records) + 1
    meta = {
        "labels": list(labels) if labels else [f"label-{i}" for i in range(n_labels)],
        "fps": records[0].motion.fps,
        "feature_dim": records[0].motion.feature_dim,
    }
    (ckpt_dir / "labels.json").write_text(json.dumps(meta))

    t0 = time.perf_counter()
    tok_cfg = tokenizer_preset(preset, feature_dim=records[0].motion.feature_dim)
    tokenizer = MotionTokenizer(tok_cfg, seed=seed)
    tok_train = TokenizerTrainConfig(seed=seed)
    if tokenizer_steps is not None:
        tok_train.steps = tokenizer_steps
    normalized = [pad_to_stride(normalize(r.motion, stats)).frames for r in records]
    train_tokenizer(normalized, tokenizer, tok_train)
    tokenizer.save(ckpt_dir / "tokenizer.ckpt")
    timings["tokenizer_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    samples = tokenize_dataset(records, tokenizer, stats)
    timings["tokenize_dataset_s"] = time.perf_counter() - t0

    train_cfg = train_preset(preset)
    train_cfg = replace(train_cfg, seed=seed)
    model_cfg = transformer_preset(
        preset,
        n_codes=tok_cfg.codebook_size,
        n_labels=n_labels,
        n_quantizers=tok_cfg.n_quantizers,
    )

    t0 = time.perf_counter()
    main_cfg = train_cfg if main_steps is None else replace(train_cfg, total_steps=main_steps)
    transformer = MotionTransformer(model_cfg, seed=seed)
    train_main(samples, transformer, main_cfg, ckpt_dir, probe_samples=samples[:probe_size])
    timings["transformer_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ref_cfg = train_cfg if refiner_steps is None else replace(train_cfg, total_steps=refiner_steps)
    refiner = RefinementTransformer(model_cfg, seed=seed + 1)
    train_refiner(samples, refiner, ref_cfg, ckpt_dir)
    timings["refiner_s"] = time.perf_counter() - t0

    timings["total_s"] = sum(timings.values())
    return MotionGenerator.load(ckpt_dir), timings
