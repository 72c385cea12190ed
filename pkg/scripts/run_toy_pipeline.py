#!/usr/bin/env python3
"""End-to-end toy run: synthesize data, train the full stack, then exercise
generation, editing, long-sequence stitching and the evaluation metrics.

This is the baseline run backing the acceptance thresholds; it prints the
numbers the acceptance suite asserts against.

Usage:
    python scripts/run_toy_pipeline.py --out runs/toy [--quick]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from bamm.data import FamilyConfig, GeneratorSpec, generate_dataset, label_names, save_dataset
from bamm.decoding import DecodeConfig
from bamm.editing import EditRequest, StoryScript, edit, generate_long
from bamm.evaluation import (
    detect_modes,
    eval_length_distribution,
    eval_tokenizer,
    masked_context_metrics,
)
from bamm.pipeline import train_stack
from bamm.training import tokenize_dataset

FAMILIES = ("circle_walk", "jump", "wave", "spin", "walk_then_jump")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/toy")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--count", type=int, default=100, help="records per family")
    parser.add_argument("--tokenizer-steps", type=int, default=2000)
    parser.add_argument("--main-steps", type=int, default=2000)
    parser.add_argument("--refiner-steps", type=int, default=1000)
    parser.add_argument("--length-samples", type=int, default=1000)
    parser.add_argument("--quick", action="store_true", help="shrink every budget 10x")
    args = parser.parse_args()
    if args.quick:
        args.count = max(args.count // 5, 4)
        args.tokenizer_steps //= 10
        args.main_steps //= 10
        args.refiner_steps //= 10
        args.length_samples //= 10

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    spec = GeneratorSpec(
        families=[FamilyConfig(name, args.count) for name in FAMILIES], seed=args.seed
    )
    records = generate_dataset(spec)
    save_dataset(records, out / "train.jsonl")
    held_out = generate_dataset(
        GeneratorSpec(families=[FamilyConfig(name, 48) for name in FAMILIES], seed=args.seed + 1)
    )
    print(f"dataset: {len(records)} train / {len(held_out)} held-out records")

    t0 = time.perf_counter()
    generator, timings = train_stack(
        records,
        out / "ckpts",
        labels=label_names(spec),
        seed=args.seed,
        tokenizer_steps=args.tokenizer_steps,
        main_steps=args.main_steps,
        refiner_steps=args.refiner_steps,
    )
    print(f"training timings: { {k: round(v, 1) for k, v in timings.items()} }")

    tok_metrics = eval_tokenizer(held_out, generator.tokenizer, generator.stats)
    print(f"tokenizer recon MSE (held-out, normalized): {tok_metrics['recon_mse']:.5f}")
    print(f"codebook utilization per layer: {[round(u, 3) for u in tok_metrics['utilization']]}")
    print(f"residual norm curve: {[round(v, 4) for v in tok_metrics['residual_norm_curve']]}")

    samples = tokenize_dataset(held_out, generator.tokenizer, generator.stats)
    context = masked_context_metrics(generator, samples, max_samples=240)
    print(
        f"masked-context over {context['n']} held-out samples: "
        f"nll iter1 {context['nll_iter1']:.4f} vs iter2 {context['nll_iter2']:.4f} "
        f"(p={context['p_value']:.2e}); acc iter1 {context['acc_iter1']:.3f} "
        f"vs iter2 {context['acc_iter2']:.3f}"
    )

    cfg = DecodeConfig.preset("toy", seed=args.seed)
    lengths = eval_length_distribution(
        generator, [4], n_samples=args.length_samples, cfg=cfg, seed=args.seed
    )
    hist = lengths["histogram"][4]
    print(f"bimodal-label length histogram modes: {lengths['modes'][4]}")
    top = np.argsort(hist)[-6:][::-1] + 1
    print(f"  most common token lengths: {top.tolist()}")

    frames, trace = generator.generate(2, cfg)
    print(f"generated label 2: {frames.n_frames} frames, t={trace.predicted_t}")
    restricted, _ = generator.generate(0, cfg, t_target=12)
    print(f"length-restricted label 0: {restricted.n_frames} frames")

    source = held_out[0]
    result = edit(
        generator,
        EditRequest(label=source.label, task="inpaint", frames=source.motion.frames, decode=cfg),
    )
    print(
        f"inpaint edit: {len(result.masked_positions)} masked / "
        f"{len(result.preserved_positions)} preserved positions"
    )

    story = StoryScript(entries=((2, 10), (1, 10)), t_trans=4)
    long_frames, long_grid = generate_long(generator, story, cfg)
    print(f"long sequence: {long_grid.shape[1]} tokens -> {long_frames.n_frames} frames")

    total = time.perf_counter() - t0
    print(f"total wall time: {total:.1f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
