"""Command-line surface for the full lifecycle: data synthesis, tokenizer /
transformer / refiner training, generation, editing, evaluation, sweeps,
and the HTTP service.

The artifact root comes from --checkpoint-dir or the BAMM_CHECKPOINT_DIR
environment variable. Exit codes: 0 on success, 1 on runtime errors,
2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    FamilyConfig,
    GeneratorSpec,
    compute_norm_stats,
    generate_dataset,
    label_names,
    load_dataset,
    normalize,
    pad_to_stride,
    save_dataset,
)
from .decoding import DecodeConfig, MissingArtifact, MotionGenerator
from .editing import EditRequest, edit
from .evaluation import (
    EvalReport,
    ablation_sweep,
    eval_length_distribution,
    eval_tokenizer,
    masked_context_metrics,
    write_sweep_csv,
)
from .tokenizer import (
    MotionTokenizer,
    TokenizerTrainConfig,
    tokenizer_preset,
    train_tokenizer,
)
from .training import TrainConfig, tokenize_dataset, train_main, train_refiner, train_preset
from .transformer import (
    MotionTransformer,
    RefinementTransformer,
    transformer_preset,
)

DECODE_PRESET_NAMES = ("toy", "humanml3d-paper", "kit-paper")


def _checkpoint_dir(args) -> Path:
    raw = args.checkpoint_dir or os.environ.get("BAMM_CHECKPOINT_DIR")
    if not raw:
        raise SystemExit("no checkpoint directory: pass --checkpoint-dir or set BAMM_CHECKPOINT_DIR")
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_meta(ckpt_dir: Path) -> dict:
    meta_path = ckpt_dir / "labels.json"
    if not meta_path.exists():
        raise MissingArtifact(f"missing label vocabulary artifact: {meta_path}")
    return json.loads(meta_path.read_text())


def _decode_config(args) -> DecodeConfig:
    if getattr(args, "config", None):
        cfg = DecodeConfig.from_json(args.config)
    else:
        cfg = DecodeConfig.preset(args.preset or "toy")
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _train_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        cfg = TrainConfig.from_json(args.config)
    else:
        cfg = train_preset(args.preset or "toy")
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_synth_data(args) -> int:
    if args.config:
        spec = GeneratorSpec.from_json(args.config)
    else:
        spec = GeneratorSpec(
            families=[FamilyConfig(name, args.count) for name in args.families.split(",")]
        )
    if args.seed is not None:
        spec.seed = args.seed
    records = generate_dataset(spec)
    save_dataset(records, args.out)
    meta = {"labels": label_names(spec), "fps": spec.fps}
    if args.labels_out:
        Path(args.labels_out).write_text(json.dumps(meta))
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train_tokenizer(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    records = load_dataset(args.data)
    stats = compute_norm_stats(records)
    stats.to_json(ckpt_dir / "norm_stats.json")
    n_labels = max(r.label for r in records) + 1
    meta = {
        "labels": [f"label-{i}" for i in range(n_labels)],
        "fps": records[0].motion.fps,
        "feature_dim": records[0].motion.feature_dim,
    }
    if args.labels:
        meta.update(json.loads(Path(args.labels).read_text()))
    (ckpt_dir / "labels.json").write_text(json.dumps(meta))

    tok_cfg = tokenizer_preset(args.preset or "toy", feature_dim=records[0].motion.feature_dim)
    tokenizer = MotionTokenizer(tok_cfg, seed=args.seed or 0)
    train_cfg = TokenizerTrainConfig(seed=args.seed or 0)
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        train_cfg = TokenizerTrainConfig(**raw)
    normalized = [pad_to_stride(normalize(r.motion, stats)).frames for r in records]
    history = train_tokenizer(normalized, tokenizer, train_cfg)
    tokenizer.save(ckpt_dir / "tokenizer.ckpt")
    print(f"tokenizer saved; final loss {history[-1]['total']:.4f}")
    return 0


def _prepare_token_dataset(args, ckpt_dir: Path):
    records = load_dataset(args.data)
    tokenizer = MotionTokenizer.load(ckpt_dir / "tokenizer.ckpt")
    from .data import NormStats

    stats = NormStats.from_json(ckpt_dir / "norm_stats.json")
    samples = tokenize_dataset(records, tokenizer, stats)
    return records, tokenizer, stats, samples


def cmd_train_transformer(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    records, tokenizer, stats, samples = _prepare_token_dataset(args, ckpt_dir)
    cfg = _train_config(args)
    n_labels = max(r.label for r in records) + 1
    model_cfg = transformer_preset(
        args.preset if args.preset in ("toy", "paper") else "toy",
        n_codes=tokenizer.config.codebook_size,
        n_labels=n_labels,
        n_quantizers=tokenizer.config.n_quantizers,
    )
    model = MotionTransformer(model_cfg, seed=cfg.seed)
    probe = samples[: min(len(samples), cfg.batch_size)]
    train_main(samples, model, cfg, ckpt_dir, probe_samples=probe)
    print(f"transformer saved to {ckpt_dir / 'transformer.ckpt'}")
    return 0


def cmd_train_refiner(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    records, tokenizer, stats, samples = _prepare_token_dataset(args, ckpt_dir)
    if tokenizer.config.n_quantizers < 2:
        print("single-quantizer stack: nothing to refine")
        return 0
    cfg = _train_config(args)
    n_labels = max(r.label for r in records) + 1
    model_cfg = transformer_preset(
        args.preset if args.preset in ("toy", "paper") else "toy",
        n_codes=tokenizer.config.codebook_size,
        n_labels=n_labels,
        n_quantizers=tokenizer.config.n_quantizers,
    )
    model = RefinementTransformer(model_cfg, seed=cfg.seed)
    train_refiner(samples, model, cfg, ckpt_dir)
    print(f"refiner saved to {ckpt_dir / 'refiner.ckpt'}")
    return 0


def cmd_generate(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    generator = MotionGenerator.load(ckpt_dir)
    cfg = _decode_config(args)
    t_target = None
    if args.length is not None:
        if args.length % 4 != 0 or args.length < 4:
            raise SystemExit("--length must be a positive multiple of 4 frames")
        t_target = args.length // 4
    frames, trace = generator.generate(args.label, cfg, t_target=t_target)
    payload = {
        "label": args.label,
        "fps": frames.fps,
        "frames": [[float(v) for v in row] for row in frames.frames],
        "tokens": trace.grid[0] if trace.grid else trace.iter1_tokens,
        "trace": trace.to_dict(),
    }
    Path(args.out).write_text(json.dumps(payload))
    print(f"wrote {frames.n_frames} frames to {args.out}")
    return 0


def cmd_edit(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    generator = MotionGenerator.load(ckpt_dir)
    raw = json.loads(Path(args.request).read_text())
    cfg = _decode_config(args)
    if "cfg" in raw:
        cfg = replace(cfg, **raw["cfg"])
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    request = EditRequest(
        label=raw["label"],
        task=raw["task"],
        frames=np.asarray(raw["frames"], dtype=np.float32) if "frames" in raw else None,
        tokens=np.asarray(raw["tokens"], dtype=np.int64) if "tokens" in raw else None,
        spans=tuple((int(a), int(b)) for a, b in raw.get("spans", [])),
        decode=cfg,
        fps=generator.fps,
    )
    result = edit(generator, request)
    payload = {
        "frames": [[float(v) for v in row] for row in result.frames.frames],
        "tokens": result.grid[0].tolist(),
        "preserved_positions": list(result.preserved_positions),
        "masked_positions": list(result.masked_positions),
    }
    Path(args.out).write_text(json.dumps(payload))
    print(f"edited motion written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    generator = MotionGenerator.load(ckpt_dir)
    records = load_dataset(args.data)
    samples = tokenize_dataset(records, generator.tokenizer, generator.stats)
    cfg = _decode_config(args)
    report = EvalReport()
    tok_metrics = eval_tokenizer(records, generator.tokenizer, generator.stats)
    report.recon_mse = tok_metrics["recon_mse"]
    report.codebook_utilization = tok_metrics["utilization"]
    report.residual_norm_curve = tok_metrics["residual_norm_curve"]
    context = masked_context_metrics(generator, samples, max_samples=args.max_samples)
    report.masked_nll = {1: context["nll_iter1"], 2: context["nll_iter2"]}
    report.masked_acc = {1: context["acc_iter1"], 2: context["acc_iter2"]}
    labels = sorted({r.label for r in records})
    lengths = eval_length_distribution(
        generator, labels, n_samples=args.length_samples, cfg=cfg, seed=cfg.seed
    )
    report.length_histogram = lengths["histogram"]
    report.mode_count = lengths["modes"]
    report.to_json(args.out)
    print(f"eval report written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    ckpt_dir = _checkpoint_dir(args)
    generator = MotionGenerator.load(ckpt_dir)
    records = load_dataset(args.data)
    samples = tokenize_dataset(records, generator.tokenizer, generator.stats)
    grid_raw = json.loads(Path(args.config).read_text())
    configs = [DecodeConfig.from_dict(entry) for entry in grid_raw["configs"]]
    rows = ablation_sweep(generator, samples, configs, max_samples=args.max_samples)
    write_sweep_csv(rows, args.out)
    print(f"sweep table ({len(rows)} rows) written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceState, http_serve

    ckpt_dir = _checkpoint_dir(args)
    state = ServiceState.load(ckpt_dir, decode_defaults=_decode_config(args))
    host, _, port = args.bind.partition(":")
    http_serve(state, host=host or "127.0.0.1", port=int(port or 8722), max_concurrent=args.max_concurrent)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bamm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--preset", default=None, choices=("toy", "paper") + DECODE_PRESET_NAMES)
        if checkpoint:
            p.add_argument("--checkpoint-dir", default=None)

    p = sub.add_parser("synth-data", help="generate a synthetic labeled dataset")
    common(p, checkpoint=False)
    p.add_argument("--out", required=True)
    p.add_argument("--families", default="circle_walk,jump,wave,spin,walk_then_jump")
    p.add_argument("--count", type=int, default=100, help="records per family")
    p.add_argument("--labels-out", default=None, help="write label metadata JSON here")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-tokenizer", help="train the residual-VQ tokenizer")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default=None, help="label metadata JSON from synth-data")
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("train-transformer", help="train the masked self-attention transformer")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train_transformer)

    p = sub.add_parser("train-refiner", help="train the residual refinement transformer")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train_refiner)

    p = sub.add_parser("generate", help="generate motion for a label")
    common(p)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--length", type=int, default=None, help="restrict output to this many frames")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("edit", help="apply a temporal edit described by a JSON request")
    common(p)
    p.add_argument("--request", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="write an evaluation report")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--length-samples", type=int, default=200)
    p.add_argument("--max-samples", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a decode-config ablation sweep to CSV")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-samples", type=int, default=64)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="start the HTTP JSON service")
    common(p)
    p.add_argument("--bind", default="127.0.0.1:8722")
    p.add_argument("--max-concurrent", type=int, default=4)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        if isinstance(exc.code, int):
            return exc.code
        print(f"error: {exc.code}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
