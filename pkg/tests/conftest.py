"""Shared fixtures: a tiny random-initialized model stack for structural
tests, and the session-trained toy stack for behavioral/acceptance tests."""

from dataclasses import dataclass, field

import numpy as np
import pytest
import torch

from bamm.data import (
    FamilyConfig,
    GeneratorSpec,
    MotionRecord,
    NormStats,
    generate_dataset,
    label_names,
)
from bamm.decoding import MotionGenerator
from bamm.rng import torch_generator
from bamm.tokenizer import MotionTokenizer, TokenizerConfig
from bamm.transformer import MotionTransformer, RefinementTransformer, TransformerConfig

ACCEPTANCE_SEED = 7
ACCEPTANCE_FAMILIES = ("circle_walk", "jump", "wave", "spin", "walk_then_jump")
BIMODAL_LABEL = 4  # walk_then_jump: length modes at 48 and 160 frames

TINY_FEATURES = 6
TINY_CODES = 16
TINY_QUANTIZERS = 3
TINY_LABELS = 3


def build_tiny_generator(seed: int = 0) -> MotionGenerator:
    tok_cfg = TokenizerConfig(
        feature_dim=TINY_FEATURES,
        width=16,
        code_dim=8,
        codebook_size=TINY_CODES,
        n_quantizers=TINY_QUANTIZERS,
    )
    tokenizer = MotionTokenizer(tok_cfg, seed=seed)
    model_cfg = TransformerConfig(
        n_layers=2,
        n_heads=2,
        d_model=32,
        n_codes=TINY_CODES,
        n_labels=TINY_LABELS,
        max_len=32,
        dropout=0.0,
        refiner_n_quantizers=TINY_QUANTIZERS,
    )
    transformer = MotionTransformer(model_cfg, seed=seed)
    refiner = RefinementTransformer(model_cfg, seed=seed + 1)
    # Zero-initialized heads make every distribution uniform; give the stack
    # weight so sampling and argmax react to inputs.
    rng = torch_generator(seed, "tiny-stack-heads")
    with torch.no_grad():
        for module in (transformer, refiner):
            module.head.weight.copy_(torch.randn(module.head.weight.shape, generator=rng) * 0.3)
    stats = NormStats(mean=np.zeros(TINY_FEATURES), std=np.ones(TINY_FEATURES))
    return MotionGenerator(
        tokenizer, transformer, refiner, stats, labels=[f"label-{i}" for i in range(TINY_LABELS)]
    )


@pytest.fixture(scope="session")
def tiny_generator() -> MotionGenerator:
    return build_tiny_generator()


@pytest.fixture(scope="session")
def tiny_ckpt_dir(tmp_path_factory, tiny_generator):
    """The tiny stack written out as a loadable checkpoint directory."""
    import json

    path = tmp_path_factory.mktemp("tiny-ckpts")
    tiny_generator.tokenizer.save(path / "tokenizer.ckpt")
    tiny_generator.transformer.save(path / "transformer.ckpt")
    tiny_generator.refiner.save(path / "refiner.ckpt")
    tiny_generator.stats.to_json(path / "norm_stats.json")
    (path / "labels.json").write_text(
        json.dumps({"labels": tiny_generator.labels, "fps": 20, "feature_dim": TINY_FEATURES})
    )
    return path


@dataclass
class ToyStack:
    generator: MotionGenerator
    records: list[MotionRecord]
    held_out: list[MotionRecord]
    ckpt_dir: object
    timings: dict = field(default_factory=dict)


def acceptance_spec(count_per_family: int, seed: int) -> GeneratorSpec:
    return GeneratorSpec(
        families=[FamilyConfig(name, count_per_family) for name in ACCEPTANCE_FAMILIES],
        seed=seed,
    )


@pytest.fixture(scope="session")
def toy_stack(tmp_path_factory) -> ToyStack:
    """The acceptance stack: 500 sequences, 5 labels, seed 7, toy preset.

    Training budgets follow the quick-run schedule (2000 tokenizer steps,
    2000 transformer steps, 1000 refiner steps); the full toy schedule is
    the CLI default.
    """
    from bamm.pipeline import train_stack

    spec = acceptance_spec(100, ACCEPTANCE_SEED)
    records = generate_dataset(spec)
    held_out = generate_dataset(acceptance_spec(48, ACCEPTANCE_SEED + 1))
    ckpt_dir = tmp_path_factory.mktemp("toy-stack")
    generator, timings = train_stack(
        records,
        ckpt_dir,
        labels=label_names(spec),
        seed=ACCEPTANCE_SEED,
        tokenizer_steps=2000,
        main_steps=2000,
        refiner_steps=1000,
    )
    return ToyStack(generator, records, held_out, ckpt_dir, timings)
