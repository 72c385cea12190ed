"""Desk-scale evaluation: reconstruction quality, codebook health,
masked-prediction metrics under autoregressive vs bidirectional context,
generated-length distributions, and a decoding-configuration sweep.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats as scipy_stats

from .data import FrameMatrix, MotionRecord, NormStats, normalize, pad_to_stride
from .decoding import DecodeConfig, MotionGenerator
from .masks import (
    SequenceLayout,
    build_causal_mask,
    lowest_confidence_positions,
    refinement_mask,
)
from .rng import torch_generator
from .tokenizer import MotionTokenizer, rvq_decode
from .training import TokenizedSample
from .transformer import logits_cfg


@dataclass
class EvalReport:
    recon_mse: float | None = None
    codebook_utilization: list[float] = field(default_factory=list)
    residual_norm_curve: list[float] = field(default_factory=list)
    masked_nll: dict[int, float] = field(default_factory=dict)
    masked_acc: dict[int, float] = field(default_factory=dict)
    length_histogram: dict[int, list[int]] = field(default_factory=dict)
    mode_count: dict[int, int] = field(default_factory=dict)
    edit_fidelity_pass_rate: float | None = None

    def to_json(self, path: str | Path) -> None:
        raw = asdict(self)
        raw["masked_nll"] = {str(k): v for k, v in self.masked_nll.items()}
        raw["masked_acc"] = {str(k): v for k, v in self.masked_acc.items()}
        raw["length_histogram"] = {str(k): v for k, v in self.length_histogram.items()}
        raw["mode_count"] = {str(k): v for k, v in self.mode_count.items()}
        Path(path).write_text(json.dumps(raw, indent=2))


# ---------------------------------------------------------------------------
# Tokenizer quality


def eval_tokenizer(
    records: Sequence[MotionRecord], tokenizer: MotionTokenizer, stats: NormStats
) -> dict:
    """Reconstruction MSE (normalized space), per-layer utilization and the
    per-layer residual-norm curve over the full dataset."""
    if not records:
        raise ValueError("empty dataset")
    tokenizer.eval()
    sq_err = 0.0
    n_vals = 0
    used = [set() for _ in range(tokenizer.config.n_quantizers)]
    norm_curves = []
    for rec in records:
        frames = pad_to_stride(normalize(rec.motion, stats)).frames
        x = torch.from_numpy(frames)
        grid, norms = tokenizer.tokenize(x)
        recon = tokenizer.detokenize(grid)
        sq_err += float(((recon - x) ** 2).sum())
        n_vals += x.numel()
        norm_curves.append(norms.numpy())
        for v in range(grid.shape[0]):
            used[v].update(grid[v].tolist())
    utilization = [len(u) / tokenizer.config.codebook_size for u in used]
    return {
        "recon_mse": sq_err / n_vals,
        "utilization": utilization,
        "residual_norm_curve": np.stack(norm_curves).mean(axis=0).tolist(),
    }


# ---------------------------------------------------------------------------
# Masked-prediction metrics (teacher-forced ground truth under each context)


def _context_logprobs(
    generator: MotionGenerator,
    base: torch.Tensor,
    label: int,
    mask: torch.Tensor,
    scale: float = 0.0,
) -> torch.Tensor:
    """Log-probabilities of each ground-truth token under the given mask.

    With scale > 0 the conditional/unconditional logits are combined by
    classifier-free guidance before the softmax; scale 0 is the pure
    conditional model.
    """
    t = base.shape[0]
    seq = torch.cat([base, torch.tensor([generator.end_id])])[None, :]
    labels = torch.tensor([label], dtype=torch.long)
    null = torch.tensor([False])
    with torch.no_grad():
        if scale > 0:
            doubled = torch.cat([seq, seq], dim=0)
            logits = generator.transformer.forward_main(
                doubled,
                torch.tensor([label, label]),
                torch.tensor([False, True]),
                mask,
            )
            guided = logits_cfg(logits[0], logits[1], scale)
        else:
            guided = generator.transformer.forward_main(seq, labels, null, mask)[0]
    log_probs = F.log_softmax(guided, dim=-1)
    rows = torch.arange(t)
    return log_probs[rows, base]  # log p(x_p) at row p-1


def masked_context_metrics(
    generator: MotionGenerator,
    samples: Sequence[TokenizedSample],
    strategy: str = "every_other",
    conf_threshold: float = 0.5,
    scales: tuple[float, float] = (0.0, 0.0),
    max_samples: int | None = None,
) -> dict:
    """Per-sample masked-token NLL/accuracy under the autoregressive context
    (iteration 1) and the bidirectional context (iteration 2).

    The masked set comes from the configured strategy, using the
    autoregressive teacher-forced probabilities as confidences. Returns
    paired per-sample means plus a one-sided paired t-test that the
    bidirectional context does not increase NLL.
    """
    nll_uni, nll_bi, acc_uni, acc_bi = [], [], [], []
    count = 0
    for sample in samples:
        if max_samples is not None and count >= max_samples:
            break
        base = torch.from_numpy(sample.grid[0]).long()
        t = base.shape[0]
        if t < 2:
            continue
        layout = SequenceLayout(t)
        uni_mask = build_causal_mask(layout.length, ())
        lp_uni = _context_logprobs(generator, base, sample.label, uni_mask, scales[0])
        conf = lp_uni.exp().tolist()
        unmasked, masked = refinement_mask(t, strategy, conf, conf_threshold)
        if not masked:
            continue
        bi_mask = build_causal_mask(layout.length, unmasked)
        lp_bi = _context_logprobs(generator, base, sample.label, bi_mask, scales[1])
        rows = torch.as_tensor([p - 1 for p in masked], dtype=torch.long)
        nll_uni.append(float(-lp_uni[rows].mean()))
        nll_bi.append(float(-lp_bi[rows].mean()))

        acc_uni.append(_masked_argmax_acc(generator, base, sample.label, uni_mask, rows, scales[0]))
        acc_bi.append(_masked_argmax_acc(generator, base, sample.label, bi_mask, rows, scales[1]))
        count += 1
    if not nll_uni:
        raise ValueError("no usable samples for masked-context metrics")
    diffs = np.asarray(nll_uni) - np.asarray(nll_bi)
    tstat, pvalue = paired_onesided_ttest(diffs)
    return {
        "n": len(nll_uni),
        "nll_iter1": float(np.mean(nll_uni)),
        "nll_iter2": float(np.mean(nll_bi)),
        "acc_iter1": float(np.mean(acc_uni)),
        "acc_iter2": float(np.mean(acc_bi)),
        "t_stat": tstat,
        "p_value": pvalue,
    }


def _masked_argmax_acc(generator, base, label, mask, rows, scale) -> float:
    t = base.shape[0]
    seq = torch.cat([base, torch.tensor([generator.end_id])])[None, :]
    with torch.no_grad():
        if scale > 0:
            logits = generator.transformer.forward_main(
                torch.cat([seq, seq]),
                torch.tensor([label, label]),
                torch.tensor([False, True]),
                mask,
            )
            guided = logits_cfg(logits[0], logits[1], scale)
        else:
            guided = generator.transformer.forward_main(
                seq, torch.tensor([label]), torch.tensor([False]), mask
            )[0]
    pred = guided[rows].argmax(dim=-1)
    return float((pred == base[rows]).float().mean())


def paired_onesided_ttest(diffs: np.ndarray) -> tuple[float, float]:
    """One-sided paired t-test for mean(diffs) > 0; returns (t, p)."""
    n = len(diffs)
    if n < 2:
        return float("nan"), float("nan")
    mean = diffs.mean()
    sd = diffs.std(ddof=1)
    if sd == 0:
        return float("inf") if mean > 0 else float("-inf"), 0.0 if mean > 0 else 1.0
    t = mean / (sd / math.sqrt(n))
    p = float(scipy_stats.t.sf(t, df=n - 1))
    return float(t), p


# ---------------------------------------------------------------------------
# Length distributions


def detect_modes(hist: Sequence[int]) -> int:
    """Peaks of a width-3 smoothed histogram exceeding 10% of the max count."""
    h = np.asarray(hist, dtype=np.float64)
    if h.sum() == 0:
        return 0
    kernel = np.ones(3) / 3.0
    smoothed = np.convolve(h, kernel, mode="same")
    floor = 0.1 * smoothed.max()
    padded = np.concatenate([[-np.inf], smoothed, [-np.inf]])
    modes = 0
    for i in range(1, len(padded) - 1):
        if padded[i] > padded[i - 1] and padded[i] >= padded[i + 1] and padded[i] >= floor:
            modes += 1
    return modes


def eval_length_distribution(
    generator: MotionGenerator,
    labels: Sequence[int],
    n_samples: int,
    cfg: DecodeConfig,
    seed: int = 0,
    chunk: int = 128,
) -> dict:
    """Histogram of generated token lengths per label from the
    autoregressive pass, plus detected mode counts."""
    out_hist: dict[int, list[int]] = {}
    out_modes: dict[int, int] = {}
    for label in labels:
        counts = np.zeros(cfg.t_max + 1, dtype=np.int64)  # bins 0..t_max; 0 stays empty
        rng = torch_generator(seed, "length-eval", label)
        remaining = n_samples
        while remaining > 0:
            b = min(chunk, remaining)
            results = generator.decode_iter1_batch([label] * b, cfg, rng)
            for _, _, t, _, _ in results:
                counts[t] += 1
            remaining -= b
        assert counts[0] == 0 and counts.sum() == n_samples
        out_hist[label] = counts[1:].tolist()  # lengths 1..t_max
        out_modes[label] = detect_modes(counts[1:])
    return {"histogram": out_hist, "modes": out_modes}


# ---------------------------------------------------------------------------
# Decode-configuration sweep


SWEEP_COLUMNS = (
    "cfg_s1",
    "cfg_s2",
    "cfg_refine",
    "strategy",
    "n_iterations",
    "masked_nll",
    "masked_acc",
    "gen_mse_nearest",
)


def _nearest_exemplar_mse(
    frames: np.ndarray, exemplars: Sequence[np.ndarray]
) -> float:
    best = math.inf
    for ex in exemplars:
        n = min(len(frames), len(ex))
        mse = float(((frames[:n] - ex[:n]) ** 2).mean())
        best = min(best, mse)
    return best


def ablation_sweep(
    generator: MotionGenerator,
    samples: Sequence[TokenizedSample],
    configs: Sequence[DecodeConfig],
    records_by_label: dict[int, list[np.ndarray]] | None = None,
    n_generations: int = 0,
    max_samples: int | None = 64,
) -> list[dict]:
    """One row of metrics per decode configuration.

    masked_nll / masked_acc use the configuration's iteration count:
    1 iteration scores the autoregressive context, 2+ the bidirectional
    context under the configuration's strategy; guidance scales are applied
    to the scoring distribution. ``gen_mse_nearest`` (optional) generates
    motions and reports the MSE against the nearest training exemplar of
    the same label, a diagnostic only.
    """
    rows = []
    for cfg in configs:
        metrics = masked_context_metrics(
            generator,
            samples,
            strategy=cfg.strategy,
            conf_threshold=cfg.conf_threshold,
            scales=(cfg.cfg_s1, cfg.cfg_s2),
            max_samples=max_samples,
        )
        if cfg.n_iterations == 1:
            nll, acc = metrics["nll_iter1"], metrics["acc_iter1"]
        else:
            nll, acc = metrics["nll_iter2"], metrics["acc_iter2"]
        gen_mse = None
        if n_generations > 0 and records_by_label:
            errs = []
            for label, exemplars in records_by_label.items():
                for i in range(n_generations):
                    frames, _ = generator.generate(label, cfg=replace(cfg, seed=cfg.seed + i))
                    errs.append(_nearest_exemplar_mse(frames.frames, exemplars))
            gen_mse = float(np.mean(errs))
        rows.append(
            {
                "cfg_s1": cfg.cfg_s1,
                "cfg_s2": cfg.cfg_s2,
                "cfg_refine": cfg.cfg_refine,
                "strategy": cfg.strategy,
                "n_iterations": cfg.n_iterations,
                "masked_nll": nll,
                "masked_acc": acc,
                "gen_mse_nearest": gen_mse,
            }
        )
    return rows


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
