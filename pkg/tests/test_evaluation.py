"""Evaluation metrics: mode detection, tokenizer quality stubs,
masked-context pairing, and the sweep table."""

import csv

import numpy as np
import pytest
import torch

from bamm.decoding import DecodeConfig
from bamm.evaluation import (
    EvalReport,
    ablation_sweep,
    detect_modes,
    eval_length_distribution,
    eval_tokenizer,
    masked_context_metrics,
    paired_onesided_ttest,
    write_sweep_csv,
)
from bamm.data import FrameMatrix, MotionRecord, NormStats
from bamm.training import TokenizedSample


class PerfectCopyTokenizer:
    """Stub that reproduces its input exactly; utilization is degenerate."""

    def __init__(self, n_quantizers=2, codebook_size=8):
        from types import SimpleNamespace

        self.config = SimpleNamespace(n_quantizers=n_quantizers, codebook_size=codebook_size)
        self._last = None

    def eval(self):
        pass

    def tokenize(self, frames):
        self._last = frames.clone()
        t = frames.shape[0] // 4
        return torch.zeros(self.config.n_quantizers, t, dtype=torch.long), torch.zeros(
            self.config.n_quantizers
        )

    def detokenize(self, grid):
        return self._last


def make_records(n=3, tau=16, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return [
        MotionRecord(f"r{i}", i % 2, FrameMatrix(rng.normal(size=(tau, dim)).astype(np.float32)))
        for i in range(n)
    ]


class TestEvalTokenizer:
    def test_perfect_copy_stub_gives_zero_mse(self):
        records = make_records()
        stats = NormStats(mean=np.zeros(4), std=np.ones(4))
        out = eval_tokenizer(records, PerfectCopyTokenizer(), stats)
        assert out["recon_mse"] == 0.0

    def test_single_code_collapse_utilization(self):
        records = make_records()
        stats = NormStats(mean=np.zeros(4), std=np.ones(4))
        out = eval_tokenizer(records, PerfectCopyTokenizer(codebook_size=8), stats)
        assert out["utilization"] == [1 / 8, 1 / 8]

    def test_real_tokenizer_reports_finite_curve(self, tiny_generator):
        records = make_records(dim=6)
        out = eval_tokenizer(records, tiny_generator.tokenizer, tiny_generator.stats)
        assert len(out["residual_norm_curve"]) == 3
        assert all(np.isfinite(v) for v in out["residual_norm_curve"])
        assert all(0.0 <= u <= 1.0 for u in out["utilization"])

    def test_empty_dataset_rejected(self, tiny_generator):
        with pytest.raises(ValueError):
            eval_tokenizer([], tiny_generator.tokenizer, tiny_generator.stats)


class TestDetectModes:
    def test_single_peak(self):
        hist = [0, 0, 2, 10, 3, 0, 0, 0]
        assert detect_modes(hist) == 1

    def test_two_separated_peaks(self):
        hist = [0, 8, 1, 0, 0, 0, 1, 9, 1, 0]
        assert detect_modes(hist) == 2

    def test_small_bumps_below_floor_ignored(self):
        hist = [0, 100, 0, 0, 1, 0, 0, 0, 0, 0]
        assert detect_modes(hist) == 1

    def test_empty_histogram(self):
        assert detect_modes([0, 0, 0]) == 0


class TestPairedTTest:
    def test_consistently_positive_differences_significant(self):
        rng = np.random.default_rng(0)
        diffs = rng.normal(0.5, 0.1, size=50)
        t, p = paired_onesided_ttest(diffs)
        assert t > 0 and p < 1e-6

    def test_symmetric_differences_not_significant(self):
        rng = np.random.default_rng(1)
        diffs = rng.normal(0.0, 1.0, size=200)
        _, p = paired_onesided_ttest(diffs)
        assert p > 0.05


def random_samples(n=6, t=6, v=3, k=16, seed=0):
    rng = np.random.default_rng(seed)
    return [
        TokenizedSample(label=int(rng.integers(3)), grid=rng.integers(0, k, size=(v, t)))
        for _ in range(n)
    ]


class TestMaskedContextMetrics:
    def test_reports_paired_fields(self, tiny_generator):
        out = masked_context_metrics(tiny_generator, random_samples())
        assert out["n"] == 6
        for key in ("nll_iter1", "nll_iter2", "acc_iter1", "acc_iter2", "p_value"):
            assert key in out
        assert np.isfinite(out["nll_iter1"]) and np.isfinite(out["nll_iter2"])

    def test_deterministic(self, tiny_generator):
        a = masked_context_metrics(tiny_generator, random_samples(seed=2))
        b = masked_context_metrics(tiny_generator, random_samples(seed=2))
        assert a == b


class TestLengthDistribution:
    def test_histogram_covers_range_and_sums(self, tiny_generator):
        cfg = DecodeConfig(t_max=10, seed=0)
        out = eval_length_distribution(tiny_generator, [0, 1], n_samples=30, cfg=cfg, seed=3)
        for label in (0, 1):
            hist = out["histogram"][label]
            assert len(hist) == 10  # bins for lengths 1..t_max
            assert sum(hist) == 30
        assert set(out["modes"]) == {0, 1}

    def test_zero_samples_gives_empty_histogram(self, tiny_generator):
        cfg = DecodeConfig(t_max=10, seed=0)
        out = eval_length_distribution(tiny_generator, [0], n_samples=0, cfg=cfg)
        assert sum(out["histogram"][0]) == 0
        assert out["modes"][0] == 0

    def test_deterministic_under_seed(self, tiny_generator):
        cfg = DecodeConfig(t_max=8, seed=0)
        a = eval_length_distribution(tiny_generator, [2], n_samples=20, cfg=cfg, seed=9)
        b = eval_length_distribution(tiny_generator, [2], n_samples=20, cfg=cfg, seed=9)
        assert a == b


class TestAblationSweep:
    def test_single_config_single_row(self, tiny_generator):
        rows = ablation_sweep(tiny_generator, random_samples(), [DecodeConfig(t_max=10)])
        assert len(rows) == 1
        assert rows[0]["strategy"] == "every_other"
        assert np.isfinite(rows[0]["masked_nll"])

    def test_identical_seeds_identical_table(self, tiny_generator):
        configs = [DecodeConfig(t_max=10), DecodeConfig(t_max=10, n_iterations=1)]
        a = ablation_sweep(tiny_generator, random_samples(seed=4), configs)
        b = ablation_sweep(tiny_generator, random_samples(seed=4), configs)
        assert a == b

    def test_csv_round_trip(self, tmp_path, tiny_generator):
        rows = ablation_sweep(
            tiny_generator,
            random_samples(),
            [DecodeConfig(t_max=10), DecodeConfig(t_max=10, strategy="suffix")],
        )
        path = tmp_path / "sweep.csv"
        write_sweep_csv(rows, path)
        with open(path) as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 2
        assert parsed[1]["strategy"] == "suffix"
        assert float(parsed[0]["masked_nll"]) == pytest.approx(rows[0]["masked_nll"])


class TestEvalReport:
    def test_json_round_trip(self, tmp_path):
        report = EvalReport(
            recon_mse=0.05,
            codebook_utilization=[0.5, 0.25],
            masked_nll={1: 2.0, 2: 1.5},
            mode_count={0: 2},
        )
        path = tmp_path / "report.json"
        report.to_json(path)
        import json

        raw = json.loads(path.read_text())
        assert raw["recon_mse"] == 0.05
        assert raw["masked_nll"]["1"] == 2.0
        assert raw["mode_count"]["0"] == 2
