"""Synthetic labeled skeletal motion: generation, persistence, normalization.

Motion frames are planar: five joints (head, hands, feet) as (x, y) offsets
from the hip, plus a 2-d root velocity, giving D = 12 features per frame.
Every function is dimension-agnostic except the parametric family
generators, which emit the default layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import numpy_rng

DOWNSAMPLE = 4  # frames per motion token
STD_FLOOR = 1e-6
LENGTH_BOUNDS = (8, 400)  # hard bounds on requested length ranges

JOINT_NAMES = ("head", "lhand", "rhand", "lfoot", "rfoot")
REST_POSE = np.array(
    [[0.0, 0.75], [-0.45, 0.25], [0.45, 0.25], [-0.15, -0.85], [0.15, -0.85]],
    dtype=np.float64,
)
FEATURE_DIM = 2 * len(JOINT_NAMES) + 2


class ConfigurationError(ValueError):
    """Invalid generator configuration."""


class DatasetError(ValueError):
    """Malformed or inconsistent dataset file."""


@dataclass
class FrameMatrix:
    """A motion clip: (n_frames, feature_dim) float32 array plus frame rate."""

    frames: np.ndarray
    fps: int = 20

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-d, got shape {self.frames.shape}")
        if self.frames.shape[0] < DOWNSAMPLE:
            raise ValueError(f"motion needs at least {DOWNSAMPLE} frames, got {self.frames.shape[0]}")
        if not np.isfinite(self.frames).all():
            raise ValueError("frames contain non-finite values")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class MotionRecord:
    id: str
    label: int
    motion: FrameMatrix


@dataclass
class NormStats:
    """Per-feature mean/std; std floored at STD_FLOOR."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float32).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std length mismatch")
        if (self.std <= 0).any():
            raise ValueError("std must be strictly positive")

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "NormStats":
        raw = json.loads(Path(path).read_text())
        return cls(mean=np.array(raw["mean"]), std=np.array(raw["std"]))


# ---------------------------------------------------------------------------
# Parametric motion families


def _smooth_noise(rng: np.random.Generator, n: int, dim: int, scale: float) -> np.ndarray:
    """Additive low-frequency noise: white noise box-filtered over 5 frames."""
    if scale <= 0:
        return np.zeros((n, dim))
    white = rng.normal(0.0, scale, size=(n + 4, dim))
    kernel = np.ones(5) / 5.0
    return np.stack(
        [np.convolve(white[:, j], kernel, mode="valid") for j in range(dim)], axis=1
    )


def _assemble(joints: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    n = joints.shape[0]
    return np.concatenate([joints.reshape(n, -1), velocity], axis=1)


def _gait(n: int, fps: int, rng: np.random.Generator, freq: float = 1.6):
    """Shared leg/arm swing pattern for locomotion families."""
    phase = rng.uniform(0.0, 2 * math.pi)
    jitter = float(np.clip(1.0 + 0.05 * rng.normal(), 0.8, 1.2))
    ts = np.arange(n) / fps
    swing = 2 * math.pi * freq * jitter * ts + phase
    joints = np.tile(REST_POSE, (n, 1, 1))
    joints[:, 3, 0] += 0.25 * np.sin(swing)
    joints[:, 4, 0] += 0.25 * np.sin(swing + math.pi)
    joints[:, 3, 1] += 0.06 * np.maximum(0.0, np.cos(swing))
    joints[:, 4, 1] += 0.06 * np.maximum(0.0, np.cos(swing + math.pi))
    joints[:, 1, 0] += 0.12 * np.sin(swing + math.pi)
    joints[:, 2, 0] += 0.12 * np.sin(swing)
    joints[:, 0, 1] += 0.03 * np.abs(np.sin(swing))
    return joints, ts


def _fam_circle_walk(n, fps, rng):
    joints, ts = _gait(n, fps, rng)
    heading0 = rng.uniform(0.0, 2 * math.pi)
    period = 8.0 * float(np.clip(1.0 + 0.1 * rng.normal(), 0.7, 1.3))
    heading = heading0 + 2 * math.pi * ts / period
    speed = 1.2 / fps
    velocity = speed * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    return _assemble(joints, velocity)


def _fam_jump(n, fps, rng):
    phase = rng.uniform(0.0, 2 * math.pi)
    freq = 0.8 * float(np.clip(1.0 + 0.05 * rng.normal(), 0.8, 1.2))
    ts = np.arange(n) / fps
    cyc = np.sin(2 * math.pi * freq * ts + phase)
    air = np.maximum(0.0, cyc) ** 2
    joints = np.tile(REST_POSE, (n, 1, 1))
    joints[:, :, 1] += 0.25 * air[:, None]
    joints[:, 3:, 1] += 0.3 * air[:, None]  # feet tuck while airborne
    joints[:, 1:3, 1] += 0.25 * air[:, None]  # arms swing up
    joints[:, 1, 0] -= 0.1 * air
    joints[:, 2, 0] += 0.1 * air
    velocity = np.zeros((n, 2))
    return _assemble(joints, velocity)


def _fam_wave(n, fps, rng):
    phase = rng.uniform(0.0, 2 * math.pi)
    freq = 1.5 * float(np.clip(1.0 + 0.05 * rng.normal(), 0.8, 1.2))
    ts = np.arange(n) / fps
    osc = 2 * math.pi * freq * ts + phase
    joints = np.tile(REST_POSE, (n, 1, 1))
    joints[:, 2, 0] += 0.18 * np.sin(osc)
    joints[:, 2, 1] += 0.55 + 0.08 * np.cos(osc)  # hand raised overhead
    joints[:, 1, 0] += 0.02 * np.sin(0.3 * osc)
    joints[:, 0, 1] += 0.01 * np.sin(0.5 * osc)
    velocity = np.zeros((n, 2))
    return _assemble(joints, velocity)


def _fam_spin(n, fps, rng):
    phase = rng.uniform(0.0, 2 * math.pi)
    freq = 0.5 * float(np.clip(1.0 + 0.08 * rng.normal(), 0.7, 1.3))
    ts = np.arange(n) / fps
    theta = 2 * math.pi * freq * ts + phase
    joints = np.tile(REST_POSE, (n, 1, 1))
    joints[:, 1, 0] = -0.55  # arms extended
    joints[:, 2, 0] = 0.55
    joints[:, :, 0] *= np.cos(theta)[:, None]  # planar projection of the turn
    joints[:, 0, 1] += 0.02 * np.sin(2 * theta)
    velocity = np.zeros((n, 2))
    return _assemble(joints, velocity)


def _fam_walk_then_jump(n, fps, rng):
    split = max(1, min(n - 1, int(round(0.6 * n))))
    walk_joints, _ = _gait(split, fps, rng)
    walk_vel = np.zeros((split, 2))
    walk_vel[:, 0] = 1.2 / fps
    walk = _assemble(walk_joints, walk_vel)
    jump = _fam_jump(n - split, fps, rng)
    return np.concatenate([walk, jump], axis=0)


@dataclass(frozen=True)
class _Family:
    make: Callable[[int, int, np.random.Generator], np.ndarray]
    length_modes: tuple[tuple[float, float], ...]
    mode_weights: tuple[float, ...]


FAMILIES: dict[str, _Family] = {
    "circle_walk": _Family(_fam_circle_walk, ((120.0, 10.0),), (1.0,)),
    "jump": _Family(_fam_jump, ((40.0, 4.0),), (1.0,)),
    "wave": _Family(_fam_wave, ((60.0, 6.0),), (1.0,)),
    "spin": _Family(_fam_spin, ((80.0, 8.0),), (1.0,)),
    "walk_then_jump": _Family(_fam_walk_then_jump, ((48.0, 4.0), (160.0, 8.0)), (0.5, 0.5)),
}


# ---------------------------------------------------------------------------
# Generator spec and dataset generation


@dataclass
class FamilyConfig:
    name: str
    count: int
    length_modes: tuple[tuple[float, float], ...] | None = None
    mode_weights: tuple[float, ...] | None = None


@dataclass
class GeneratorSpec:
    families: list[FamilyConfig] = field(default_factory=list)
    length_range: tuple[int, int] = LENGTH_BOUNDS
    noise: float = 0.02
    fps: int = 20
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "GeneratorSpec":
        fams = [
            FamilyConfig(
                name=f["name"],
                count=int(f["count"]),
                length_modes=tuple(tuple(m) for m in f["length_modes"]) if "length_modes" in f else None,
                mode_weights=tuple(f["mode_weights"]) if "mode_weights" in f else None,
            )
            for f in raw.get("families", [])
        ]
        spec = cls(families=fams)
        for key in ("length_range", "noise", "fps", "seed"):
            if key in raw:
                setattr(spec, key, tuple(raw[key]) if key == "length_range" else raw[key])
        return spec

    @classmethod
    def from_json(cls, path: str | Path) -> "GeneratorSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _sample_length(fam: FamilyConfig, rng: np.random.Generator, length_range) -> int:
    base = FAMILIES[fam.name]
    modes = fam.length_modes or base.length_modes
    weights = fam.mode_weights or (base.mode_weights if fam.length_modes is None else None)
    if weights is None:
        weights = tuple(1.0 / len(modes) for _ in modes)
    probs = np.asarray(weights, dtype=np.float64)
    probs = probs / probs.sum()
    k = int(rng.choice(len(modes), p=probs))
    mean, std = modes[k]
    tau = int(round(rng.normal(mean, std)))
    return int(np.clip(tau, length_range[0], length_range[1]))


def generate_dataset(spec: GeneratorSpec) -> list[MotionRecord]:
    """Generate labeled motion records; deterministic for a fixed spec."""
    if not spec.families:
        raise ConfigurationError("at least one motion family must be configured")
    lo, hi = spec.length_range
    if lo < LENGTH_BOUNDS[0] or hi > LENGTH_BOUNDS[1] or lo > hi:
        raise ConfigurationError(f"length_range must lie within {LENGTH_BOUNDS}, got {spec.length_range}")
    for fam in spec.families:
        if fam.name not in FAMILIES:
            raise ConfigurationError(f"unknown family {fam.name!r}; known: {sorted(FAMILIES)}")
        if fam.count < 0:
            raise ConfigurationError(f"negative count for family {fam.name!r}")

    records: list[MotionRecord] = []
    for label, fam in enumerate(spec.families):
        for i in range(fam.count):
            rng = numpy_rng(spec.seed, "record", fam.name, label, i)
            tau = _sample_length(fam, rng, spec.length_range)
            frames = FAMILIES[fam.name].make(tau, spec.fps, rng)
            frames = frames + _smooth_noise(rng, tau, frames.shape[1], spec.noise)
            records.append(
                MotionRecord(
                    id=f"{fam.name}-{i:05d}",
                    label=label,
                    motion=FrameMatrix(frames, fps=spec.fps),
                )
            )
    return records


def label_names(spec: GeneratorSpec) -> list[str]:
    return [fam.name for fam in spec.families]


# ---------------------------------------------------------------------------
# Normalization


def compute_norm_stats(records: Sequence[MotionRecord]) -> NormStats:
    """Per-feature mean/std over all frames of all records (population std)."""
    if not records:
        raise ValueError("cannot compute stats from an empty dataset")
    stacked = np.concatenate([r.motion.frames.astype(np.float64) for r in records], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(mean=mean, std=std)


def _check_dims(motion: FrameMatrix, stats: NormStats) -> None:
    if motion.feature_dim != stats.mean.shape[0]:
        raise ValueError(
            f"feature dim {motion.feature_dim} does not match stats dim {stats.mean.shape[0]}"
        )


def normalize(motion: FrameMatrix, stats: NormStats) -> FrameMatrix:
    _check_dims(motion, stats)
    return FrameMatrix((motion.frames - stats.mean) / stats.std, fps=motion.fps)


def denormalize(motion: FrameMatrix, stats: NormStats) -> FrameMatrix:
    _check_dims(motion, stats)
    return FrameMatrix(motion.frames * stats.std + stats.mean, fps=motion.fps)


def pad_to_stride(motion: FrameMatrix, stride: int = DOWNSAMPLE) -> FrameMatrix:
    """Round the frame count to the nearest multiple of ``stride``.

    Shorter targets truncate; longer targets repeat the last frame. Ties
    round down (truncation never invents frames).
    """
    tau = motion.n_frames
    q, r = divmod(tau, stride)
    target = q * stride if r <= stride // 2 else (q + 1) * stride
    target = max(target, stride)
    if target == tau:
        return motion
    if target < tau:
        return FrameMatrix(motion.frames[:target], fps=motion.fps)
    pad = np.repeat(motion.frames[-1:], target - tau, axis=0)
    return FrameMatrix(np.concatenate([motion.frames, pad], axis=0), fps=motion.fps)


# ---------------------------------------------------------------------------
# Persistence (JSON Lines; one record per line)


def save_dataset(records: Sequence[MotionRecord], path: str | Path) -> None:
    dims = {r.motion.feature_dim for r in records}
    if len(dims) > 1:
        raise DatasetError(f"records have inconsistent feature dims: {sorted(dims)}")
    with open(path, "w") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "label": rec.label,
                        "fps": rec.motion.fps,
                        "frames": [[float(v) for v in row] for row in rec.motion.frames],
                    }
                )
                + "\n"
            )


def load_dataset(path: str | Path) -> list[MotionRecord]:
    records: list[MotionRecord] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            for key in ("id", "label", "fps", "frames"):
                if key not in raw:
                    raise DatasetError(f"line {lineno}: missing field {key!r}")
            if not isinstance(raw["label"], int) or raw["label"] < 0:
                raise DatasetError(f"line {lineno}: label must be a non-negative integer")
            try:
                motion = FrameMatrix(np.array(raw["frames"], dtype=np.float32), fps=int(raw["fps"]))
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            records.append(MotionRecord(id=str(raw["id"]), label=raw["label"], motion=motion))
    dims = {r.motion.feature_dim for r in records}
    if len(dims) > 1:
        raise DatasetError(f"records have inconsistent feature dims: {sorted(dims)}")
    return records
