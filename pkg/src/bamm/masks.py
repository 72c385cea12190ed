"""Attention-mask algebra for unidirectional/bidirectional causal masking.

A mask is an additive L x L bias over query/key positions: 0 where
attention is allowed, -inf otherwise. Query i may attend key j iff

    (i >= j and i not in U) or (j in U)

where U is the set of unmasked positions. U = {} recovers the standard
lower-triangular causal mask. Unmasked queries attend exactly U; masked
queries attend their prefix plus U.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import torch

NEG_INF = float("-inf")

REFINEMENT_STRATEGIES = ("every_other", "low_conf_50", "conf_below", "suffix")
EDIT_TASKS = ("inpaint", "outpaint", "prefix", "suffix", "custom")


@dataclass(frozen=True)
class SequenceLayout:
    """Position layout: condition at 0, motion tokens at 1..t, end marker at t+1."""

    t: int

    def __post_init__(self) -> None:
        if self.t < 1:
            raise ValueError(f"token length must be >= 1, got {self.t}")

    @property
    def length(self) -> int:
        return self.t + 2

    @property
    def cond_pos(self) -> int:
        return 0

    @property
    def end_pos(self) -> int:
        return self.t + 1

    @property
    def motion_positions(self) -> range:
        return range(1, self.t + 1)


class MaskSpec(NamedTuple):
    unmasked: tuple[int, ...]
    masked: tuple[int, ...]


class TrainingMask(NamedTuple):
    mode: str  # "uni" | "bi"
    unmasked: tuple[int, ...]
    masked: tuple[int, ...]


def build_causal_mask(length: int, unmasked: Iterable[int] = ()) -> torch.Tensor:
    """L x L additive bias realizing the causal-mask predicate above."""
    u = sorted(set(int(p) for p in unmasked))
    if u and (u[0] < 0 or u[-1] >= length):
        raise ValueError(f"unmasked indices {u} out of range [0, {length})")
    idx = torch.arange(length)
    in_u = torch.zeros(length, dtype=torch.bool)
    if u:
        in_u[u] = True
    allowed = ((idx[:, None] >= idx[None, :]) & ~in_u[:, None]) | in_u[None, :]
    return torch.where(allowed, 0.0, NEG_INF)


def unidirectional_mask(length: int) -> torch.Tensor:
    """Standard left-to-right mask; identical to build_causal_mask(length, ())."""
    return build_causal_mask(length, ())


def sample_training_mask(
    t: int,
    rng: torch.Generator,
    lam: float,
    ratio_range: tuple[float, float] = (0.5, 1.0),
) -> TrainingMask:
    """Sample the per-example training mask.

    With probability ``lam``: unidirectional mode, U = {} and every motion
    position counts as masked. Otherwise: bidirectional mode with a masked
    ratio drawn uniformly from ``ratio_range`` over a random subset of
    motion positions; the condition and end slots are always unmasked.
    """
    if t < 1:
        raise ValueError(f"token length must be >= 1, got {t}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    lo, hi = ratio_range
    if not (0.0 < lo <= hi <= 1.0):
        raise ValueError(f"ratio_range must satisfy 0 < lo <= hi <= 1, got {ratio_range}")

    layout = SequenceLayout(t)
    if torch.rand((), generator=rng).item() < lam:
        return TrainingMask("uni", (), tuple(layout.motion_positions))
    ratio = lo + (hi - lo) * torch.rand((), generator=rng).item()
    n_masked = max(1, int(round(ratio * t)))
    perm = torch.randperm(t, generator=rng)[:n_masked]
    masked = tuple(sorted(int(p) + 1 for p in perm))
    unmasked = tuple(sorted({0, layout.end_pos} | (set(layout.motion_positions) - set(masked))))
    return TrainingMask("bi", unmasked, masked)


def lowest_confidence_positions(
    t: int, confidences: Sequence[float], fraction: float
) -> tuple[int, ...]:
    """Positions of the floor(t * fraction) lowest confidences; ties keep the lower index."""
    if len(confidences) != t:
        raise ValueError(f"need {t} confidences, got {len(confidences)}")
    k = int(math.floor(t * fraction))
    order = sorted(range(t), key=lambda i: (confidences[i], i))
    return tuple(sorted(i + 1 for i in order[:k]))


def refinement_mask(
    t: int,
    strategy: str,
    confidences: Sequence[float] | None = None,
    threshold: float = 0.5,
) -> MaskSpec:
    """Masked/unmasked split for a refinement pass over an existing sequence."""
    layout = SequenceLayout(t)
    if strategy == "every_other":
        masked = tuple(p for p in layout.motion_positions if p % 2 == 0)
    elif strategy == "suffix":
        masked = tuple(range(1, math.ceil(t / 2) + 1))
    elif strategy in ("low_conf_50", "conf_below"):
        if confidences is None:
            raise ValueError(f"strategy {strategy!r} requires confidences")
        if strategy == "low_conf_50":
            masked = lowest_confidence_positions(t, confidences, 0.5)
        else:
            masked = tuple(p for p in layout.motion_positions if confidences[p - 1] < threshold)
    else:
        raise ValueError(f"unknown strategy {strategy!r}; known: {REFINEMENT_STRATEGIES}")
    unmasked = tuple(sorted({0, layout.end_pos} | (set(layout.motion_positions) - set(masked))))
    return MaskSpec(unmasked, masked)


def _validate_spans(spans: Sequence[tuple[int, int]], t: int) -> list[tuple[int, int]]:
    ordered = sorted((int(s), int(e)) for s, e in spans)
    prev_end = 0
    for s, e in ordered:
        if s < 1 or e > t or s > e:
            raise ValueError(f"span ({s}, {e}) out of range [1, {t}]")
        if s <= prev_end:
            raise ValueError(f"span ({s}, {e}) overlaps a previous span")
        prev_end = e
    return ordered


def edit_mask(t: int, task: str, spans: Sequence[tuple[int, int]] | None = None) -> MaskSpec:
    """Masked/unmasked split for a temporal editing task.

    inpaint keeps the first/last quarter and masks the middle; outpaint is
    the complement; prefix keeps the leading half, suffix the trailing
    half (odd lengths round the extra position into the masked side);
    custom masks exactly the given inclusive token spans.
    """
    layout = SequenceLayout(t)
    if task == "custom":
        masked_set: set[int] = set()
        for s, e in _validate_spans(spans or [], t):
            masked_set.update(range(s, e + 1))
        masked = tuple(sorted(masked_set))
    elif task in ("inpaint", "outpaint"):
        keep = t // 4
        middle = tuple(range(keep + 1, t - keep + 1))
        edges = tuple(p for p in layout.motion_positions if p not in middle)
        masked = middle if task == "inpaint" else edges
    elif task == "prefix":
        masked = tuple(range(t // 2 + 1, t + 1))
    elif task == "suffix":
        masked = tuple(range(1, math.ceil(t / 2) + 1))
    else:
        raise ValueError(f"unknown edit task {task!r}; known: {EDIT_TASKS}")
    unmasked = tuple(sorted({0, layout.end_pos} | (set(layout.motion_positions) - set(masked))))
    return MaskSpec(unmasked, masked)
