"""Per-token confidence signals and their aggregation.

Margins are top-1 minus top-2 raw logit (no softmax); entropy is the
Shannon entropy of a probability row in nats, with 0*ln(0) taken as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .diffusion import AnswerRegion


class MarginVector(dict):
    """position -> nonnegative margin."""

    def __init__(self, entries: Mapping[int, float]):
        for i, g in entries.items():
            if g < 0:
                raise ValueError(f"margin at position {i} is negative ({g})")
        super().__init__(entries)


@dataclass(frozen=True)
class Aggregator:
    """Reduces region margins to one scalar: mean, min, or a nearest-rank
    quantile with q strictly inside (0, 1)."""

    kind: str
    q: float | None = None

    @classmethod
    def mean(cls) -> "Aggregator":
        return cls("mean")

    @classmethod
    def minimum(cls) -> "Aggregator":
        return cls("min")

    @classmethod
    def quantile(cls, q: float) -> "Aggregator":
        return cls("quantile", q)

    def label(self) -> str:
        return f"quantile{self.q:g}" if self.kind == "quantile" else self.kind


def token_margin(row: Sequence[float]) -> float:
    """Top-1 minus top-2 value of a logit row (length >= 2)."""
    arr = np.asarray(row, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"logit row must be 1-d with length >= 2, got shape {arr.shape}")
    top_two = np.partition(arr, arr.size - 2)[-2:]
    return float(top_two.max() - top_two.min())


def aggregate(margins: Mapping[int, float], region: AnswerRegion, aggregator: Aggregator) -> float:
    """Aggregate margins over the answer region."""
    missing = [i for i in region.positions if i not in margins]
    if missing:
        raise ValueError(f"no margin for answer-region positions {missing}")
    values = [float(margins[i]) for i in region.positions]
    if aggregator.kind == "mean":
        return float(np.mean(values))
    if aggregator.kind == "min":
        return float(min(values))
    if aggregator.kind == "quantile":
        q = aggregator.q
        if q is None or not 0.0 < q < 1.0:
            raise ValueError(f"quantile order must be in (0, 1), got {q}")
        ordered = sorted(values)
        rank = max(1, math.ceil(q * len(ordered)))  # nearest-rank
        return ordered[rank - 1]
    raise ValueError(f"unknown aggregator kind {aggregator.kind!r}")


def token_entropy(prob_row: Sequence[float]) -> float:
    """Entropy in nats of one probability row.

    The row must be nonnegative and sum to 1 within 1e-9; it is
    renormalized internally before the sum, and 0*ln(0) contributes 0.
    """
    arr = np.asarray(prob_row, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"probability row must be 1-d and non-empty, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("probability row has a negative entry")
    total = float(arr.sum())
    if total <= 0.0:
        raise ValueError("probability row sums to zero")
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"probability row sums to {total}, not 1 within 1e-9")
    p = arr / total
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mean_entropy(rows: Mapping[int, Sequence[float]], region: AnswerRegion) -> float:
    """Mean per-token entropy over the answer region."""
    missing = [i for i in region.positions if i not in rows]
    if missing:
        raise ValueError(f"no distribution for answer-region positions {missing}")
    return float(np.mean([token_entropy(rows[i]) for i in region.positions]))


def mean_of(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise ValueError("cannot average an empty collection")
    return float(np.mean(vals))
