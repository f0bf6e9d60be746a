"""The decode loop with schedule-based early exit.

Each step queries the provider once, aggregates top-2 logit margins over
the answer region, and tests the stop policy BEFORE committing anything.
If the aggregate clears the threshold at the current progress p = t/T,
every remaining mask is filled with the current argmax in one shot and
the decode returns; otherwise the transfer policy picks which masked
positions to commit this step. On the final budgeted step the selection
widens to all remaining masks so the output never contains a mask id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .confidence import Aggregator, MarginVector, aggregate
from .diffusion import (
    AnswerRegion,
    Canvas,
    LowConfidenceTopK,
    TransferPolicy,
    resolve_policy,
    select_positions,
)
from .errors import ProviderError
from .schedules import ThresholdSchedule, threshold, validate


@dataclass(frozen=True)
class Never:
    """Run the budget out (baseline; still finishes early if the transfer
    policy empties the canvas before step T)."""


@dataclass(frozen=True)
class ScheduledStop:
    """Exit once the aggregated margin reaches a progress-dependent
    threshold tau(p)."""

    schedule: ThresholdSchedule
    aggregator: Aggregator = Aggregator.mean()

    def __post_init__(self) -> None:
        validate(self.schedule)


@dataclass(frozen=True)
class HardThreshold:
    """Exit once the aggregated margin reaches a constant tau, after an
    optional warmup fraction of the budget has elapsed."""

    tau: float = 3.0
    warmup_fraction: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")


StopPolicy = Union[Never, ScheduledStop, HardThreshold]


@dataclass(frozen=True)
class Argmax:
    """Commit the highest-logit token."""


@dataclass(frozen=True)
class Sample:
    """Commit a categorical sample from the provider's probability row,
    sharpened by 1/temperature. Requires full rows."""

    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


CommitMode = Union[Argmax, Sample]


@dataclass(frozen=True)
class StepTrace:
    """One decode step as observed before any commit: progress, the
    aggregated margin, the effective threshold it was tested against
    (+inf when the policy cannot trigger), masked count, and the mean
    region entropy when the provider supplied one."""

    step: int
    progress: float
    margin: float
    threshold: float
    masked_remaining: int
    entropy: Optional[float] = None


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]
    steps_used: int
    exit_step: Optional[int]
    trajectory: tuple[StepTrace, ...]

    def validate(self, vocab_mask_id: Optional[int] = None, budget: Optional[int] = None) -> None:
        if self.steps_used < 1:
            raise ValueError(f"steps_used must be >= 1, got {self.steps_used}")
        if budget is not None and self.steps_used > budget:
            raise ValueError(f"steps_used {self.steps_used} exceeds budget {budget}")
        if len(self.trajectory) != self.steps_used:
            raise ValueError(
                f"trajectory length {len(self.trajectory)} != steps_used {self.steps_used}"
            )
        if vocab_mask_id is not None and vocab_mask_id in self.tokens:
            raise ValueError("decoded tokens contain the mask id")
        if self.exit_step is not None:
            if self.exit_step != self.steps_used:
                raise ValueError(f"exit_step {self.exit_step} != steps_used {self.steps_used}")
            last = self.trajectory[self.exit_step - 1]
            if not last.margin >= last.threshold:
                raise ValueError(
                    f"exit at step {self.exit_step} with margin {last.margin} below threshold {last.threshold}"
                )

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "steps_used": self.steps_used,
            "exit_step": self.exit_step,
            "trajectory": [
                {
                    "step": s.step,
                    "progress": s.progress,
                    "margin": s.margin,
                    "threshold": s.threshold if math.isfinite(s.threshold) else None,
                    "masked_remaining": s.masked_remaining,
                    "entropy": s.entropy,
                }
                for s in self.trajectory
            ],
        }


def progress(t: int, budget: int) -> float:
    """Decode progress t/T for 1 <= t <= T."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if not 1 <= t <= budget:
        raise ValueError(f"step t must be in [1, {budget}], got {t}")
    return t / budget


def effective_threshold(stop: StopPolicy, p: float) -> float:
    """The value the aggregated margin is compared against at progress p;
    +inf when the policy cannot trigger there."""
    if isinstance(stop, Never):
        return math.inf
    if isinstance(stop, ScheduledStop):
        return threshold(stop.schedule, p)
    if isinstance(stop, HardThreshold):
        return stop.tau if p >= stop.warmup_fraction else math.inf
    raise TypeError(f"unknown stop policy {stop!r}")


def evaluate_stop(stop: StopPolicy, margin: float, p: float) -> bool:
    """Stop test at progress p in (0, 1]."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"progress must be in (0, 1], got {p}")
    if isinstance(stop, Never):
        return False
    if isinstance(stop, ScheduledStop):
        return margin >= threshold(stop.schedule, p)
    if isinstance(stop, HardThreshold):
        return p >= stop.warmup_fraction and margin >= stop.tau
    raise TypeError(f"unknown stop policy {stop!r}")


def decode(
    provider,
    prompt: Sequence[int],
    gen_len: int,
    budget: int,
    *,
    transfer: Optional[TransferPolicy] = None,
    stop: StopPolicy = Never(),
    region: Optional[AnswerRegion] = None,
    commit_mode: CommitMode = Argmax(),
    seed: int = 0,
    record_entropy: bool = False,
) -> DecodeResult:
    """Run the reverse process for at most `budget` steps.

    Deterministic for fixed (provider, seed): the only randomness is the
    Sample commit mode, driven by a generator seeded with `seed`. Early
    exit always fills with argmax regardless of commit mode.
    """
    canvas = Canvas.initial(provider.vocab, prompt, gen_len, budget)
    if region is None:
        region = AnswerRegion.full(gen_len)
    region.check_within(gen_len)
    aggregator = stop.aggregator if isinstance(stop, ScheduledStop) else Aggregator.mean()
    policy = resolve_policy(transfer if transfer is not None else LowConfidenceTopK(), gen_len, budget)
    want_full = isinstance(commit_mode, Sample)
    rng = np.random.default_rng(seed)
    trajectory: list[StepTrace] = []

    for t in range(1, budget + 1):
        canvas.step = t
        try:
            bundle = provider.query(canvas, t, want_full=want_full, want_entropy=record_entropy)
        except Exception as e:
            raise ProviderError(f"provider {getattr(provider, 'name', '?')} failed at step {t}/{budget}: {e}") from e
        absent = [i for i in range(gen_len) if i not in bundle]
        if absent:
            raise ProviderError(f"provider bundle at step {t} does not cover positions {absent}")

        margins = MarginVector({i: bundle[i].margin for i in region.positions})
        g_bar = aggregate(margins, region, aggregator)
        p = progress(t, budget)
        masked = canvas.masked_positions()
        entropy = None
        if record_entropy:
            values = [bundle[i].entropy for i in region.positions]
            if all(v is not None for v in values):
                entropy = float(np.mean([float(v) for v in values]))
        trajectory.append(
            StepTrace(t, p, g_bar, effective_threshold(stop, p), len(masked), entropy)
        )

        if evaluate_stop(stop, g_bar, p):
            for i in masked:
                canvas.commit(i, bundle[i].argmax)
            return _result(canvas, t, t, trajectory)

        if t == budget:
            selected = set(masked)
        else:
            selected = select_positions(policy, canvas, {i: bundle[i].margin for i in masked})
        for i in sorted(selected):
            canvas.commit(i, _pick_token(bundle[i], commit_mode, rng))
        if canvas.is_complete():
            return _result(canvas, t, None, trajectory)

    raise AssertionError("unreachable: final step commits every remaining mask")


def _pick_token(entry, commit_mode: CommitMode, rng: np.random.Generator) -> int:
    if isinstance(commit_mode, Argmax):
        return entry.argmax
    if entry.row is None:
        raise ValueError("Sample commits need a provider that returns full probability rows")
    probs = np.asarray(entry.row, dtype=float)
    if np.any(probs < 0) or probs.sum() <= 0:
        raise ValueError("provider row is not a probability distribution")
    w = probs ** (1.0 / commit_mode.temperature)
    w = w / w.sum()
    return int(rng.choice(len(w), p=w))


def _result(canvas: Canvas, steps_used: int, exit_step: Optional[int], trajectory: list[StepTrace]) -> DecodeResult:
    result = DecodeResult(
        tokens=tuple(canvas.gen),
        steps_used=steps_used,
        exit_step=exit_step,
        trajectory=tuple(trajectory),
    )
    result.validate(vocab_mask_id=canvas.vocab.mask_id, budget=canvas.budget)
    return result
