"""Core state for masked-diffusion decoding.

A decode works on a canvas: an immutable prompt followed by a generation
region that starts fully masked and is progressively committed. Unmasking
is monotone; once a generation position holds a real token it is never
re-masked. The forward (corruption) process masks each position of a clean
sequence independently with per-step rates beta_t, so a token survives t
steps with probability prod_{s<=t}(1 - beta_s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Vocabulary:
    """Token id space [0, size) plus a reserved mask id outside it."""

    size: int
    mask_id: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")
        if 0 <= self.mask_id < self.size:
            raise ValueError(
                f"mask_id {self.mask_id} collides with the token range [0, {self.size})"
            )


@dataclass
class Canvas:
    """Prompt plus generation region at some step of the reverse process.

    `gen` holds vocab.mask_id at masked positions and real token ids at
    committed ones. `step` counts completed queries, bounded by `budget`.
    """

    vocab: Vocabulary
    prompt: tuple[int, ...]
    gen: list[int]
    step: int = 0
    budget: int = 1

    @classmethod
    def initial(cls, vocab: Vocabulary, prompt: Sequence[int], gen_len: int, budget: int) -> "Canvas":
        if gen_len < 1:
            raise ValueError(f"gen_len must be >= 1, got {gen_len}")
        if budget < 1:
            raise ValueError(f"budget must be >= 1, got {budget}")
        return cls(vocab, tuple(prompt), [vocab.mask_id] * gen_len, 0, budget)

    @property
    def gen_len(self) -> int:
        return len(self.gen)

    def masked_positions(self) -> list[int]:
        m = self.vocab.mask_id
        return [i for i, tok in enumerate(self.gen) if tok == m]

    def is_complete(self) -> bool:
        return self.vocab.mask_id not in self.gen

    def unmasked_fraction(self) -> float:
        return 1.0 - len(self.masked_positions()) / len(self.gen)

    def commit(self, position: int, token: int) -> None:
        """Write a real token into a currently masked position."""
        if not 0 <= position < len(self.gen):
            raise ValueError(f"position {position} outside generation region of length {len(self.gen)}")
        if self.gen[position] != self.vocab.mask_id:
            raise ValueError(f"position {position} is already committed; unmasking is monotone")
        if not 0 <= token < self.vocab.size:
            raise ValueError(f"token {token} outside vocabulary range [0, {self.vocab.size})")
        self.gen[position] = token


@dataclass(frozen=True)
class AnswerRegion:
    """Non-empty ordered set of generation-region indices that confidence
    is aggregated over (the scored span of the output)."""

    positions: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.positions) == 0:
            raise ValueError("answer region must be non-empty")
        norm = tuple(sorted(set(int(i) for i in self.positions)))
        if norm[0] < 0:
            raise ValueError(f"answer region has negative index {norm[0]}")
        object.__setattr__(self, "positions", norm)

    @classmethod
    def full(cls, gen_len: int) -> "AnswerRegion":
        return cls(tuple(range(gen_len)))

    def check_within(self, gen_len: int) -> None:
        if self.positions[-1] >= gen_len:
            raise ValueError(
                f"answer region index {self.positions[-1]} outside generation region of length {gen_len}"
            )


@dataclass(frozen=True)
class MaskingProcess:
    """Forward corruption rates, one beta per step, each in [0, 1)."""

    betas: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for s, b in enumerate(self.betas):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"beta[{s}] = {b} outside [0, 1)")

    @property
    def num_steps(self) -> int:
        return len(self.betas)


def survival_probability(process: MaskingProcess, t: int) -> float:
    """Probability a token is still unmasked after t forward steps.

    Equals prod_{s=1..t}(1 - beta_s); 1.0 at t = 0 and nonincreasing in t.
    """
    if not 0 <= t <= process.num_steps:
        raise ValueError(f"t must be in [0, {process.num_steps}], got {t}")
    out = 1.0
    for b in process.betas[:t]:
        out *= 1.0 - b
    return out


def corrupt(
    clean: Sequence[int],
    process: MaskingProcess,
    t: int,
    seed: int,
    *,
    mask_id: int,
    survival_override: float | None = None,
) -> list[int]:
    """Mask each position of `clean` independently, keeping it with the
    step-t survival probability. Deterministic for a given seed.

    `survival_override` substitutes the keep probability directly (tests
    use it to force the fully-masked case exactly).
    """
    seq = list(int(x) for x in clean)
    if mask_id in seq:
        raise ValueError("clean sequence already contains the mask id")
    alpha = survival_probability(process, t) if survival_override is None else float(survival_override)
    keep = np.random.default_rng(seed).random(len(seq)) < alpha
    return [tok if k else mask_id for tok, k in zip(seq, keep)]


@dataclass(frozen=True)
class FullSuffix:
    """Commit every masked position each step."""


@dataclass(frozen=True)
class FixedCount:
    """Commit the lowest-indexed min(per_step, remaining) masked positions.
    per_step=None resolves to ceil(gen_len / budget) at decode time."""

    per_step: int | None = None

    def __post_init__(self) -> None:
        if self.per_step is not None and self.per_step < 1:
            raise ValueError(f"per_step must be >= 1, got {self.per_step}")


@dataclass(frozen=True)
class LowConfidenceTopK:
    """Commit the min(per_step, remaining) masked positions with the
    highest margins, lowest index first on ties. per_step=None resolves
    to ceil(gen_len / budget) at decode time."""

    per_step: int | None = None

    def __post_init__(self) -> None:
        if self.per_step is not None and self.per_step < 1:
            raise ValueError(f"per_step must be >= 1, got {self.per_step}")


@dataclass(frozen=True)
class BlockDiffusion:
    """Restrict the inner policy to the lowest-indexed block that still
    contains a mask; blocks are consecutive spans of block_size positions
    filled strictly left to right."""

    block_size: int
    inner: Union[FullSuffix, FixedCount, LowConfidenceTopK] = field(default_factory=FullSuffix)

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if isinstance(self.inner, BlockDiffusion):
            raise ValueError("block policies do not nest")


TransferPolicy = Union[FullSuffix, FixedCount, LowConfidenceTopK, BlockDiffusion]


def resolve_policy(policy: TransferPolicy, gen_len: int, budget: int) -> TransferPolicy:
    """Fill in per_step defaults that depend on the decode shape."""
    auto = math.ceil(gen_len / budget)
    if isinstance(policy, FixedCount) and policy.per_step is None:
        return FixedCount(auto)
    if isinstance(policy, LowConfidenceTopK) and policy.per_step is None:
        return LowConfidenceTopK(auto)
    if isinstance(policy, BlockDiffusion):
        return BlockDiffusion(policy.block_size, resolve_policy(policy.inner, gen_len, budget))
    return policy


def select_positions(
    policy: TransferPolicy,
    canvas: Canvas,
    confidence: Mapping[int, float],
) -> set[int]:
    """Pick which masked positions to commit this step.

    `confidence` must provide a margin for every masked position. Returns
    a non-empty subset of the masked positions whenever any exist.
    """
    masked = canvas.masked_positions()
    if not masked:
        return set()
    missing = [i for i in masked if i not in confidence]
    if missing:
        raise ValueError(f"confidence is missing masked positions {missing}")
    return _select(policy, masked, confidence)


def _select(policy: TransferPolicy, masked: list[int], confidence: Mapping[int, float]) -> set[int]:
    if isinstance(policy, FullSuffix):
        return set(masked)
    if isinstance(policy, FixedCount):
        if policy.per_step is None:
            raise ValueError("FixedCount.per_step unresolved; call resolve_policy first")
        return set(sorted(masked)[: policy.per_step])
    if isinstance(policy, LowConfidenceTopK):
        if policy.per_step is None:
            raise ValueError("LowConfidenceTopK.per_step unresolved; call resolve_policy first")
        ranked = sorted(masked, key=lambda i: (-confidence[i], i))
        return set(ranked[: policy.per_step])
    if isinstance(policy, BlockDiffusion):
        first = min(i // policy.block_size for i in masked)
        block = [i for i in masked if i // policy.block_size == first]
        return _select(policy.inner, block, confidence)
    raise TypeError(f"unknown transfer policy {policy!r}")
