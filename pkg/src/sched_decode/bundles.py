"""Per-position logit evidence returned by providers.

The minimal contract per generation position is the argmax token and the
two largest logits; a full probability row and a precomputed entropy are
optional extras. A bundle maps position index -> PositionLogits and must
cover every generation-region position.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Tuple

from .confidence import token_entropy


class PositionLogits(NamedTuple):
    argmax: int
    top1: float
    top2: float
    row: Optional[Tuple[float, ...]] = None
    entropy: Optional[float] = None

    @property
    def margin(self) -> float:
        return self.top1 - self.top2


LogitBundle = dict  # position index -> PositionLogits


def validate_bundle(bundle: LogitBundle, gen_len: int, vocab_size: int | None = None) -> None:
    """Check coverage and internal consistency of a provider bundle."""
    missing = [i for i in range(gen_len) if i not in bundle]
    if missing:
        raise ValueError(f"bundle does not cover generation positions {missing}")
    for i, e in bundle.items():
        if e.top1 < e.top2:
            raise ValueError(f"position {i}: top1 < top2 ({e.top1} < {e.top2})")
        if vocab_size is not None and not 0 <= e.argmax < vocab_size:
            raise ValueError(f"position {i}: argmax {e.argmax} outside vocabulary [0, {vocab_size})")
        if e.row is not None and vocab_size is not None and len(e.row) == vocab_size:
            top = max(e.row)
            if e.row[e.argmax] != top:
                raise ValueError(f"position {i}: argmax {e.argmax} does not maximize the row")
            if e.entropy is not None and abs(e.entropy - token_entropy(e.row)) > 1e-9:
                raise ValueError(f"position {i}: entropy {e.entropy} inconsistent with its row")
