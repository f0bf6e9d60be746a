"""Masked-LM backends behind one small interface.

A backend exposes ``vocab_size``, ``mask_id``, ``max_len``, ``name`` and
``logits(prompt, gen) -> FloatTensor [len(gen), vocab_size]``, computed
in a single forward pass over the concatenated sequence. ``gen`` uses the
model's own mask id at still-masked positions; wire-level mask encoding
is the server's business.

Three ways to get a backend out of ``load_model``:

* ``tiny://k=v,...`` builds the built-in transformer with a fixed seed,
  e.g. ``tiny://vocab_size=64,dim=32,layers=2,seed=0``.
* a filesystem path loads a checkpoint written by ``save_checkpoint``.
* ``hf://<model-id-or-dir>`` wraps a HuggingFace masked LM (needs the
  ``transformers`` extra; the id may be a local directory).
"""

from __future__ import annotations

import math
import os
from typing import Protocol, Sequence

import torch
from torch import nn

_TINY_DEFAULTS = {
    "vocab_size": 64,
    "dim": 64,
    "layers": 2,
    "heads": 4,
    "max_len": 256,
    "seed": 0,
}


class MaskedLMModel(Protocol):
    vocab_size: int
    mask_id: int
    max_len: int
    name: str

    def logits(self, prompt: Sequence[int], gen: Sequence[int]) -> torch.Tensor: ...


class TinyMaskedLM(nn.Module):
    """A small bidirectional transformer over a synthetic vocabulary.

    The mask token gets the extra embedding row ``vocab_size`` and is
    never predicted: the output head scores real tokens only. Weights
    are initialized from ``seed`` alone, so two processes built from the
    same spec string compute identical logits.
    """

    def __init__(
        self,
        vocab_size: int = 64,
        dim: int = 64,
        layers: int = 2,
        heads: int = 4,
        max_len: int = 256,
        seed: int = 0,
    ):
        super().__init__()
        if vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        if max_len < 1 or layers < 1:
            raise ValueError("max_len and layers must be positive")
        self.vocab_size = vocab_size
        self.mask_id = vocab_size
        self.max_len = max_len
        self.hparams = {
            "vocab_size": vocab_size,
            "dim": dim,
            "layers": layers,
            "heads": heads,
            "max_len": max_len,
            "seed": seed,
        }
        self.name = "tiny://" + ",".join(f"{k}={v}" for k, v in self.hparams.items())
        torch.manual_seed(seed)
        self.embed = nn.Embedding(vocab_size + 1, dim)
        self.pos = nn.Embedding(max_len, dim)
        layer = nn.TransformerEncoderLayer(
            d_model=dim,
            nhead=heads,
            dim_feedforward=4 * dim,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, vocab_size)
        self.eval()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        n = ids.shape[0]
        x = self.embed(ids) + self.pos(torch.arange(n))
        x = self.encoder(x.unsqueeze(0)).squeeze(0)
        return self.head(self.norm(x))

    @torch.no_grad()
    def logits(self, prompt: Sequence[int], gen: Sequence[int]) -> torch.Tensor:
        n = len(prompt) + len(gen)
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        ids = torch.tensor(list(prompt) + list(gen), dtype=torch.long)
        return self.forward(ids)[len(prompt):]


class HfMaskedLM:
    """Thin wrapper over a HuggingFace ``AutoModelForMaskedLM``.

    Token ids on the wire are the tokenizer's ids; callers do their own
    tokenization. Desk-scale convenience, not exercised by the test
    suite.
    """

    def __init__(self, model_id: str):
        try:
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as e:  # pragma: no cover
            raise ValueError("hf:// backends need the transformers package") from e
        tok = AutoTokenizer.from_pretrained(model_id)
        if tok.mask_token_id is None:
            raise ValueError(f"{model_id} has no mask token; not a masked LM")
        self._model = AutoModelForMaskedLM.from_pretrained(model_id)
        self._model.eval()
        self.vocab_size = int(self._model.config.vocab_size)
        self.mask_id = int(tok.mask_token_id)
        self.max_len = int(getattr(self._model.config, "max_position_embeddings", 512))
        self.name = f"hf://{model_id}"

    @torch.no_grad()
    def logits(self, prompt: Sequence[int], gen: Sequence[int]) -> torch.Tensor:
        n = len(prompt) + len(gen)
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        ids = torch.tensor([list(prompt) + list(gen)], dtype=torch.long)
        out = self._model(input_ids=ids, attention_mask=torch.ones_like(ids))
        return out.logits[0, len(prompt):]


def parse_tiny_spec(spec: str) -> dict:
    """Parse ``tiny://k=v,...`` into hyperparameters, defaulting the rest."""
    body = spec[len("tiny://"):]
    params = dict(_TINY_DEFAULTS)
    if body:
        for part in body.split(","):
            key, sep, value = part.partition("=")
            if not sep or key not in _TINY_DEFAULTS:
                raise ValueError(f"bad tiny:// parameter {part!r} (known: {sorted(_TINY_DEFAULTS)})")
            try:
                params[key] = int(value)
            except ValueError as e:
                raise ValueError(f"tiny:// parameter {key} must be an integer, got {value!r}") from e
    return params


def save_checkpoint(model: TinyMaskedLM, path: str) -> None:
    torch.save(
        {"format": "sched-bridge-tiny", "hparams": model.hparams, "state_dict": model.state_dict()},
        path,
    )


def _load_checkpoint(path: str) -> TinyMaskedLM:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or blob.get("format") != "sched-bridge-tiny":
        raise ValueError(f"{path} is not a sched-bridge checkpoint")
    model = TinyMaskedLM(**blob["hparams"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    model.name = os.path.basename(path)
    return model


def load_model(spec: str) -> MaskedLMModel:
    """Build a backend from a model spec string or checkpoint path."""
    if spec.startswith("tiny://"):
        return TinyMaskedLM(**parse_tiny_spec(spec))
    if spec.startswith("hf://"):
        return HfMaskedLM(spec[len("hf://"):])
    if os.path.exists(spec):
        return _load_checkpoint(spec)
    raise ValueError(f"model spec {spec!r} is neither tiny://, hf://, nor an existing file")


def entropy_cap(vocab_size: int) -> float:
    """Upper bound ln(V) on per-position entropy, for sanity checks."""
    return math.log(vocab_size)
