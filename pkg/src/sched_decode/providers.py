"""Logit providers: everything the decode engine knows about a model.

A provider exposes a vocabulary and answers one query per step with a
bundle covering every generation-region position, deterministically for
a given (seed, canvas, step). Three implementations live here:

  * OracleProvider   -- synthetic model with a known answer and tunable
                        confidence growth, noise, and early-error behavior;
  * NgramProvider    -- character bigram/unigram model fit on a tiny corpus,
                        the only provider here with real full rows;
  * WireProvider     -- client for the newline-delimited JSON protocol in
                        sched_decode.wire (stdio pipe or TCP).
"""

from __future__ import annotations

import math
import socket
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Optional, Protocol, Sequence

import numpy as np

from . import wire
from .bundles import LogitBundle, PositionLogits
from .diffusion import Canvas, Vocabulary
from .engine import DecodeResult
from .errors import ProtocolError, TransportError


class LogitProvider(Protocol):
    """Structural interface the engine decodes against."""

    vocab: Vocabulary
    name: str
    concurrent_safe: bool

    def query(self, canvas: Canvas, step: int, *, want_full: bool = False, want_entropy: bool = False) -> LogitBundle:
        ...


class Growth(str, Enum):
    """What drives oracle confidence upward."""

    UNMASKED_FRACTION = "unmasked-fraction"
    STEP_LINEAR = "step-linear"


@dataclass(frozen=True)
class OracleConfig:
    """Synthetic-model knobs.

    Margins climb from margin_floor toward margin_ceil as the growth
    driver u goes 0 -> 1, with optional Gaussian noise (floored at
    margin_floor). A distractor_error_rate fraction of positions argmax
    to a wrong token until u reaches stabilization_fraction, after which
    the oracle always argmaxes the true token. Entropy decays as
    ln(vocab) * exp(-entropy_decay * u).
    """

    truth: tuple[int, ...]
    vocab: Vocabulary
    margin_floor: float = 0.0
    margin_ceil: float = 9.0
    growth: Growth = Growth.UNMASKED_FRACTION
    noise_sd: float = 0.0
    distractor_error_rate: float = 0.0
    stabilization_fraction: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "truth", tuple(int(x) for x in self.truth))
        if not self.truth:
            raise ValueError("oracle truth must be non-empty")
        for x in self.truth:
            if not 0 <= x < self.vocab.size:
                raise ValueError(f"truth token {x} outside vocabulary [0, {self.vocab.size})")
        if self.margin_floor < 0:
            raise ValueError(f"margin_floor must be >= 0, got {self.margin_floor}")
        if not self.margin_ceil > self.margin_floor:
            raise ValueError("margin_ceil must exceed margin_floor")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0.0 <= self.distractor_error_rate <= 1.0:
            raise ValueError(f"distractor_error_rate must be in [0, 1], got {self.distractor_error_rate}")
        if not 0.0 < self.stabilization_fraction <= 1.0:
            raise ValueError(
                f"stabilization_fraction must be in (0, 1], got {self.stabilization_fraction}"
            )


class OracleProvider:
    """Deterministic synthetic provider with a known target sequence.

    Pure in (seed, canvas, step): noise is keyed by (seed, step) and the
    set of error-prone positions is fixed by the seed, so repeated queries
    on the same canvas and step return identical bundles.
    """

    concurrent_safe = True

    def __init__(self, config: OracleConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        self.vocab = config.vocab
        self.name = "oracle"
        n = len(config.truth)
        rng = np.random.default_rng([self.seed, 0xE1])
        wrong = rng.random(n) < config.distractor_error_rate
        offsets = rng.integers(1, config.vocab.size, size=n)  # in [1, size), never 0 mod size
        self._wrong = wrong
        self._distractor = tuple(
            int((t + o) % config.vocab.size) for t, o in zip(config.truth, offsets)
        )

    def query(self, canvas: Canvas, step: int, *, want_full: bool = False, want_entropy: bool = False) -> LogitBundle:
        cfg = self.config
        n = canvas.gen_len
        if n != len(cfg.truth):
            raise ValueError(f"canvas gen length {n} != oracle truth length {len(cfg.truth)}")
        if not 1 <= step <= canvas.budget:
            raise ValueError(f"step {step} outside [1, {canvas.budget}]")
        if cfg.growth is Growth.UNMASKED_FRACTION:
            u = canvas.unmasked_fraction()
        else:
            u = step / canvas.budget
        if cfg.noise_sd > 0:
            noise = np.random.default_rng([self.seed, 0xA2, step]).normal(0.0, cfg.noise_sd, n)
        else:
            noise = np.zeros(n)
        stable_margin = cfg.margin_floor + (cfg.margin_ceil - cfg.margin_floor) * u
        settled = u >= cfg.stabilization_fraction
        ent = math.log(cfg.vocab.size) * math.exp(-3.0 * u) if want_entropy else None
        bundle: LogitBundle = {}
        for i in range(n):
            wrong_now = bool(self._wrong[i]) and not settled
            base = cfg.margin_floor if wrong_now else stable_margin
            margin = max(cfg.margin_floor, base + float(noise[i]))
            tok = self._distractor[i] if wrong_now else cfg.truth[i]
            bundle[i] = PositionLogits(argmax=tok, top1=margin, top2=0.0, entropy=ent)
        return bundle


def oracle_truth_accuracy(result: DecodeResult, truth: Sequence[int]) -> float:
    """Fraction of decoded tokens equal to the oracle truth."""
    if len(result.tokens) != len(truth):
        raise ValueError(f"decoded length {len(result.tokens)} != truth length {len(truth)}")
    return float(np.mean([a == b for a, b in zip(result.tokens, truth)]))


class NgramProvider:
    """Character bigram model with add-one smoothing and a unigram fallback.

    Characters of the corpus become the vocabulary (sorted order defines
    ids; mask id is one past the end). A masked or out-of-range left
    neighbor drops the prediction to the unigram distribution. Rows are
    real probability vectors, so this provider supports full rows, sampled
    commits, and row-consistent entropies.
    """

    concurrent_safe = True

    def __init__(self, corpus: str, order: int = 2):
        if not corpus:
            raise ValueError("corpus must be non-empty")
        if order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {order}")
        self.order = order
        chars = sorted(set(corpus))
        if len(chars) < 2:
            raise ValueError("corpus must contain at least 2 distinct characters")
        self._id = {c: i for i, c in enumerate(chars)}
        self._char = chars
        size = len(chars)
        self.vocab = Vocabulary(size=size, mask_id=size)
        self.name = f"{'bigram' if order == 2 else 'unigram'}:{len(corpus)}ch"
        uni = np.ones(size)  # add-one smoothing
        bi = np.ones((size, size))
        ids = [self._id[c] for c in corpus]
        for tok in ids:
            uni[tok] += 1.0
        for a, b in zip(ids, ids[1:]):
            bi[a, b] += 1.0
        self._unigram = uni / uni.sum()
        self._bigram = bi / bi.sum(axis=1, keepdims=True)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._id[c] for c in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} not in corpus vocabulary") from None

    def decode_text(self, ids: Sequence[int]) -> str:
        return "".join(self._char[i] for i in ids)

    def query(self, canvas: Canvas, step: int, *, want_full: bool = False, want_entropy: bool = False) -> LogitBundle:
        if canvas.vocab.size != self.vocab.size:
            raise ValueError("canvas vocabulary does not match the corpus vocabulary")
        mask = canvas.vocab.mask_id
        bundle: LogitBundle = {}
        for i in range(canvas.gen_len):
            left = canvas.gen[i - 1] if i > 0 else (canvas.prompt[-1] if canvas.prompt else mask)
            if self.order == 2 and left != mask and 0 <= left < self.vocab.size:
                probs = self._bigram[left]
            else:
                probs = self._unigram
            order = np.argsort(probs, kind="stable")
            best, second = int(order[-1]), int(order[-2])
            # ties argmax to the lowest id, matching np.argmax
            if probs[second] == probs[best] and second < best:
                best, second = second, best
            entry = PositionLogits(
                argmax=best,
                top1=float(np.log(probs[best])),
                top2=float(np.log(probs[second])),
                row=tuple(float(x) for x in probs) if want_full else None,
                entropy=float(-np.sum(probs * np.log(probs))) if want_entropy else None,
            )
            bundle[i] = entry
        return bundle


class WireProvider:
    """Client side of the wire protocol; serializes one request per step.

    Construct via spawn() for a stdio subprocess server or connect() for
    TCP. The server's handshake fixes the vocabulary. Error frames raise
    TransportError; malformed traffic raises ProtocolError.
    """

    concurrent_safe = False

    def __init__(self, reader: IO[str], writer: IO[str], *, child: Optional[subprocess.Popen] = None,
                 sock: Optional[socket.socket] = None):
        self._reader = reader
        self._writer = writer
        self._child = child
        self._sock = sock
        line = self._readline("handshake")
        hello = wire.parse_hello(line)
        self.vocab = Vocabulary(size=hello["vocab_size"], mask_id=hello["mask_id"])
        self.name = hello["name"]

    @classmethod
    def spawn(cls, cmd: Sequence[str]) -> "WireProvider":
        try:
            child = subprocess.Popen(
                list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        except OSError as e:
            raise TransportError(f"could not spawn server {cmd!r}: {e}") from e
        assert child.stdout is not None and child.stdin is not None
        return cls(child.stdout, child.stdin, child=child)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "WireProvider":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise TransportError(f"could not connect to {host}:{port}: {e}") from e
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        writer = sock.makefile("w", encoding="utf-8", newline="\n")
        return cls(reader, writer, sock=sock)

    def _readline(self, what: str) -> str:
        try:
            line = self._reader.readline()
        except OSError as e:
            raise TransportError(f"read failed while waiting for {what}: {e}") from e
        if not line:
            raise TransportError(f"server closed the stream before sending a {what}")
        return line

    def query(self, canvas: Canvas, step: int, *, want_full: bool = False, want_entropy: bool = False) -> LogitBundle:
        mask = canvas.vocab.mask_id
        gen_wire = [wire.MASK_WIRE if tok == mask else tok for tok in canvas.gen]
        request = wire.encode_request(step, canvas.budget, canvas.prompt, gen_wire, want_full, want_entropy)
        try:
            self._writer.write(request + "\n")
            self._writer.flush()
        except OSError as e:
            raise TransportError(f"write failed at step {step}: {e}") from e
        bundle = wire.parse_response(self._readline("response"))
        missing = [i for i in range(canvas.gen_len) if i not in bundle]
        if missing:
            raise ProtocolError(f"response does not cover generation positions {missing}")
        extra = [i for i in bundle if not 0 <= i < canvas.gen_len]
        if extra:
            raise ProtocolError(f"response covers positions {extra} outside the generation region")
        return bundle

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._child is not None:
            try:
                self._child.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._child.kill()
                self._child.wait()

    def __enter__(self) -> "WireProvider":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
