"""Serve loop: one hello, then one response per request line.

Error handling follows the protocol split:

* a malformed request (bad JSON, missing fields, token ids outside the
  vocabulary, sequence longer than the model allows) gets an error frame
  and the server keeps reading;
* a model failure mid-request gets an error frame and shuts the server
  down with a nonzero exit code, since its state is no longer trusted.

Responses cover every generation position of the request, committed
ones included: the backends are bidirectional, so committed positions
simply report their current-step logits. ``top1``/``top2`` are the two
largest raw logits; ``entropy`` is computed server-side from the full
softmax distribution in float64 and clamped to [0, ln V]. Optional
``row`` payloads are softmax probabilities, truncated to the top-k and
renormalized when the config asks for truncation (note entropy still
reflects the full distribution in that case).

The server is single-connection and answers strictly in request order;
there is no batching across requests.
"""

from __future__ import annotations

import math
import socket
import sys
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Sequence

import torch

from sched_bridge.model import MaskedLMModel, load_model
from sched_bridge.protocol import (
    MASK_WIRE,
    PositionReply,
    ProtocolViolation,
    check_token_ids,
    encode_error,
    encode_hello,
    encode_response,
    parse_request,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MODEL_FAILURE = 2


@dataclass(frozen=True)
class BridgeConfig:
    """Everything the serve loop needs besides the streams.

    ``row_top_k`` controls the optional full-row payload: ``None`` omits
    rows even when a request asks for them, ``0`` sends the full
    distribution, ``k >= 1`` sends the top-k renormalized. ``serve_entropy``
    gates the optional entropy field the same way.
    """

    model: str
    device: str = "cpu"
    transport: str = "stdio"
    host: str = "127.0.0.1"
    port: int = 0
    row_top_k: int | None = None
    serve_entropy: bool = True
    name: str | None = None

    def __post_init__(self) -> None:
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"transport must be 'stdio' or 'tcp', got {self.transport!r}")
        if self.row_top_k is not None and self.row_top_k < 0:
            raise ValueError(f"row_top_k must be None or >= 0, got {self.row_top_k}")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside [0, 65535]")


def build_replies(
    rows: torch.Tensor,
    want_full: bool,
    want_entropy: bool,
    config: BridgeConfig,
) -> list[PositionReply]:
    """Turn a [gen_len, vocab] float64 logit block into wire replies."""
    send_rows = want_full and config.row_top_k is not None
    send_entropy = want_entropy and config.serve_entropy
    cap = math.log(rows.shape[1])
    probs = torch.softmax(rows, dim=1) if (send_rows or send_entropy) else None
    replies = []
    for i in range(rows.shape[0]):
        row = rows[i]
        top2 = torch.topk(row, 2)
        entropy = None
        if send_entropy:
            entropy = float(torch.special.entr(probs[i]).sum())
            entropy = min(max(entropy, 0.0), cap)
        full = None
        if send_rows:
            p = probs[i]
            if config.row_top_k and config.row_top_k < p.shape[0]:
                kept = torch.topk(p, config.row_top_k)
                p = torch.zeros_like(p)
                p[kept.indices] = kept.values / kept.values.sum()
            full = tuple(p.tolist())
        replies.append(
            PositionReply(
                index=i,
                argmax=int(top2.indices[0]),
                top1=float(top2.values[0]),
                top2=float(top2.values[1]),
                entropy=entropy,
                row=full,
            )
        )
    return replies


def answer_request(model: MaskedLMModel, req: dict, config: BridgeConfig) -> str:
    if len(req["prompt"]) + len(req["gen"]) > model.max_len:
        raise ProtocolViolation(
            f"sequence length {len(req['prompt']) + len(req['gen'])} exceeds model max_len {model.max_len}"
        )
    check_token_ids(req, model.vocab_size)
    gen = [model.mask_id if x == MASK_WIRE else x for x in req["gen"]]
    rows = model.logits(req["prompt"], gen).detach().to("cpu", torch.float64)
    return encode_response(build_replies(rows, req["want_full"], req["want_entropy"], config))


def serve_streams(
    model: MaskedLMModel,
    config: BridgeConfig,
    lines_in: Iterable[str],
    write_line: Callable[[str], None],
) -> int:
    """Run the protocol over arbitrary line streams; returns an exit code."""
    write_line(encode_hello(model.vocab_size, model.mask_id, config.name or model.name))
    for raw in lines_in:
        line = raw.strip()
        if not line:
            continue
        try:
            req = parse_request(line)
            response = answer_request(model, req, config)
        except ProtocolViolation as e:
            write_line(encode_error(str(e)))
            continue
        except Exception as e:
            write_line(encode_error(f"model failure: {e}"))
            return EXIT_MODEL_FAILURE
        write_line(response)
    return EXIT_OK


def _writer(stream: IO[str]) -> Callable[[str], None]:
    def write_line(line: str) -> None:
        stream.write(line + "\n")
        stream.flush()

    return write_line


def serve(config: BridgeConfig) -> int:
    """Load the model and serve one session over the configured transport."""
    torch.set_num_threads(1)
    model = load_model(config.model)
    if hasattr(model, "to"):
        model.to(torch.device(config.device))
    if config.transport == "stdio":
        return serve_streams(model, config, sys.stdin, _writer(sys.stdout))
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((config.host, config.port))
        srv.listen(1)
        host, port = srv.getsockname()[:2]
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
        conn, _ = srv.accept()
        with conn:
            reader = conn.makefile("r", encoding="utf-8", newline="\n")
            writer = conn.makefile("w", encoding="utf-8", newline="\n")
            try:
                return serve_streams(model, config, reader, _writer(writer))
            finally:
                writer.close()
                reader.close()


def run_session(
    model: MaskedLMModel,
    config: BridgeConfig,
    requests: Sequence[str],
) -> list[str]:
    """Feed raw request lines through a fresh in-process session.

    Convenience for replay checks: returns every line the server wrote,
    hello included.
    """
    out: list[str] = []
    serve_streams(model, config, list(requests), out.append)
    return out
