"""Server-side codec for the newline-delimited JSON logit protocol.

One JSON object per line, UTF-8. The server writes a hello frame first,
then answers exactly one response per request line, in order:

    hello     {"type": "hello", "vocab_size": n, "mask_id": m, "name": str}
    request   {"type": "logits", "step": t, "budget": T,
               "prompt": [ids], "gen": [ids, -1 at masked positions],
               "want_full": bool, "want_entropy": bool}
    response  {"type": "logits", "positions": [{"i": idx, "argmax": id,
               "top1": x, "top2": y, "entropy": h?, "row": [..]?}, ...]}
    error     {"type": "error", "message": str}

Frames are serialized canonically: keys sorted, no whitespace, floats as
the shortest decimal that parses back to the same double. Two servers
that compute the same values therefore emit byte-identical lines.

This module is deliberately self-contained so the bridge can be dropped
next to any client that speaks the same grammar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

MASK_WIRE = -1

_REQUEST_KEYS = {"type", "step", "budget", "prompt", "gen", "want_full", "want_entropy"}


class ProtocolViolation(ValueError):
    """A frame that does not follow the wire grammar."""


def dumps(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class PositionReply:
    """One generation position in a response frame.

    ``entropy`` and ``row`` are optional and omitted from the wire when
    ``None``. ``row`` is a probability distribution over the vocabulary
    (possibly truncated to its top entries and renormalized).
    """

    index: int
    argmax: int
    top1: float
    top2: float
    entropy: float | None = None
    row: tuple[float, ...] | None = None


def encode_hello(vocab_size: int, mask_id: int, name: str) -> str:
    return dumps(
        {
            "type": "hello",
            "vocab_size": int(vocab_size),
            "mask_id": int(mask_id),
            "name": str(name),
        }
    )


def encode_error(message: str) -> str:
    return dumps({"type": "error", "message": str(message)})


def encode_response(replies: Sequence[PositionReply]) -> str:
    out = []
    for r in sorted(replies, key=lambda r: r.index):
        entry: dict = {
            "i": int(r.index),
            "argmax": int(r.argmax),
            "top1": float(r.top1),
            "top2": float(r.top2),
        }
        if r.entropy is not None:
            entry["entropy"] = float(r.entropy)
        if r.row is not None:
            entry["row"] = [float(x) for x in r.row]
        out.append(entry)
    return dumps({"type": "logits", "positions": out})


def parse_request(line: str) -> dict:
    """Validate one request line and return it as a dict.

    Raises :class:`ProtocolViolation` on anything that is not a
    well-formed logits request; the server turns that into an error
    frame and keeps serving.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolViolation(f"unparseable frame: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolViolation(f"frame is not a JSON object: {line[:80]!r}")
    if obj.get("type") != "logits":
        raise ProtocolViolation(f"expected frame type 'logits', got {obj.get('type')!r}")
    missing = _REQUEST_KEYS - obj.keys()
    if missing:
        raise ProtocolViolation(f"request missing fields {sorted(missing)}")
    if not isinstance(obj["step"], int) or not isinstance(obj["budget"], int):
        raise ProtocolViolation("request step/budget must be integers")
    if not 1 <= obj["step"] <= obj["budget"]:
        raise ProtocolViolation(f"request step {obj['step']} outside [1, {obj['budget']}]")
    for key in ("prompt", "gen"):
        # bool is an int subclass; token ids must be genuine integers
        if not isinstance(obj[key], list) or not all(
            isinstance(x, int) and not isinstance(x, bool) for x in obj[key]
        ):
            raise ProtocolViolation(f"request {key} must be a list of integers")
    if not obj["gen"]:
        raise ProtocolViolation("request gen region is empty")
    if not isinstance(obj["want_full"], bool) or not isinstance(obj["want_entropy"], bool):
        raise ProtocolViolation("request want_full/want_entropy must be booleans")
    return obj


def check_token_ids(req: dict, vocab_size: int) -> None:
    """Reject requests whose token ids fall outside the model's vocabulary."""
    for x in req["prompt"]:
        if not 0 <= x < vocab_size:
            raise ProtocolViolation(f"prompt token {x} outside vocabulary [0, {vocab_size})")
    for x in req["gen"]:
        if x != MASK_WIRE and not 0 <= x < vocab_size:
            raise ProtocolViolation(f"gen token {x} outside vocabulary [0, {vocab_size})")
