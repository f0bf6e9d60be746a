"""Newline-delimited JSON protocol between a decode engine and a model server.

One JSON object per line, UTF-8, over stdio pipes or a TCP stream. The
server speaks first with a handshake, then answers one response per
request in order:

    hello     {"type": "hello", "vocab_size": n, "mask_id": m, "name": str}
    request   {"type": "logits", "step": t, "budget": T,
               "prompt": [ids], "gen": [ids, -1 at masked positions],
               "want_full": bool, "want_entropy": bool}
    response  {"type": "logits", "positions": [{"i": idx, "argmax": id,
               "top1": x, "top2": y, "entropy": h?, "row": [..]?}, ...]}
    error     {"type": "error", "message": str}

Masked generation positions are encoded as -1 regardless of the server's
internal mask id. Floats are written as the shortest decimal that parses
back to the same double, so a serialize/parse round trip is value-exact.
An error frame in place of a response aborts the decode.
"""

from __future__ import annotations

import json
from typing import Mapping, Sequence

from .bundles import PositionLogits
from .errors import ProtocolError, TransportError

MASK_WIRE = -1

_HELLO_KEYS = {"type", "vocab_size", "mask_id", "name"}
_REQUEST_KEYS = {"type", "step", "budget", "prompt", "gen", "want_full", "want_entropy"}


def _dumps(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _loads(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"unparseable frame: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError(f"frame is not a JSON object: {line[:80]!r}")
    return obj


def _expect_type(obj: dict, expected: str) -> None:
    got = obj.get("type")
    if got == "error":
        return  # callers translate error frames themselves
    if got != expected:
        raise ProtocolError(f"expected frame type {expected!r}, got {got!r}")


def encode_hello(vocab_size: int, mask_id: int, name: str) -> str:
    return _dumps({"type": "hello", "vocab_size": int(vocab_size), "mask_id": int(mask_id), "name": str(name)})


def parse_hello(line: str) -> dict:
    obj = _loads(line)
    _expect_type(obj, "hello")
    if obj.get("type") == "error":
        raise ProtocolError(f"server sent an error instead of a handshake: {obj.get('message')}")
    missing = _HELLO_KEYS - obj.keys()
    if missing:
        raise ProtocolError(f"handshake missing fields {sorted(missing)}")
    if not isinstance(obj["vocab_size"], int) or obj["vocab_size"] < 2:
        raise ProtocolError(f"handshake vocab_size invalid: {obj['vocab_size']!r}")
    if not isinstance(obj["mask_id"], int):
        raise ProtocolError(f"handshake mask_id invalid: {obj['mask_id']!r}")
    return obj


def encode_request(
    step: int,
    budget: int,
    prompt: Sequence[int],
    gen: Sequence[int],
    want_full: bool,
    want_entropy: bool,
) -> str:
    return _dumps(
        {
            "type": "logits",
            "step": int(step),
            "budget": int(budget),
            "prompt": [int(x) for x in prompt],
            "gen": [int(x) for x in gen],
            "want_full": bool(want_full),
            "want_entropy": bool(want_entropy),
        }
    )


def parse_request(line: str) -> dict:
    obj = _loads(line)
    _expect_type(obj, "logits")
    missing = _REQUEST_KEYS - obj.keys()
    if missing:
        raise ProtocolError(f"request missing fields {sorted(missing)}")
    if not isinstance(obj["step"], int) or not isinstance(obj["budget"], int):
        raise ProtocolError("request step/budget must be integers")
    if not 1 <= obj["step"] <= obj["budget"]:
        raise ProtocolError(f"request step {obj['step']} outside [1, {obj['budget']}]")
    for key in ("prompt", "gen"):
        if not isinstance(obj[key], list) or not all(isinstance(x, int) for x in obj[key]):
            raise ProtocolError(f"request {key} must be a list of integers")
    if not obj["gen"]:
        raise ProtocolError("request gen region is empty")
    return obj


def encode_response(positions: Mapping[int, PositionLogits]) -> str:
    out = []
    for i in sorted(positions):
        e = positions[i]
        entry: dict = {"i": int(i), "argmax": int(e.argmax), "top1": float(e.top1), "top2": float(e.top2)}
        if e.entropy is not None:
            entry["entropy"] = float(e.entropy)
        if e.row is not None:
            entry["row"] = [float(x) for x in e.row]
        out.append(entry)
    return _dumps({"type": "logits", "positions": out})


def parse_response(line: str) -> dict[int, PositionLogits]:
    obj = _loads(line)
    _expect_type(obj, "logits")
    if obj.get("type") == "error":
        raise TransportError(f"server error: {obj.get('message')}")
    entries = obj.get("positions")
    if not isinstance(entries, list):
        raise ProtocolError("response has no positions list")
    bundle: dict[int, PositionLogits] = {}
    for entry in entries:
        if not isinstance(entry, dict):
            raise ProtocolError(f"response position entry is not an object: {entry!r}")
        try:
            i = int(entry["i"])
            pl = PositionLogits(
                argmax=int(entry["argmax"]),
                top1=float(entry["top1"]),
                top2=float(entry["top2"]),
                row=tuple(float(x) for x in entry["row"]) if "row" in entry else None,
                entropy=float(entry["entropy"]) if "entropy" in entry else None,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"malformed position entry {entry!r}: {e}") from e
        if i in bundle:
            raise ProtocolError(f"duplicate position {i} in response")
        if pl.top1 < pl.top2:
            raise ProtocolError(f"position {i} has top1 < top2 ({pl.top1} < {pl.top2})")
        bundle[i] = pl
    return bundle


def encode_error(message: str) -> str:
    return _dumps({"type": "error", "message": str(message)})
