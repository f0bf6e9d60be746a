"""Serve masked-LM logits over a line-delimited JSON wire protocol.

The package has three layers:

* :mod:`sched_bridge.model` loads the model (a small built-in
  bidirectional masked LM, a saved checkpoint, or optionally a
  HuggingFace masked LM) behind one uniform ``logits(prompt, gen)``
  interface.
* :mod:`sched_bridge.protocol` encodes and parses the wire frames.
* :mod:`sched_bridge.server` runs the serve loop over stdio or a TCP
  socket.

Decoders talk to the bridge purely over the wire protocol; nothing in
here imports the decoding engine.
"""

from sched_bridge.model import MaskedLMModel, TinyMaskedLM, load_model
from sched_bridge.protocol import ProtocolViolation
from sched_bridge.server import BridgeConfig, serve, serve_streams

__all__ = [
    "BridgeConfig",
    "MaskedLMModel",
    "ProtocolViolation",
    "TinyMaskedLM",
    "load_model",
    "serve",
    "serve_streams",
]
