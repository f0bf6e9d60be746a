"""Exception types shared across the package.

Plain input/contract violations raise ValueError with a precise message;
the classes below exist where callers need to tell failure modes apart
(CLI exit codes, harness failure records).
"""


class ConfigError(ValueError):
    """Bad CLI arguments or a malformed/inconsistent config file."""


class TransportError(RuntimeError):
    """The wire peer failed: closed stream, I/O error, or an explicit
    error frame sent by the server."""


class ProtocolError(RuntimeError):
    """The wire peer violated the protocol: unparseable frame, wrong
    message type, missing fields, or incomplete position coverage."""


class ProviderError(RuntimeError):
    """A logit provider failed during a decode; message carries the step
    at which it happened. The original exception is chained as __cause__."""


class CheckMismatch(RuntimeError):
    """A recomputed value disagreed with its expected reference."""
