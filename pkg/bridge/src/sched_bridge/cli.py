"""Command line entry point.

    sched-bridge --model tiny://vocab_size=64,dim=32,layers=2,seed=0
    sched-bridge --model weights.pt --transport tcp --host 127.0.0.1 --port 9300
    sched-bridge --model tiny://seed=3 --save-checkpoint weights.pt

Serves stdio by default. Exit codes: 0 clean end of stream, 1 bad
configuration or arguments, 2 model failure mid-session.
"""

from __future__ import annotations

import argparse
import sys

from sched_bridge.model import TinyMaskedLM, load_model, save_checkpoint
from sched_bridge.server import EXIT_CONFIG, BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sched-bridge",
        description="serve masked-LM logits over line-delimited JSON (stdio or TCP)",
    )
    parser.add_argument(
        "--model",
        required=True,
        help="tiny://k=v,... spec, checkpoint path, or hf://model-id",
    )
    parser.add_argument("--device", default="cpu", help="torch device (default: cpu)")
    parser.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    parser.add_argument("--host", default="127.0.0.1", help="tcp bind host")
    parser.add_argument("--port", type=int, default=0, help="tcp port; 0 picks a free one")
    parser.add_argument(
        "--row-top-k",
        type=int,
        default=None,
        metavar="K",
        help="answer want_full with probability rows; 0 sends full rows, K>=1 top-K renormalized (default: omit rows)",
    )
    parser.add_argument(
        "--no-entropy",
        action="store_true",
        help="omit entropy fields even when requests ask for them",
    )
    parser.add_argument("--name", default=None, help="override the handshake name")
    parser.add_argument(
        "--save-checkpoint",
        metavar="PATH",
        default=None,
        help="write the built tiny model to PATH and exit instead of serving",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else EXIT_CONFIG
    try:
        config = BridgeConfig(
            model=args.model,
            device=args.device,
            transport=args.transport,
            host=args.host,
            port=args.port,
            row_top_k=args.row_top_k,
            serve_entropy=not args.no_entropy,
            name=args.name,
        )
        if args.save_checkpoint is not None:
            model = load_model(config.model)
            if not isinstance(model, TinyMaskedLM):
                raise ValueError("--save-checkpoint only applies to tiny:// models")
            save_checkpoint(model, args.save_checkpoint)
            print(f"saved {model.name} ({model.num_parameters()} params) to {args.save_checkpoint}")
            return 0
        return serve(config)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
