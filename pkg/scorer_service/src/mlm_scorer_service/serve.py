"""CLI entry point: mount a model and serve the scorer protocol."""

from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlm-scorer-service",
        description="serve a masked LM behind the /info, /tokenize, /fill protocol",
    )
    parser.add_argument("--model", required=True, help="local path or hub id of a masked LM")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8301)
    parser.add_argument("--device", default="cpu", help="torch device (default: cpu)")
    args = parser.parse_args(argv)

    import uvicorn

    from .app import create_app
    from .model import load_model

    try:
        lm = load_model(args.model, device=args.device)
    except Exception as exc:
        print(f"mlm-scorer-service: cannot load model {args.model!r}: {exc}", file=sys.stderr)
        return 1
    print(
        f"mlm-scorer-service: serving {lm.model_id} "
        f"(vocab={lm.vocab_size}, max_input_tokens={lm.max_input_tokens}) "
        f"on {args.host}:{args.port}",
        file=sys.stderr,
    )
    uvicorn.run(create_app(lm), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
