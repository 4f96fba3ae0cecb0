"""Serve the sidecar: ``python -m csegg_sidecar [--mode mock|real] ...``"""

from __future__ import annotations

import argparse

import uvicorn

from .app import Settings, create_app
from .backends import RealBackendConfig


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="csegg-sidecar")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8700)
    parser.add_argument("--mode", choices=["mock", "real"], default="mock")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--images-dir", help="write images here and return paths "
                                             "(shared-filesystem deployments)")
    parser.add_argument("--embedding-model", default="bert-base-uncased")
    parser.add_argument("--generation-model",
                        default="stable-diffusion-v1-5/stable-diffusion-v1-5")
    parser.add_argument("--queue-depth", type=int, default=1)
    args = parser.parse_args(argv)
    settings = Settings(
        mode=args.mode,
        seed=args.seed,
        images_dir=args.images_dir,
        real=RealBackendConfig(
            embedding_model=args.embedding_model,
            generation_model=args.generation_model,
            queue_depth=args.queue_depth,
        ),
    )
    uvicorn.run(create_app(settings), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
