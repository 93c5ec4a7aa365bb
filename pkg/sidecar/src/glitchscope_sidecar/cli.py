"""Entry point: serve one model behind the /v1 protocol."""

from __future__ import annotations

import click


@click.command()
@click.option("--model", "model_spec", default="stub:seed=0,dim=32", show_default=True,
              help="stub:seed=N,dim=D | clip:<hf checkpoint> | dinov2:<hf checkpoint>")
@click.option("--device", default="cpu", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8700, show_default=True)
def main(model_spec, device, host, port):
    import uvicorn

    from .backends import load_backend
    from .server import create_app

    backend = load_backend(model_spec, device=device)
    click.echo(f"serving {backend.model_id} (dim {backend.dim}) on http://{host}:{port}")
    uvicorn.run(create_app(backend), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
