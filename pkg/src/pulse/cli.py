"""Command line entry points: `pulse serve` and `pulse worker`."""

from __future__ import annotations

import asyncio
import json
import secrets
import sys
from pathlib import Path

import click

from .config import load_config, load_tokens


@click.group()
def main():
    """Collaborative satellite image analysis platform."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML or JSON config file.")
@click.option("--addr", default=None, help="host:port to bind (PULSE_ADDR).")
@click.option("--data-dir", default=None, help="Data directory (PULSE_DATA_DIR).")
@click.option("--tokens-file", default=None,
              help="Token -> user JSON/TOML file (PULSE_TOKENS_FILE).")
@click.option("--static-dir", default=None,
              help="Directory with the built web UI to serve at /.")
@click.option("--with-worker/--no-worker", default=True,
              help="Run the reference worker in-process.")
def serve(config_path, addr, data_dir, tokens_file, static_dir, with_worker):
    """Run the API service (HTTP + WebSocket)."""
    import uvicorn

    from .platform import Platform
    from .service import create_app

    cfg = load_config(config_path)
    if addr:
        cfg.addr = addr
    if data_dir:
        cfg.data_dir = data_dir
    if tokens_file:
        cfg.tokens_file = tokens_file
    cfg.worker_enabled = with_worker

    tokens = load_tokens(cfg.tokens_file)
    if not tokens:
        token = secrets.token_urlsafe(16)
        tokens = {token: "dev"}
        click.echo(f"no tokens file configured; ephemeral token: {token}")

    Path(cfg.data_dir).mkdir(parents=True, exist_ok=True)
    platform = Platform(cfg.data_dir, heartbeat_timeout=cfg.heartbeat_timeout,
                        max_attempts=cfg.max_attempts)
    app = create_app(platform, tokens, config=cfg,
                     start_worker=cfg.worker_enabled, static_dir=static_dir)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")


@main.command()
@click.option("--server", required=True,
              help="Worker WebSocket endpoint, e.g. ws://127.0.0.1:8000/ws/worker")
@click.option("--token", required=True, help="Bearer token.")
@click.option("--worker-id", default=None)
@click.option("--capabilities", default="infer,adapt",
              help="Comma-separated job kinds (wire-executable: infer, adapt).")
@click.option("--heartbeat-interval", default=10.0, type=float)
def worker(server, token, worker_id, capabilities, heartbeat_interval):
    """Run a standalone worker against a remote service."""
    from .wire import WireWorker

    caps = tuple(c.strip() for c in capabilities.split(",") if c.strip())
    w = WireWorker(server, token, worker_id=worker_id, capabilities=caps,
                   heartbeat_interval=heartbeat_interval)
    click.echo(f"worker {w.worker_id} connecting to {server} "
               f"(capabilities: {', '.join(caps)})")
    try:
        asyncio.run(w.run())
    except KeyboardInterrupt:
        click.echo("worker stopped")


@main.command("make-tokens")
@click.argument("users", nargs=-1, required=True)
@click.option("--out", type=click.Path(), default="tokens.json")
def make_tokens(users, out):
    """Generate a tokens file for the given user names."""
    tokens = {secrets.token_urlsafe(16): user for user in users}
    Path(out).write_text(json.dumps(tokens, indent=2))
    click.echo(f"wrote {len(tokens)} tokens to {out}")
    for token, user in tokens.items():
        click.echo(f"  {user}: {token}")


if __name__ == "__main__":
    sys.exit(main())
