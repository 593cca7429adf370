"""CLI mirroring the reference worker's flags."""

import argparse
import asyncio
import json

from .worker import ExampleWorker, WorkerConfig


def main():
    parser = argparse.ArgumentParser(
        description="Example inference worker (worker WebSocket protocol)")
    parser.add_argument("--server", required=True,
                        help="e.g. ws://127.0.0.1:8000/ws/worker")
    parser.add_argument("--token", required=True)
    parser.add_argument("--worker-id", default=None)
    parser.add_argument("--capabilities", default="infer",
                        help="comma-separated; this example supports: infer")
    parser.add_argument("--params-override", default=None,
                        help="JSON detector params used instead of the model's")
    parser.add_argument("--heartbeat-interval", type=float, default=10.0)
    args = parser.parse_args()

    config = WorkerConfig(
        server_url=args.server,
        token=args.token,
        worker_id=args.worker_id,
        capabilities=tuple(c.strip() for c in args.capabilities.split(",") if c.strip()),
        params_override=json.loads(args.params_override) if args.params_override else None,
        heartbeat_interval=args.heartbeat_interval,
    )
    print(f"worker {config.worker_id} connecting to {config.server_url}")
    try:
        asyncio.run(ExampleWorker(config).run())
    except KeyboardInterrupt:
        print("worker stopped")


if __name__ == "__main__":
    main()
