"""Example out-of-process inference worker for the analysis platform."""

from .detector import detect_tile
from .worker import ExampleWorker, WorkerConfig

__all__ = ["ExampleWorker", "WorkerConfig", "detect_tile"]
