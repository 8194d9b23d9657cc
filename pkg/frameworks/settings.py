# frameworks/settings.py
"""
Environment configuration. Values come from the process environment, optionally
seeded from a ``.env`` file in the working directory.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

DEFAULT_MNIST_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"


@dataclass(frozen=True)
class Settings:
    output_dir: Path
    cache_path: Path
    mnist_base_url: str
    workers: int
    log_level: str
    http_timeout: float


def get_settings() -> Settings:
    """Read the current environment. Called per use so tests can monkeypatch variables."""
    return Settings(
        output_dir=Path(os.getenv("RDAC_OUTPUT_DIR", "./runs")),
        cache_path=Path(os.getenv("RDAC_CACHE_PATH", "./cache/split_mnist.rdac")),
        mnist_base_url=os.getenv("RDAC_MNIST_BASE_URL", DEFAULT_MNIST_BASE_URL),
        workers=int(os.getenv("RDAC_WORKERS", "1")),
        log_level=os.getenv("RDAC_LOG_LEVEL", "INFO").upper(),
        http_timeout=float(os.getenv("RDAC_HTTP_TIMEOUT", "30")),
    )
