"""Bundled demo studies: a full-scale DASH-style sweep definition, a small
deterministic end-to-end study, and the six-line adaptation example."""

from pathlib import Path

DEMO_DIR = Path(__file__).resolve().parent


def demo_path(name: str) -> Path:
    return DEMO_DIR / name
