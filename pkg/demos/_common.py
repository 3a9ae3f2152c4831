"""Shared helpers for the demo scripts."""

from pathlib import Path

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
