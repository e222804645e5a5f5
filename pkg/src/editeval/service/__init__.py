"""HTTP layer: a FastAPI app exposing scoring, ranking, and annotation."""

from .app import create_app

__all__ = ["create_app"]
