"""FastAPI service wrapping the core engine."""

from .app import create_app

__all__ = ["create_app"]
