"""Reason about Internet core connectivity: cores, islands, peninsulas, outages."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def bundled(name: str) -> Path:
    """Path to a fixture shipped with the package (``table1.csv``, ``fig1.edges``, ...)."""
    path = Path(str(resources.files("reachcore") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled fixture named {name!r}")
    return path
