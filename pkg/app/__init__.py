"""Hash-power allocation across mining pools under CARA risk aversion."""

from __future__ import annotations

__all__ = ["__version__"]

__version__ = "0.1.0"
