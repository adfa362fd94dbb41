"""Identification tests for instrument validity and unconfoundedness."""

from ._core import (
    IdtestError,
    __version__,
    benjamini_hochberg,
    draw_sample,
    monte_carlo,
    run_command,
    run_test,
)

__all__ = [
    "IdtestError",
    "__version__",
    "benjamini_hochberg",
    "draw_sample",
    "monte_carlo",
    "run_command",
    "run_test",
]
