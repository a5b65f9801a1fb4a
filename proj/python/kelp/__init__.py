"""Multi-resolution FDR control with knockoff e-values."""

from ._core import (
    Family,
    InputError,
    cli,
    ebh,
    elp,
    equicorrelated_s,
    focused_ebh,
    kelp,
    knockoff_filter,
    knockoff_stopping_time,
    partial_conjunction_evalue,
    sample_knockoffs,
    simulate,
)

__all__ = [
    "Family",
    "InputError",
    "cli",
    "ebh",
    "elp",
    "equicorrelated_s",
    "focused_ebh",
    "kelp",
    "knockoff_filter",
    "knockoff_stopping_time",
    "partial_conjunction_evalue",
    "sample_knockoffs",
    "simulate",
]
