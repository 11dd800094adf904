"""Audit toolkit for black-box risk scores built from observational cohort data.

Rebuilds the additive age component of a raw score from scatter lower bounds,
tests what is left over for dependence on criminal history and race, computes
group fairness rates, and flags assessments inconsistent with the
reconstructed model. A built-in synthetic generator with known ground truth
validates the whole pipeline end to end.
"""

__version__ = "0.1.0"

from . import records, subscales, lowerbound, residuals, fairness, anomalies, synthoracle, cli

__all__ = [
    "records",
    "subscales",
    "lowerbound",
    "residuals",
    "fairness",
    "anomalies",
    "synthoracle",
    "cli",
    "__version__",
]
