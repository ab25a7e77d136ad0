"""Compensated summation helpers.

All reductions run in a fixed order so results do not depend on how work
was scheduled.
"""

import math

import numpy as np


class CompensatedSum:
    """Elementwise running (Kahan) sum of equally shaped arrays with error compensation."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, x):
        y = np.asarray(x, dtype=float) - self.comp
        t = self.total + y
        with np.errstate(invalid="ignore"):
            c = t - self.total
            c -= y
        # inf - inf in the compensation term would poison later additions
        if not np.isfinite(t).all():
            c[~np.isfinite(c)] = 0.0
        self.comp = c
        self.total = t
        return self

    @property
    def value(self):
        return self.total


def weighted_sum(weights, values):
    """Correctly rounded sum of ``weights * values``."""
    prod = np.asarray(weights, dtype=float) * np.asarray(values, dtype=float)
    if not np.all(np.isfinite(prod)):
        return float(np.sum(prod))
    return math.fsum(prod.ravel().tolist())
