"""Dyadic grids on which surface arithmetic is exact.

Values that are integer multiples of ``2**-k`` and smaller than
``2**(52 - k)`` in magnitude add and subtract without rounding.  Snapping both
potential-outcome surfaces onto one such grid makes ``mu1 = mu0 + tau``
recover ``tau`` as ``mu1 - mu0`` bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

#: bits kept free above the largest magnitude, so sums of two values stay exact
HEADROOM = 2


def grid_exponent(*arrays) -> int:
    """Largest ``k`` such that every sum of two of the values stays exact on ``2**-k``."""
    peak = max(float(np.max(np.abs(a))) if np.size(a) else 0.0 for a in arrays)
    top = math.frexp(peak)[1] if peak > 0 else 0
    return 52 - top - HEADROOM


def snap(values, k: int) -> np.ndarray:
    """Round to the nearest multiple of ``2**-k``."""
    return np.ldexp(np.rint(np.ldexp(np.asarray(values, dtype=float), k)), -k)
