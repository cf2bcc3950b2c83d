"""
Percentile bootstrap confidence intervals.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from ..errors import InputError

logger = logging.getLogger(__name__)

DEFAULT_RESAMPLES = 1000
PERCENTILES = (2.5, 97.5)


@dataclass
class BootstrapCI:
    lower: float
    upper: float
    n_resamples: int
    percentiles: Tuple[float, float] = PERCENTILES

    def __post_init__(self):
        if self.n_resamples < 1:
            raise InputError(f"n_resamples must be >= 1, got {self.n_resamples}")
        if self.lower > self.upper:
            raise InputError(f"CI lower bound {self.lower} exceeds upper bound {self.upper}")


def bootstrap_ci(
    scores: Sequence,
    aggregate: Callable[[np.ndarray], float] = np.mean,
    n_resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> BootstrapCI:
    """
    Percentile bootstrap over per-sample scores.

    Each resample draws len(scores) rows with replacement; rows may be
    vectors (e.g. prediction and label columns) when `aggregate` needs them.

    Args:
        scores: Per-sample scores, first axis indexes samples
        aggregate: Statistic computed on every resample
        n_resamples: Number of resamples
        rng: Generator; a fresh one seeded with `seed` when omitted
        seed: Seed used when rng is None

    Returns:
        BootstrapCI at the 2.5th and 97.5th percentiles

    Raises:
        InputError: No scores or n_resamples < 1
    """
    values = np.asarray(scores, dtype=np.float64)
    if values.ndim == 0 or len(values) == 0:
        raise InputError("bootstrap_ci needs at least one score")
    if n_resamples < 1:
        raise InputError(f"n_resamples must be >= 1, got {n_resamples}")
    rng = rng if rng is not None else np.random.default_rng(seed)

    n = len(values)
    indices = rng.integers(0, n, size=(n_resamples, n))
    aggregates = np.sort(np.array([float(aggregate(values[idx])) for idx in indices]))
    lower, upper = np.percentile(aggregates, PERCENTILES)
    return BootstrapCI(float(lower), float(max(lower, upper)), n_resamples)
