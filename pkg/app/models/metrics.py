# app/models/metrics.py

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianFit:
    """Mean and population covariance of a 2-D point set."""

    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("mean", "cov"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
