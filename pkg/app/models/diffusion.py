# app/models/diffusion.py

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


@dataclass(frozen=True)
class Schedule:
    """
    Variance schedule beta_1..beta_T with alpha_t = 1 - beta_t and
    alpha_bar_t the running product. Index t-1 holds step t.
    """

    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for arr in (betas, alphas, alpha_bars):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])


@dataclass(frozen=True)
class Architecture:
    """2-D point plus time embedding -> hidden -> hidden -> 2-D noise estimate."""

    hidden: int = 64
    embed_dim: int = 16
    data_dim: int = 2

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        d, e, h = self.data_dim, self.embed_dim, self.hidden
        return [(d + e, h), (h,), (h, h), (h,), (h, d), (d,)]

    @property
    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes))


@dataclass
class NoiseModel:
    """Noise predictor whose weights live in one flat float64 vector."""

    arch: Architecture
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.param_count,):
            raise ValueError(
                f"expected {self.arch.param_count} parameters, "
                f"got shape {self.params.shape}"
            )

    def layers(self) -> List[np.ndarray]:
        """Views into `params`: W1, b1, W2, b2, W3, b3."""
        views, offset = [], 0
        for shape in self.arch.shapes:
            size = int(np.prod(shape))
            views.append(self.params[offset : offset + size].reshape(shape))
            offset += size
        return views

    def copy(self) -> "NoiseModel":
        return NoiseModel(arch=self.arch, params=self.params.copy())


@dataclass(frozen=True)
class Batch:
    """Training mini-batch: clean points, their steps t in [1, T] and noise."""

    x0: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    eps: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.x0.shape[0])
