# app/schemas/quant.py

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_core import PydanticCustomError


class ErrorDemand(BaseModel):
    """
    A device's quantization demand: delta bounds E||w||^2, Delta is the
    squared error it tolerates. Positivity is checked by level_for_demand.
    """

    model_config = ConfigDict(frozen=True)

    delta: float
    Delta: float


class QuantSpec(BaseModel):
    """
    Symmetric uniform grid of `levels` points on [grid_lo, grid_hi].
    """

    model_config = ConfigDict(frozen=True)

    levels: int = Field(..., ge=2, description="Number of grid points, power of two")
    scale: float = Field(..., gt=0, description="Scale factor a (= grid_hi)")
    grid_lo: float
    grid_hi: float

    @model_validator(mode="after")
    def check_grid(self):
        if self.levels & (self.levels - 1):
            raise PydanticCustomError("invalid_levels", "levels must be a power of two")
        if not (math.isfinite(self.grid_lo) and math.isfinite(self.grid_hi)):
            raise PydanticCustomError("invalid_grid", "grid bounds must be finite")
        if self.grid_lo >= self.grid_hi:
            raise PydanticCustomError("invalid_grid", "grid_lo must be < grid_hi")
        return self

    @property
    def bits(self) -> int:
        return self.levels.bit_length() - 1

    @property
    def step(self) -> float:
        return (self.grid_hi - self.grid_lo) / (self.levels - 1)


class ErrorReport(BaseModel):
    """Monte Carlo quantization error against the delta/(2L^2) bound."""

    mse: float
    bound: float
    ratio: float
