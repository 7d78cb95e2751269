# app/schemas/allocation.py

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field


class SplitBounds(BaseModel):
    """
    Lower bounds on the computation share theta and communication share pi,
    plus the upper caps induced by f_min and P_min.
    """

    model_config = ConfigDict(frozen=True)

    theta_min: float = Field(..., ge=0, description="I*D*C / (f_max * T_max)")
    pi_min: float = Field(..., ge=0, description="bits / (T_max * rate(P_max))")
    theta_cap: float = Field(..., gt=0, le=1, description="min(1, IDC/(f_min*T))")
    pi_cap: float = Field(..., ge=0, le=1, description="min(1, bits/(T*rate(P_min)))")
    bits: int = Field(..., ge=0, description="Payload bits M*b")

    @property
    def feasible(self) -> bool:
        return self.theta_min + self.pi_min <= 1.0


class AllocationDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    device_id: Optional[int] = None
    theta: float
    pi: float
    nu: float = Field(
        ..., ge=0, description="Lagrange multiplier; 0 for non-optimised splits"
    )
    levels: int
    bit_width: int
    payload_bits: int
    f: float
    P: float
    E_cmp: float
    E_com: float
    E_total: float
    T_cmp: float
    T_com: float
    clamped_theta: bool = False
    clamped_pi: bool = False


class NuTraceRow(BaseModel):
    iteration: int
    nu_lo: float
    nu_hi: float
    theta: float
    pi: float
    E_total: float


class NuTrace(BaseModel):
    """Outer-search history; the width nu_hi - nu_lo halves per row."""

    rows: List[NuTraceRow] = Field(default_factory=list)
    nu_scale: float = Field(
        1.0, gt=0, description="Initial nu_hi; widths are normalised by it"
    )

    def __len__(self) -> int:
        return len(self.rows)
