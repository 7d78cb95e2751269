# app/schemas/federation.py

from typing import List, Optional

from pydantic import BaseModel, Field


class DeviceRoundEntry(BaseModel):
    """What one device did and was charged for in one round."""

    round: int
    device_id: int
    bit_width: int
    bits_sent: int = Field(..., description="Payload bits M*b, header excluded")
    theta: float
    pi: float
    E_cmp: float
    E_com: float
    E_total: float
    T_cmp: float
    T_com: float
    local_loss: float
    quant_mse: float


class RoundReport(BaseModel):
    round: int
    devices: List[DeviceRoundEntry]
    total_energy: float
    total_bits: int
    mean_loss: float
    frechet: Optional[float] = Field(
        None, description="Frechet distance of global-model samples, when evaluated"
    )

    @classmethod
    def from_entries(
        cls,
        round_index: int,
        entries: List[DeviceRoundEntry],
        frechet: Optional[float] = None,
    ) -> "RoundReport":
        """Aggregate fields are plain sums over `entries` in device order."""
        total_energy = 0.0
        total_bits = 0
        loss_sum = 0.0
        for entry in entries:
            total_energy += entry.E_total
            total_bits += entry.bits_sent
            loss_sum += entry.local_loss
        return cls(
            round=round_index,
            devices=entries,
            total_energy=total_energy,
            total_bits=total_bits,
            mean_loss=loss_sum / len(entries) if entries else float("nan"),
            frechet=frechet,
        )
