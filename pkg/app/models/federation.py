# app/models/federation.py

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from app.models.diffusion import NoiseModel, Schedule
from app.models.quant import QuantizedPayload
from app.schemas.allocation import AllocationDecision
from app.schemas.config import RunConfig
from app.schemas.device import ChannelParams, DeviceProfile
from app.schemas.federation import RoundReport


@dataclass(frozen=True)
class LocalUpdate:
    """
    A device's upload as the server reconstructs it. `payload` is None
    for full-precision uploads.
    """

    weights: np.ndarray = field(repr=False)
    payload: Optional[QuantizedPayload]
    bit_width: int
    local_loss: float
    quant_mse: float


@dataclass
class FederationState:
    config: RunConfig
    quant_mode: str
    schedule: Schedule
    model: NoiseModel
    datasets: List[np.ndarray] = field(repr=False)
    reference: np.ndarray = field(repr=False)
    profiles: List[DeviceProfile]
    channels: List[ChannelParams]
    bit_widths: List[int]
    decisions: List[AllocationDecision]
    rounds_done: int = 0

    @property
    def K(self) -> int:
        return len(self.datasets)


@dataclass
class RunLedger:
    mode: str
    seed: int
    rounds: List[RoundReport]
    final_params: np.ndarray = field(repr=False)
    config: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def total_energy(self) -> float:
        return float(sum(r.total_energy for r in self.rounds))

    @property
    def total_bits(self) -> int:
        return int(sum(r.total_bits for r in self.rounds))

    @property
    def final_frechet(self) -> Optional[float]:
        for report in reversed(self.rounds):
            if report.frechet is not None:
                return report.frechet
        return None
