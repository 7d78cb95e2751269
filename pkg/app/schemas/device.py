# app/schemas/device.py

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_core import PydanticCustomError

from app.schemas.quant import ErrorDemand
from app.utils.units import dbm_per_mhz_to_w_per_hz


class DeviceProfile(BaseModel):
    """
    Compute, power, demand and budget parameters of one edge device.
    Aliases are the short symbols used in config files.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    iterations: int = Field(1, alias="I", ge=1, description="Local iterations")
    data_size: int = Field(512, alias="D", ge=1, description="Samples per round")
    workload: float = Field(
        3.25e6, alias="C", gt=0, description="CPU cycles per sample"
    )
    f_min: float = Field(1e6, gt=0, description="Minimum CPU frequency (Hz)")
    f_max: float = Field(1e9, gt=0, description="Maximum CPU frequency (Hz)")
    tau: float = Field(1e-26, ge=0, description="Effective capacitance coefficient")
    P_min: float = Field(1e-9, gt=0, description="Minimum transmit power (W)")
    P_max: float = Field(1.0, gt=0, description="Maximum transmit power (W)")
    delta: float = Field(
        8192.0, gt=0, description="Bound on E||w||^2 (uploaded weights)"
    )
    Delta: float = Field(
        0.5, gt=0, description="Tolerated squared quantization error"
    )
    T_max: float = Field(15.0, alias="T_max_s", gt=0, description="Round budget (s)")
    model_size: int = Field(
        37_000_000, alias="M", ge=1, description="Parameter count"
    )

    @model_validator(mode="after")
    def check_bounds(self):
        if self.f_min > self.f_max:
            raise PydanticCustomError("invalid_frequency", "f_min must be <= f_max")
        if self.P_min > self.P_max:
            raise PydanticCustomError("invalid_power", "P_min must be <= P_max")
        return self

    @property
    def cycles(self) -> float:
        """I*D*C, the cycles of one round of local training."""
        return self.iterations * self.data_size * self.workload

    @property
    def demand(self) -> ErrorDemand:
        return ErrorDemand(delta=self.delta, Delta=self.Delta)


class ChannelParams(BaseModel):
    """
    Uplink channel of one device. Noise is given either in dBm/MHz or in W/Hz.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    bandwidth: float = Field(50e6, alias="B_hz", gt=0, description="Bandwidth (Hz)")
    N0_dBm_per_MHz: Optional[float] = Field(
        None, description="Noise power spectral density in dBm/MHz"
    )
    N0_W_per_Hz: Optional[float] = Field(
        None, gt=0, description="Noise power spectral density in W/Hz"
    )
    gain: float = Field(
        0.001, alias="h2", gt=0, description="Fading power |h|^2 (dimensionless)"
    )
    distance: float = Field(45.0, alias="d_m", gt=0, description="Distance (m)")
    eta: float = Field(3.76, gt=0, description="Pathloss exponent")

    @model_validator(mode="before")
    @classmethod
    def default_noise(cls, data):
        if isinstance(data, dict):
            keys = {"N0_dBm_per_MHz", "N0_W_per_Hz"}
            given = [k for k in keys if data.get(k) is not None]
            if len(given) > 1:
                raise PydanticCustomError(
                    "ambiguous_noise", "give only one of N0_dBm_per_MHz, N0_W_per_Hz"
                )
            if not given:
                data = {**data, "N0_dBm_per_MHz": -95.0}
        return data

    @property
    def noise_psd(self) -> float:
        """Noise power spectral density in W/Hz."""
        if self.N0_W_per_Hz is not None:
            return self.N0_W_per_Hz
        return dbm_per_mhz_to_w_per_hz(self.N0_dBm_per_MHz)
