# app/schemas/config.py

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_core import PydanticCustomError

from app.models.enums import AllocationPolicy, Objective, PartitionMode, SweepParameter
from app.schemas.device import ChannelParams, DeviceProfile
from app.services.quant_service import FULL_PRECISION_BITS
from app.utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

QUANT_MODE = re.compile(r"^(on_demand|none|fixed([1-9]|[12][0-9]|3[01]))$")


def _key_map(model_cls) -> Dict[str, str]:
    """Field names and aliases of `model_cls`, mapped to the alias."""
    keys = {}
    for name, info in model_cls.model_fields.items():
        alias = info.alias or name
        keys[name] = alias
        keys[alias] = alias
    return keys


PROFILE_KEYS = _key_map(DeviceProfile)
CHANNEL_KEYS = _key_map(ChannelParams)


def quant_bit_width(mode: str) -> Optional[int]:
    """Per-parameter bits of a quant mode; None for on_demand."""
    if mode == "on_demand":
        return None
    if mode == "none":
        return FULL_PRECISION_BITS
    return int(mode[len("fixed") :])


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SolverSection(_Section):
    lam: float = Field(1e-6, alias="lambda", gt=0, description="Bisection tolerance")
    objective: Objective = Field(
        Objective.CORRECTED, description="Energy objective the solver minimises"
    )


class TrainingSection(_Section):
    rounds: int = Field(200, ge=0, description="Global rounds")
    local_iters: int = Field(5, ge=0, description="Gradient steps per device per round")
    lr: float = Field(1e-2, ge=0, description="Learning rate")
    batch_size: int = Field(128, ge=1)
    T: int = Field(50, ge=1, description="Diffusion steps")
    beta_1: float = Field(1e-3, gt=0, lt=1)
    beta_T: float = Field(0.4, gt=0, lt=1)
    hidden: int = Field(64, ge=1)
    embed_dim: int = Field(16, ge=2)
    quant_mode: str = Field("on_demand", examples=["on_demand", "fixed8", "none"])
    allocation: AllocationPolicy = AllocationPolicy.AUTO
    partition: PartitionMode = PartitionMode.IID_UNIFORM
    participation: float = Field(1.0, gt=0, le=1)
    samples_per_device: int = Field(512, ge=1)
    eval_every: int = Field(10, ge=1)
    eval_samples: int = Field(2000, ge=2)
    mixture_modes: int = Field(8, ge=1)
    mixture_radius: float = Field(4.0, gt=0)
    mixture_variance: float = Field(0.1, gt=0)

    @field_validator("quant_mode")
    def validate_quant_mode(cls, v):
        if not QUANT_MODE.match(v):
            raise PydanticCustomError(
                "invalid_quant_mode", "quant_mode must be on_demand, none or fixed<b>"
            )
        return v

    @field_validator("embed_dim")
    def validate_embed_dim(cls, v):
        if v % 2:
            raise PydanticCustomError("invalid_embed_dim", "embed_dim must be even")
        return v

    @model_validator(mode="after")
    def check_betas(self):
        if self.beta_1 > self.beta_T:
            raise PydanticCustomError("invalid_schedule", "beta_1 must be <= beta_T")
        return self


class QuantbenchSection(_Section):
    dimension: int = Field(256, ge=1)
    trials: int = Field(10_000, ge=2)
    levels: List[int] = Field(default_factory=lambda: [2**b for b in range(1, 9)])
    distributions: List[str] = Field(
        default_factory=lambda: ["gaussian", "uniform", "laplace"]
    )

    @field_validator("levels")
    def validate_levels(cls, v):
        for level in v:
            if level < 2 or level & (level - 1):
                raise PydanticCustomError(
                    "invalid_levels", "levels must be powers of two >= 2"
                )
        return v

    @field_validator("distributions")
    def validate_distributions(cls, v):
        unknown = set(v) - {"gaussian", "uniform", "laplace"}
        if unknown:
            raise PydanticCustomError(
                "invalid_distribution",
                "unknown distributions: {names}",
                {"names": ", ".join(sorted(unknown))},
            )
        return v


class SweepSection(_Section):
    parameter: SweepParameter = SweepParameter.T_MAX
    start: float = Field(13.0, gt=0)
    stop: float = Field(18.0, gt=0)
    steps: int = Field(11, ge=1)


def _default_devices() -> List[Dict[str, float]]:
    # Tolerated errors 1.0 / 0.5 / 0.2 give 6 / 7 / 8 bits at delta = 8192
    return [
        {"Delta": (1.0, 0.5, 0.2)[k % 3], "d_m": 40.0 + 5.0 * (k % 5)}
        for k in range(10)
    ]


class RunConfig(_Section):
    """
    A complete experiment: fleet, channel, solver, training, benchmark and
    sweep settings. Each entry of `devices` overrides device_defaults and
    channel keys for that device; the list length is the fleet size K.
    """

    seed: int = Field(0, ge=0)
    output_dir: str = "results"
    device_defaults: DeviceProfile = Field(default_factory=DeviceProfile)
    channel: ChannelParams = Field(default_factory=ChannelParams)
    devices: List[Dict[str, float]] = Field(
        default_factory=_default_devices, min_length=1
    )
    solver: SolverSection = Field(default_factory=SolverSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    quantbench: QuantbenchSection = Field(default_factory=QuantbenchSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @field_validator("devices")
    def validate_device_keys(cls, v):
        for k, override in enumerate(v):
            unknown = [
                key
                for key in override
                if key not in PROFILE_KEYS and key not in CHANNEL_KEYS
            ]
            if unknown:
                raise PydanticCustomError(
                    "unknown_device_key",
                    "device {k}: unknown keys {keys}",
                    {"k": k, "keys": ", ".join(unknown)},
                )
        return v

    @model_validator(mode="after")
    def check_devices(self):
        for k in range(len(self.devices)):
            try:
                self.profile(k)
                self.channel_for(k)
            except ValidationError as exc:
                raise PydanticCustomError(
                    "invalid_device",
                    "device {k}: {msg}",
                    {"k": k, "msg": exc.errors()[0]["msg"]},
                )
        return self

    @property
    def K(self) -> int:
        return len(self.devices)

    def profile(self, k: int) -> DeviceProfile:
        data = self.device_defaults.model_dump(by_alias=True)
        for key, value in self.devices[k].items():
            if key in PROFILE_KEYS:
                data[PROFILE_KEYS[key]] = value
        return DeviceProfile.model_validate(data)

    def channel_for(self, k: int) -> ChannelParams:
        data = self.channel.model_dump(by_alias=True)
        override = {
            CHANNEL_KEYS[key]: value
            for key, value in self.devices[k].items()
            if key in CHANNEL_KEYS
        }
        if {"N0_dBm_per_MHz", "N0_W_per_Hz"} & override.keys():
            data.pop("N0_dBm_per_MHz", None)
            data.pop("N0_W_per_Hz", None)
        data.update(override)
        return ChannelParams.model_validate(data)

    def profiles(self) -> List[DeviceProfile]:
        return [self.profile(k) for k in range(self.K)]

    def channels(self) -> List[ChannelParams]:
        return [self.channel_for(k) for k in range(self.K)]


def load_config(source: Union[str, Path, None] = None) -> RunConfig:
    """
    Read a YAML file into a RunConfig. No path gives the built-in defaults.
    Malformed YAML and invalid values raise ConfigError.
    """
    if source is None:
        return RunConfig()
    path = Path(source)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    logger.info("Loaded config %s (%d devices, seed %d)", path, config.K, config.seed)
    return config


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(
        config.model_dump(mode="json", by_alias=True), sort_keys=False
    )
