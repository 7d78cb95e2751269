# app/services/report_service.py

import logging
from pathlib import Path
from typing import Union

import msgpack
import numpy as np
import pandas as pd

from app.models.federation import RunLedger
from app.schemas.config import RunConfig, dump_config

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Round-trips every float64 exactly
FLOAT_FORMAT = "%.17g"


def ensure_dir(path: PathLike) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(frame: pd.DataFrame, out_dir: PathLike, name: str) -> Path:
    path = ensure_dir(out_dir) / name
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def write_config(config: RunConfig, out_dir: PathLike) -> Path:
    path = ensure_dir(out_dir) / "config.yaml"
    path.write_text(dump_config(config))
    logger.info("Wrote %s", path)
    return path


def ledger_to_dict(ledger: RunLedger) -> dict:
    """Plain-type form of a ledger; final parameters as little-endian float64 bytes."""
    return {
        "mode": ledger.mode,
        "seed": ledger.seed,
        "config": ledger.config,
        "rounds": [report.model_dump() for report in ledger.rounds],
        "final_params": np.asarray(ledger.final_params, dtype="<f8").tobytes(),
    }


def write_ledger_msgpack(ledger: RunLedger, out_dir: PathLike) -> Path:
    path = ensure_dir(out_dir) / f"train_{ledger.mode}_ledger.msgpack"
    path.write_bytes(msgpack.packb(ledger_to_dict(ledger), use_bin_type=True))
    logger.info("Wrote %s", path)
    return path


def read_ledger_msgpack(path: PathLike) -> dict:
    data = msgpack.unpackb(Path(path).read_bytes(), raw=False)
    data["final_params"] = np.frombuffer(data["final_params"], dtype="<f8")
    return data
