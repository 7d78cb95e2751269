# app/api/train.py

import logging

import click
import pandas as pd

from app.core.config import settings
from app.schemas.config import QUANT_MODE
from app.services.federation_service import (
    SUMMARY_COLUMNS,
    ledger_frames,
    ledger_summary,
    run_training,
)
from app.services.report_service import write_config, write_csv, write_ledger_msgpack
from app.utils.deps import resolve_config, run_options

logger = logging.getLogger(__name__)


def _modes(value):
    if value is None:
        return None
    modes = [m.strip() for m in value.split(",") if m.strip()]
    bad = [m for m in modes if not QUANT_MODE.match(m)]
    if bad or not modes:
        raise click.BadParameter(
            f"unknown modes: {', '.join(bad) or value!r}", param_hint="--compare"
        )
    return modes


@click.command("train")
@run_options
@click.option(
    "--compare",
    default=None,
    callback=lambda ctx, param, value: _modes(value),
    help="Comma-separated quant modes, e.g. none,fixed8,on_demand.",
)
def train(config_path, seed, out_dir, dump_config, compare):
    """
    Federated diffusion training. Writes per-round and per-device CSVs for
    each mode plus train_summary.csv.
    """
    config = resolve_config(config_path, seed, out_dir)
    modes = compare or [config.training.quant_mode]
    summary = []
    for mode in modes:
        ledger = run_training(config, quant_mode=mode)
        devices, rounds = ledger_frames(ledger)
        write_csv(rounds, config.output_dir, f"train_{mode}_rounds.csv")
        write_csv(devices, config.output_dir, f"train_{mode}_devices.csv")
        if settings.ENABLE_MSGPACK:
            write_ledger_msgpack(ledger, config.output_dir)
        summary.append(ledger_summary(ledger))
    write_csv(
        pd.DataFrame(summary, columns=SUMMARY_COLUMNS),
        config.output_dir,
        "train_summary.csv",
    )
    if dump_config:
        write_config(config, config.output_dir)
