# app/utils/deps.py

import logging
from pathlib import Path
from typing import Callable, Optional

import click

from app.schemas.config import RunConfig, load_config

logger = logging.getLogger(__name__)

RUN_OPTIONS = [
    click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="YAML run configuration (defaults when omitted).",
    ),
    click.option(
        "--seed", type=click.IntRange(min=0), default=None, help="Override seed."
    ),
    click.option(
        "--out",
        "out_dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=None,
        help="Output directory (overrides output_dir).",
    ),
    click.option(
        "--dump-config",
        is_flag=True,
        default=False,
        help="Also write the effective config to the output directory.",
    ),
]


def run_options(command: Callable) -> Callable:
    """Attach --config, --seed, --out and --dump-config to a command."""
    for option in reversed(RUN_OPTIONS):
        command = option(command)
    return command


def resolve_config(
    config_path: Optional[Path], seed: Optional[int], out_dir: Optional[Path]
) -> RunConfig:
    """Load the config and apply command-line overrides."""
    config = load_config(config_path)
    update = {}
    if seed is not None:
        update["seed"] = seed
    if out_dir is not None:
        update["output_dir"] = str(out_dir)
    if update:
        config = config.model_copy(update=update)
    logger.debug("Effective seed=%d, output_dir=%s", config.seed, config.output_dir)
    return config
