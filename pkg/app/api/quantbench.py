# app/api/quantbench.py

import click

from app.services.quant_service import benchmark_frame
from app.services.report_service import write_config, write_csv
from app.utils.deps import resolve_config, run_options


@click.command("quantbench")
@run_options
def quantbench(config_path, seed, out_dir, dump_config):
    """Quantizer error and unbiasedness per (distribution, L); writes quantbench.csv."""
    config = resolve_config(config_path, seed, out_dir)
    section = config.quantbench
    frame = benchmark_frame(
        section.dimension,
        section.trials,
        section.levels,
        section.distributions,
        config.seed,
    )
    write_csv(frame, config.output_dir, "quantbench.csv")
    if dump_config:
        write_config(config, config.output_dir)
