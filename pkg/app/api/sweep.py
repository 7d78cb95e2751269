# app/api/sweep.py

import logging

import click
import numpy as np

from app.api.allocate import OBJECTIVE_CHOICE
from app.models.enums import Objective, SweepParameter
from app.services.allocation_service import sweep_frame
from app.services.report_service import write_config, write_csv
from app.utils.deps import resolve_config, run_options
from app.utils.exceptions import EXIT_INFEASIBLE

logger = logging.getLogger(__name__)

POSITIVE = click.FloatRange(min=0, min_open=True)


@click.command("sweep")
@run_options
@click.option(
    "--param",
    "parameter",
    type=click.Choice([p.value for p in SweepParameter]),
    default=None,
    help="Swept quantity (t_max in s, distance in m).",
)
@click.option("--start", type=POSITIVE, default=None)
@click.option("--stop", type=POSITIVE, default=None)
@click.option("--steps", type=click.IntRange(min=1), default=None)
@click.option("--objective", type=OBJECTIVE_CHOICE, default=None)
@click.pass_context
def sweep(
    ctx,
    config_path,
    seed,
    out_dir,
    dump_config,
    parameter,
    start,
    stop,
    steps,
    objective,
):
    """Optimised and even-split fleet energy over T_max or distance.

    Writes sweep_<param>.csv.
    """
    config = resolve_config(config_path, seed, out_dir)
    section = config.sweep
    parameter = SweepParameter(parameter) if parameter else section.parameter
    values = np.linspace(
        section.start if start is None else start,
        section.stop if stop is None else stop,
        section.steps if steps is None else steps,
    )
    objective = Objective(objective) if objective else config.solver.objective
    frame, flagged = sweep_frame(
        config.profiles(),
        config.channels(),
        parameter,
        values,
        config.solver.lam,
        objective,
    )
    write_csv(frame, config.output_dir, f"sweep_{parameter.value}.csv")
    if dump_config:
        write_config(config, config.output_dir)
    if flagged:
        logger.warning("%d sweep points infeasible", flagged)
        ctx.exit(EXIT_INFEASIBLE)
