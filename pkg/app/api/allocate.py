# app/api/allocate.py

import logging

import click

from app.models.enums import Objective
from app.services.allocation_service import allocate_fleet
from app.services.report_service import write_config, write_csv
from app.utils.deps import resolve_config, run_options
from app.utils.exceptions import EXIT_INFEASIBLE

logger = logging.getLogger(__name__)
audit_logger = logging.getLogger("audit")

OBJECTIVE_CHOICE = click.Choice([o.value for o in Objective])


@click.command("allocate")
@run_options
@click.option("--oracle", is_flag=True, help="Add brute-force oracle columns.")
@click.option("--objective", type=OBJECTIVE_CHOICE, default=None)
@click.pass_context
def allocate(ctx, config_path, seed, out_dir, dump_config, oracle, objective):
    """
    Solve the time split of every configured device and write allocate.csv.
    Exits with code 2 when any device is infeasible.
    """
    config = resolve_config(config_path, seed, out_dir)
    objective = Objective(objective) if objective else config.solver.objective
    frame, infeasible = allocate_fleet(
        config.profiles(),
        config.channels(),
        config.solver.lam,
        objective,
        oracle=oracle,
    )
    write_csv(frame, config.output_dir, "allocate.csv")
    if dump_config:
        write_config(config, config.output_dir)
    if infeasible:
        audit_logger.warning("%d of %d devices infeasible", infeasible, config.K)
        ctx.exit(EXIT_INFEASIBLE)
