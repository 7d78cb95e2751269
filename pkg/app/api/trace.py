# app/api/trace.py

import click

from app.api.allocate import OBJECTIVE_CHOICE
from app.models.enums import Objective
from app.services.allocation_service import nu_trace_frame, solve
from app.services.report_service import write_config, write_csv
from app.utils.deps import resolve_config, run_options


@click.command("nu-trace")
@run_options
@click.option("--device", "device_id", type=click.IntRange(min=0), default=0)
@click.option("--objective", type=OBJECTIVE_CHOICE, default=None)
def nu_trace(config_path, seed, out_dir, dump_config, device_id, objective):
    """Outer bisection history of one device; writes nu_trace_device<k>.csv."""
    config = resolve_config(config_path, seed, out_dir)
    if device_id >= config.K:
        raise click.BadParameter(
            f"config has {config.K} devices", param_hint="--device"
        )
    objective = Objective(objective) if objective else config.solver.objective
    _, trace = solve(
        config.profile(device_id),
        config.channel_for(device_id),
        config.solver.lam,
        objective=objective,
        device_id=device_id,
    )
    write_csv(
        nu_trace_frame(trace), config.output_dir, f"nu_trace_device{device_id}.csv"
    )
    if dump_config:
        write_config(config, config.output_dir)
