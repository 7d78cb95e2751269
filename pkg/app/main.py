# app/main.py

import logging

import click

from app.api.allocate import allocate
from app.api.quantbench import quantbench
from app.api.sweep import sweep
from app.api.trace import nu_trace
from app.api.train import train
from app.core.config import settings
from app.core.logging import init_logging
from app.utils.exceptions import EXIT_FAILURE, SimulationError


def handle_errors(exc: Exception) -> int:
    """
    Log an exception that escaped a command and return its exit code.
    """
    logger = logging.getLogger("app.errors")
    if isinstance(exc, SimulationError):
        logger.warning(
            "%s: %s -> exit %d", type(exc).__name__, exc.detail, exc.exit_code
        )
        return exc.exit_code
    logger.error("Unhandled exception", exc_info=exc)
    return EXIT_FAILURE


class SimulatorGroup(click.Group):
    """Command group that turns escaped exceptions into exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except Exception as exc:
            ctx.exit(handle_errors(exc))


def create_cli() -> click.Group:
    @click.group(cls=SimulatorGroup)
    @click.option(
        "--log-level",
        default=None,
        help="Override the configured log level (e.g. DEBUG).",
    )
    def cli(log_level):
        """Energy-aware quantized federated diffusion simulator."""
        init_logging(
            settings.LOG_DIR, log_level or settings.LOG_LEVEL, settings.LOG_TO_FILE
        )

    cli.add_command(allocate)
    cli.add_command(sweep)
    cli.add_command(nu_trace)
    cli.add_command(quantbench)
    cli.add_command(train)
    return cli


cli = create_cli()


if __name__ == "__main__":
    cli()
