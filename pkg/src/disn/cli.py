"""Click CLI entry point for disn."""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.logging import RichHandler

from disn import __version__
from disn.context import Context
from disn.exceptions import DisnError

# Global console for user output
console = Console()
error_console = Console(stderr=True)


def setup_logging(verbosity: int) -> None:
    """Configure logging based on verbosity level.

    Args:
        verbosity: 0=WARNING, 1=INFO, 2+=DEBUG
    """
    level = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_time=False)],
    )


def fail(error: DisnError) -> None:
    """Print an error and exit with its code."""
    error_console.print(f"[red]Error:[/red] {error}")
    sys.exit(error.exit_code)


class DisnGroup(click.Group):
    """Group that turns DisnError into its exit code and usage errors into 1."""

    def make_context(
        self,
        info_name: str | None,
        args: list[str],
        parent: click.Context | None = None,
        **extra: Any,
    ) -> click.Context:
        try:
            return super().make_context(info_name, args, parent, **extra)
        except click.UsageError as e:
            e.exit_code = DisnError.exit_code
            raise

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = DisnError.exit_code
            raise
        except DisnError as e:
            fail(e)


pass_context = click.make_pass_decorator(Context, ensure=True)


@click.group(cls=DisnGroup)
@click.option(
    "-v",
    "--verbose",
    count=True,
    help="Increase output verbosity (can be repeated: -vv)",
)
@click.option(
    "-q",
    "--quiet",
    is_flag=True,
    help="Suppress non-essential output",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Run configuration file (YAML or JSON)",
)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a config key, e.g. --set train.epochs=5 (repeatable)",
)
@click.option(
    "--seed",
    type=click.IntRange(min=0),
    default=None,
    help="Override the run seed",
)
@click.option(
    "--no-color",
    is_flag=True,
    help="Disable colored output",
)
@click.version_option(version=__version__, prog_name="disn")
@pass_context
def main(
    ctx_obj: Context,
    verbose: int,
    quiet: bool,
    config_path: Path | None,
    overrides: tuple[str, ...],
    seed: int | None,
    no_color: bool,
) -> None:
    """disn - Disentangle speaker embeddings from their recording environment.

    Trains an auto-encoder that splits embeddings into speaker and
    environment codes, and evaluates verification under environment mismatch.
    All randomness derives from one seed; every command writes its resolved
    configuration next to its outputs.
    """
    ctx_obj.verbose = verbose
    ctx_obj.quiet = quiet
    ctx_obj.no_color = no_color

    # Configure console colors
    if no_color:
        console.no_color = True
        error_console.no_color = True

    # Setup logging based on verbosity
    if not quiet:
        setup_logging(verbose)

    all_overrides = [*overrides, *([f"seed={seed}"] if seed is not None else [])]
    try:
        ctx_obj.load_config(config_path, all_overrides)
    except DisnError as e:
        fail(e)


@main.command()
@pass_context
def version(_ctx: Context) -> None:
    """Show version and exit."""
    console.print(f"disn {__version__}")


def register_commands() -> None:
    """Register all subcommands."""
    from disn.commands.eval import eval_command
    from disn.commands.gradcheck import gradcheck_command
    from disn.commands.report import report_command
    from disn.commands.synth import synth_command
    from disn.commands.train import train_command

    main.add_command(synth_command)
    main.add_command(train_command)
    main.add_command(eval_command)
    main.add_command(gradcheck_command)
    main.add_command(report_command)


# Register commands on import
register_commands()


if __name__ == "__main__":
    main()
