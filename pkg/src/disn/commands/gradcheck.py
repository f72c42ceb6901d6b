"""Gradcheck command for disn."""

from __future__ import annotations

import json

import click
from rich.console import Console

from disn.context import Context
from disn.core.gradsuite import SUITE, format_gradcheck_table, run_suite
from disn.exceptions import ConfigError, GradientCheckError

console = Console()


@click.command("gradcheck")
@click.option(
    "--only",
    "only",
    multiple=True,
    help="Run only the named components (repeatable)",
)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["table", "json"]),
    default="table",
    help="Output format (default: table)",
)
@click.pass_context
def gradcheck_command(ctx: click.Context, only: tuple[str, ...], output_format: str) -> None:
    """Verify every analytic gradient against central finite differences.

    Runs in float64 with batch statistics frozen. Exits with code 2 if any
    component exceeds its tolerance or the checker self-test fails.
    """
    cli_ctx: Context = ctx.find_object(Context)  # type: ignore[assignment]
    config = cli_ctx.require_config()

    known = {case.name: case for case in SUITE}
    unknown = sorted(set(only) - set(known))
    if unknown:
        raise ConfigError(f"Unknown gradcheck component(s): {', '.join(unknown)}")
    cases = [known[name] for name in only] if only else None

    results = run_suite(config.seed, cases)

    if output_format == "json":
        click.echo(
            json.dumps(
                [
                    {"name": r.name, "error": r.error, "tolerance": r.tolerance, "passed": r.passed}
                    for r in results
                ],
                indent=2,
            )
        )
    else:
        console.print(format_gradcheck_table(results))

    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradientCheckError(f"Gradient check failed for: {', '.join(failed)}")
    if output_format != "json":
        console.print(f"[green]All {len(results)} checks passed[/green]")
