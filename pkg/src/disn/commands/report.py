"""Report command for disn."""

from __future__ import annotations

from pathlib import Path

import click
from rich.console import Console

from disn.core import report

console = Console()


@click.command("report")
@click.argument(
    "run_dirs",
    nargs=-1,
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write the summary as report.json into this directory",
)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["table", "json"]),
    default="table",
    help="Output format (default: table)",
)
def report_command(run_dirs: tuple[Path, ...], out_dir: Path | None, output_format: str) -> None:
    """Summarize metrics of several evaluated runs as mean ± std.

    Typical use is one run directory per seed.
    """
    summaries = report.summarize_runs(list(run_dirs))
    if out_dir is not None:
        report.write_report(summaries, out_dir)
    if output_format == "json":
        click.echo(report.format_report_json(summaries))
    else:
        console.print(report.format_report_table(summaries))
