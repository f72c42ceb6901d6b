"""Train command for disn."""

from __future__ import annotations

import json
from pathlib import Path

import click
from rich.console import Console

from disn.config import write_resolved_config
from disn.context import Context, path_override
from disn.core.checkpoint import load_checkpoint
from disn.core.sampler import load_dataset
from disn.core.trainer import (
    HISTORY_COLUMNS,
    HISTORY_NAME,
    fit,
    format_history_table,
    write_history_csv,
)

console = Console()


@click.command("train")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Run directory for checkpoint and loss history (default: paths.run_dir)",
)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Dataset directory (default: paths.dataset_dir)",
)
@click.option(
    "--resume",
    "resume_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Continue training from this checkpoint",
)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["table", "json"]),
    default="table",
    help="Output format (default: table)",
)
@click.pass_context
def train_command(
    ctx: click.Context,
    out_dir: Path | None,
    data_dir: Path | None,
    resume_path: Path | None,
    output_format: str,
) -> None:
    """Train the disentangler on a dataset directory.

    Writes the checkpoint, the per-epoch loss history (CSV) and the resolved
    configuration into the run directory.
    """
    cli_ctx: Context = ctx.find_object(Context)  # type: ignore[assignment]
    config = cli_ctx.command_config(
        path_override("paths.run_dir", out_dir),
        path_override("paths.dataset_dir", data_dir),
    )
    run_dir = config.paths.run_dir

    dataset = load_dataset(config.paths.dataset_dir, config.model.input_dim)
    resume = load_checkpoint(resume_path, config.model) if resume_path is not None else None
    write_resolved_config(config, run_dir)

    result = fit(dataset, config, checkpoint_path=config.paths.checkpoint_path, resume=resume)
    write_history_csv(result.history, run_dir / HISTORY_NAME)

    if output_format == "json":
        final = result.history[-1] if result.history else None
        final_row = dict(zip(HISTORY_COLUMNS, final.to_list(), strict=True)) if final else None
        click.echo(
            json.dumps(
                {
                    "run_dir": str(run_dir),
                    "checkpoint": str(config.paths.checkpoint_path),
                    "epochs": len(result.history),
                    "final": final_row,
                },
                indent=2,
            )
        )
    else:
        console.print(format_history_table(result.history))
        console.print(f"Checkpoint: {config.paths.checkpoint_path}")
