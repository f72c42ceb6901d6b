"""Synth command for disn."""

from __future__ import annotations

import json
from pathlib import Path

import click
from rich.console import Console

from disn.config import write_resolved_config
from disn.context import Context, path_override
from disn.core.sampler import GROUND_TRUTH_NAME, save_dataset, save_ground_truth, synth_generate
from disn.exceptions import ValidationError

console = Console()


@click.command("synth")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Dataset directory (default: paths.dataset_dir)",
)
@click.option(
    "--create/--no-create",
    default=True,
    help="Create the output directory if it does not exist (default: create)",
)
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["table", "json"]),
    default="table",
    help="Output format (default: table)",
)
@click.pass_context
def synth_command(
    ctx: click.Context,
    out_dir: Path | None,
    create: bool,
    output_format: str,
) -> None:
    """Generate a synthetic speaker/environment dataset.

    Writes the embedding file, JSON-lines metadata and the generating factors
    (ground truth) into the dataset directory.
    """
    cli_ctx: Context = ctx.find_object(Context)  # type: ignore[assignment]
    config = cli_ctx.command_config(path_override("paths.dataset_dir", out_dir))
    dataset_dir = config.paths.dataset_dir

    if not create and not dataset_dir.is_dir():
        raise ValidationError(f"Output directory does not exist: {dataset_dir} (use --create)")

    synth = synth_generate(config.world, config.stream("world"))
    save_dataset(synth.dataset, dataset_dir)
    save_ground_truth(synth.truth, dataset_dir / GROUND_TRUTH_NAME)
    write_resolved_config(config, dataset_dir)

    world = config.world
    summary = {
        "dataset_dir": str(dataset_dir),
        "speakers": world.n_speakers,
        "sessions": world.n_speakers * world.sessions_per_speaker,
        "utterances": len(synth.dataset.metadata),
        "embeddings": len(synth.dataset.embeddings),
        "dim": world.embedding_dim,
    }
    if output_format == "json":
        click.echo(json.dumps(summary, indent=2))
    else:
        console.print(
            f"Wrote {summary['utterances']} utterances "
            f"({summary['speakers']} speakers, {summary['sessions']} sessions, "
            f"dim {summary['dim']}) to {dataset_dir}"
        )
