"""Eval command for disn."""

from __future__ import annotations

from pathlib import Path

import click
from rich.console import Console

from disn.config import write_resolved_config
from disn.context import Context, path_override
from disn.core.checkpoint import load_checkpoint
from disn.core.evaluation import CUSTOM_TRIALS, METRICS_NAME, evaluate, trials_file_name
from disn.core.metrics import format_metrics_json, format_metrics_table, write_det_csv
from disn.core.probes import format_probe_table
from disn.core.sampler import load_dataset
from disn.core.trials import build_trials, read_trials, write_trials
from disn.exceptions import ArtifactError

console = Console()


@click.command("eval")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Directory for metrics and trial files (default: paths.run_dir)",
)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Dataset directory (default: paths.dataset_dir)",
)
@click.option(
    "--checkpoint",
    "checkpoint_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Checkpoint to evaluate (default: paths.checkpoint_path)",
)
@click.option(
    "--trials",
    "trials_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Trial list ('label enroll test' lines); generated when omitted",
)
@click.option("--det", is_flag=True, help="Also write DET curves as CSV")
@click.option("--probes", is_flag=True, help="Also train linear disentanglement probes")
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["table", "json"]),
    default="table",
    help="Output format (default: table)",
)
@click.pass_context
def eval_command(
    ctx: click.Context,
    out_dir: Path | None,
    data_dir: Path | None,
    checkpoint_path: Path | None,
    trials_path: Path | None,
    det: bool,
    probes: bool,
    output_format: str,
) -> None:
    """Compare verification on raw embeddings and on speaker codes.

    Without --trials, one balanced trial list per eval.trial_kinds entry is
    drawn from the dataset and saved next to the metrics: mismatch targets
    pair different sessions, standard targets pair any two utterances.
    """
    cli_ctx: Context = ctx.find_object(Context)  # type: ignore[assignment]
    config = cli_ctx.command_config(
        path_override("paths.run_dir", out_dir),
        path_override("paths.dataset_dir", data_dir),
        path_override("paths.checkpoint", checkpoint_path),
        path_override("eval.trials_path", trials_path),
    )
    run_dir = config.paths.run_dir

    checkpoint = load_checkpoint(config.paths.checkpoint_path, config.model)
    dataset = load_dataset(config.paths.dataset_dir, config.model.input_dim)
    if config.eval.trials_path is not None:
        trial_lists = {CUSTOM_TRIALS: read_trials(config.eval.trials_path)}
    else:
        trial_lists = {}
        for kind in config.eval.trial_kinds:
            trials = build_trials(
                kind, dataset.metadata, config.stream(f"trials.{kind}"), config.eval.n_trials
            )
            write_trials(trials, run_dir / trials_file_name(kind))
            trial_lists[kind] = trials

    result = evaluate(dataset, checkpoint, trial_lists, config, with_probes=probes)

    write_resolved_config(config, run_dir)
    document = format_metrics_json(result.to_dict())
    metrics_path = run_dir / METRICS_NAME
    try:
        metrics_path.write_text(document + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Could not write {metrics_path}: {e}") from e
    if det:
        for name, scored in result.lists.items():
            write_det_csv(scored.raw_scores, run_dir / f"det_{name}_raw.csv")
            write_det_csv(scored.disentangled_scores, run_dir / f"det_{name}_disentangled.csv")

    if output_format == "json":
        click.echo(document)
        return
    console.print(format_metrics_table(result.metric_blocks()))
    if result.probes is not None:
        console.print(format_probe_table(result.probes))
    if not result.fingerprint_matches:
        console.print(
            "[yellow]Warning:[/yellow] dataset differs from the checkpoint's training data"
        )
    console.print(f"Metrics: {metrics_path}")
