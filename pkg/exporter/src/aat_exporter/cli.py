"""Command-line entry point: convert a checkpoint and emit the full fixture
bundle (manifest, weight blob, eval/calib datasets, goldens, report)."""

from __future__ import annotations

from pathlib import Path

import click

from .convert import (
    ExportError,
    export_dataset,
    export_goldens,
    export_model,
    load_checkpoint,
    with_golden_path,
)
from .data import make_datasets


@click.command(name="export")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Trained checkpoint (.pt) to convert.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Output directory for the fixture bundle.")
@click.option("--probe", default=16, show_default=True, type=int,
              help="Round-trip verification batch size (0 disables).")
@click.option("--seed", default=0, show_default=True, type=int,
              help="Base seed for probe inputs and emitted datasets.")
def main(checkpoint: str, out_dir: str, probe: int, seed: int) -> None:
    """Export CHECKPOINT into the engine's manifest + .aat format."""
    out = Path(out_dir)
    try:
        report = export_model(checkpoint, out, probe=probe, seed=seed)
        _, meta = load_checkpoint(checkpoint)
        (eval_images, eval_labels), (calib_images, calib_labels) = \
            make_datasets(meta["input_shape"], meta["class_count"], seed)
        eval_files = export_dataset(eval_images, eval_labels, out, "eval")
        export_dataset(calib_images, calib_labels, out, "calib")
        goldens = export_goldens(
            checkpoint, (eval_files["stored_images"], eval_labels), out)
        report = with_golden_path(report, "golden_logits.aat")
        report.save(out / "export_report.json")
    except ExportError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(2) from None
    click.echo(f"exported {report.source_model} -> {out}")
    click.echo(f"  layers mapped: "
               f"{sum(1 for m in report.layer_map if 'target' in m)}, "
               f"batch-norms folded: {report.folded_batchnorm_count}")
    click.echo(f"  weights sha256: {report.weights_sha256}")
    click.echo(f"  probe max-abs diff: {report.probe_max_abs_diff:.3e} "
               f"over {report.probe_count} inputs")
    click.echo(f"  golden accuracy: {goldens['accuracy']:.4f}")


if __name__ == "__main__":
    main()
