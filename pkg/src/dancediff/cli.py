"""Command-line surface: synth-data, train, sample, edit, longform, evaluate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import pipeline
from .config import parse_config
from .errors import ConfigError, DataError, NumericError
from .synth import synth_dataset

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except DataError as e:
        click.echo(f"data error: {e}", err=True)
        sys.exit(EXIT_DATA)
    except NumericError as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(EXIT_NUMERIC)


@click.group()
def main():
    """Music-conditioned dance generation: train, sample, edit, evaluate."""


@main.command("synth-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--count", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--fps", default=30.0, show_default=True)
@click.option("--seconds", default=5.0, show_default=True)
def cmd_synth_data(out, count, seed, fps, seconds):
    """Generate procedural motion + feature pairs and a manifest."""
    manifest = _run(synth_dataset, out, count, seed, fps=fps, seconds=seconds)
    click.echo(f"wrote {len(manifest['entries'])} clips to {out}")


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="override out_dir")
@click.option("--resume", type=click.Path(exists=True), default=None)
def cmd_train(config_path, seed, out_dir, resume):
    """Train the denoiser per a run-config file."""
    cfg = _run(parse_config, config_path, {"seed": seed, "out_dir": out_dir})
    final = _run(pipeline.train_loop, cfg, resume=resume)
    click.echo(f"final checkpoint: {final}")


@main.command("sample")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("-w", "--guidance-weight", "w", default=2.0, show_default=True)
@click.option("--guidance-dropout", type=float, default=None,
              help="fraction of earliest steps run unguided (default: 0.4 at w=1, else 0)")
@click.option("--seed", default=0, show_default=True)
def cmd_sample(checkpoint, features, out, w, guidance_dropout, seed):
    """Sample one clip conditioned on a feature file."""
    path = _run(pipeline.sample_to_file, checkpoint, features, out, w, seed,
                guidance_dropout=guidance_dropout)
    click.echo(f"wrote {path}")


@main.command("edit")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--constraint", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("-w", "--guidance-weight", "w", default=2.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_edit(checkpoint, features, constraint, out, w, seed):
    """Constrained sampling: masked entries of the output match the
    constraint file exactly."""
    path = _run(pipeline.sample_to_file, checkpoint, features, out, w, seed,
                constraint_path=constraint)
    click.echo(f"wrote {path}")


@main.command("longform")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--seconds", "total_seconds", required=True, type=float)
@click.option("--out", required=True, type=click.Path())
@click.option("-w", "--guidance-weight", "w", default=2.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_longform(checkpoint, features, total_seconds, out, w, seed):
    """Chained sampling of an arbitrarily long, stitched clip."""
    path = _run(pipeline.longform_to_file, checkpoint, features, out, total_seconds, w, seed)
    click.echo(f"wrote {path}")


@main.command("evaluate")
@click.option("--motions", required=True, type=click.Path(exists=True))
@click.option("--features", "features_dir", type=click.Path(exists=True), default=None)
@click.option("--skeleton", "skeleton_path", type=click.Path(exists=True), default=None)
@click.option("--reference", "reference_dir", type=click.Path(exists=True), default=None,
              help="reference motion dir for Frechet distances")
@click.option("--sigma", default=0.1, show_default=True, help="beat-alignment width (s)")
@click.option("--out", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--sweep", "sweep_dir", type=click.Path(exists=True), default=None,
              help="checkpoint dir: evaluate mean sampled PFC per checkpoint")
@click.option("--sweep-features", type=click.Path(exists=True), default=None)
@click.option("--samples", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_evaluate(motions, features_dir, skeleton_path, reference_dir, sigma, out,
                 csv_path, sweep_dir, sweep_features, samples, seed):
    """Metric report over a directory of motion files."""
    report = _run(
        pipeline.evaluate_dir,
        motions,
        features_dir=features_dir,
        skeleton_path=skeleton_path,
        sigma=sigma,
        reference_dir=reference_dir,
    )
    text = report.to_text()
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
    if sweep_dir:
        if not sweep_features:
            click.echo("config error: --sweep requires --sweep-features", err=True)
            sys.exit(EXIT_CONFIG)
        rows = _run(pipeline.checkpoint_sweep, sweep_dir, sweep_features,
                    n_samples=samples, seed=seed)
        sweep_text = "step,mean_pfc\n" + "\n".join(f"{s},{p:.6f}" for s, p in rows) + "\n"
        sweep_path = Path(out).with_suffix(".sweep.csv") if out else Path("sweep.csv")
        sweep_path.write_text(sweep_text)
        click.echo(f"wrote {sweep_path}")


if __name__ == "__main__":
    main()
