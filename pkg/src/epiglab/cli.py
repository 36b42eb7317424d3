"""Command-line entry point: experiment runs, the decomposition study,
ProbCover radius tuning, synthetic data generation, and the labelling server.

Record CSVs are written in reproducible mode by default (step_seconds pinned
to 0.0 so reruns are byte-identical); pass --clock wall to measure real
per-step durations.
"""

from __future__ import annotations

import dataclasses
import json
import multiprocessing
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import plots
from .acquisition import probcover_purity_curve, probcover_tune_radius
from .config import ExperimentConfig, parse_config, parse_override
from .data import (
    SyntheticSpec,
    apply_task,
    full_task,
    make_synthetic,
    write_embeddings,
    write_labels,
)
from .decompose import contrast_csv, size_contrast
from .errors import ConfigError, EpiglabError, TuningError
from .loop import METHODS, aggregate, class_histogram, null_clock, run

_CLOCKS = {"wall": time.perf_counter, "null": null_clock}


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(config_path: str, sets: tuple[str, ...]) -> ExperimentConfig:
    try:
        overrides = [parse_override(s) for s in sets]
        return parse_config(config_path, overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


class _Command(click.Command):
    """Maps package errors to exit codes: config misuse 2, runtime failures 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.ClickException:
            raise
        except ConfigError as exc:
            raise click.UsageError(str(exc)) from exc
        except EpiglabError as exc:
            raise click.ClickException(str(exc)) from exc


@click.group()
@click.version_option()
def main():
    """Active learning over precomputed embeddings."""


def _run_one(args):
    loop_config, bundle, seed, clock_name, export_scores = args
    score_rows: list[tuple[int, int, float]] = []
    hook = None
    if export_scores:
        def hook(step, pool, scores, _rows=score_rows):
            _rows.extend(
                (step, int(i), float(s)) for i, s in zip(pool, scores)
            )
    record = run(loop_config, bundle, seed, clock=_CLOCKS[clock_name],
                 score_hook=hook)
    return record, score_rows


@main.command("run", cls=_Command)
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Experiment TOML document.")
@click.option("--method", "methods", multiple=True, type=click.Choice(METHODS),
              help="Acquisition method; repeat for several (overrides config).")
@click.option("--seeds", type=int, default=None,
              help="Run seeds 0..N-1 (overrides config).")
@click.option("--budget", type=int, default=None, help="Label budget override.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: config, then $EPIGLAB_OUT).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel seed runs.")
@click.option("--clock", type=click.Choice(sorted(_CLOCKS)), default="null",
              show_default=True,
              help="wall: measure step durations; null: reproducible zeros.")
@click.option("--export-scores", is_flag=True,
              help="Write per-step acquisition scores (step,index,score).")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Override any config key, e.g. --set loop.batch=2.")
def cmd_run(config_path, methods, seeds, budget, out_dir, jobs, clock,
            export_scores, sets):
    """Run seeded active-learning experiments and write records and curves."""
    cfg = _load(config_path, sets)
    methods = list(methods) or cfg.methods
    seed_list = list(range(seeds)) if seeds is not None else cfg.seeds
    out = Path(out_dir) if out_dir else cfg.output_dir
    bundle = cfg.build_bundle()

    summaries = {}
    for method in methods:
        loop_config = dataclasses.replace(
            cfg.loop, method=method, seeds=tuple(seed_list),
            budget=budget if budget is not None else cfg.loop.budget,
        )
        tasks = [(loop_config, bundle, seed, clock, export_scores)
                 for seed in seed_list]
        if jobs > 1:
            # spawn, not fork: the numba runtime's thread pools are not
            # fork-safe once a kernel has run in this process
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                results = list(pool.map(_run_one, tasks))
        else:
            results = [_run_one(t) for t in tasks]

        records = []
        for (record, score_rows), seed in zip(results, seed_list):
            records.append(record)
            _write_atomic(out / f"records_{method}_seed{seed}.csv", record.to_csv())
            _write_atomic(out / f"records_{method}_seed{seed}.json", record.to_json())
            if export_scores:
                lines = ["step,index,score"]
                lines += [f"{s},{i},{v!r}" for s, i, v in score_rows]
                _write_atomic(out / f"scores_{method}_seed{seed}.csv",
                              "\n".join(lines) + "\n")

        hist = class_histogram(records)
        hist_lines = ["class,mean_count"]
        hist_lines += [f"{c},{v!r}" for c, v in enumerate(hist)]
        _write_atomic(out / f"histogram_{method}.csv", "\n".join(hist_lines) + "\n")

        if len(records) >= 2:
            summary = aggregate(records)
            _write_atomic(out / f"summary_{method}.csv", summary.to_csv())
            summaries[method] = summary
        click.echo(f"{method}: {len(records)} runs -> {out}")

    if summaries:
        plots.save_learning_curve_svg(summaries, out / "learning_curve.svg")
        click.echo(f"learning curve -> {out / 'learning_curve.svg'}")


@main.command(cls=_Command)
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
def decompose(config_path, out_dir, sets):
    """Per-input uncertainty decomposition at a small and a large training size."""
    cfg = _load(config_path, sets)
    out = Path(out_dir) if out_dir else cfg.output_dir
    bundle = cfg.build_bundle()
    task = cfg.loop.task or full_task(bundle.oracle.classes)
    labels = apply_task(bundle.oracle, task)
    features = bundle.features(cfg.loop.feature_source)

    pool = bundle.splits.pool
    known = pool[labels.entries[pool] >= 0]
    validation = None
    if cfg.loop.head.kind != "forest":
        val = bundle.splits.validation
        val = val[labels.entries[val] >= 0]
        validation = (features[val], labels.entries[val])

    settings = cfg.decompose_settings
    rows = size_contrast(
        cfg.loop.head, features[known], labels.entries[known],
        features[bundle.splits.test],
        settings["n_small"], settings["n_large"], settings["seeds"],
        members=settings["members"], validation=validation,
    )
    _write_atomic(out / "uncertainty_scatter.csv", contrast_csv(rows))
    plots.save_contrast_scatter_svg(rows, out / "uncertainty_scatter.svg")
    click.echo(f"{len(rows)} scatter rows -> {out}")


@main.command("tune-probcover", cls=_Command)
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
def tune_probcover(config_path, out_dir, sets):
    """Pick the largest cover radius whose pseudo-label purity meets the target."""
    cfg = _load(config_path, sets)
    out = Path(out_dir) if out_dir else cfg.output_dir
    bundle = cfg.build_bundle()
    task = cfg.loop.task or full_task(bundle.oracle.classes)
    num_classes = cfg.probcover_classes or task.effective_classes()
    embeddings = bundle.features(cfg.loop.feature_source)[bundle.splits.pool]

    curve = probcover_purity_curve(embeddings, num_classes, cfg.probcover)
    lines = ["delta,purity"]
    lines += [f"{d!r},{p!r}" for d, p in curve]
    _write_atomic(out / "probcover_purity.csv", "\n".join(lines) + "\n")

    try:
        chosen = probcover_tune_radius(embeddings, num_classes, cfg.probcover)
    except TuningError:
        plots.save_purity_curve_svg(curve, cfg.probcover.purity_target, None,
                                    out / "probcover_purity.svg")
        raise
    plots.save_purity_curve_svg(curve, cfg.probcover.purity_target, chosen,
                                out / "probcover_purity.svg")
    click.echo(f"chosen radius: {chosen!r}")


@main.command(cls=_Command)
@click.option("--classes", type=int, default=3, show_default=True)
@click.option("--per-class", type=int, default=200, show_default=True)
@click.option("--latent-dim", type=int, default=4, show_default=True)
@click.option("--raw-dim", type=int, default=16, show_default=True)
@click.option("--noise-scale", type=float, default=1.0, show_default=True)
@click.option("--separation", type=float, default=6.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def synth(classes, per_class, latent_dim, raw_dim, noise_scale, separation,
          seed, out_dir):
    """Generate a synthetic dataset: latent and raw embeddings plus labels."""
    spec = SyntheticSpec(classes=classes, per_class=per_class,
                         latent_dim=latent_dim, raw_dim=raw_dim,
                         noise_scale=noise_scale, separation=separation)
    latent, raw, labels = make_synthetic(spec, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(latent, out / "latent.emb1")
    write_embeddings(raw, out / "raw.emb1")
    write_labels(labels, out / "labels.lab1")
    manifest = {
        "classes": classes, "per_class": per_class, "latent_dim": latent_dim,
        "raw_dim": raw_dim, "noise_scale": noise_scale,
        "separation": separation, "seed": seed,
        "files": {"latent": "latent.emb1", "raw": "raw.emb1",
                  "labels": "labels.lab1"},
    }
    _write_atomic(out / "manifest.json",
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    click.echo(f"{latent.n} examples -> {out}")


@main.command(cls=_Command)
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--bind", default=None, help="host:port (default from config).")
@click.option("--ui-dir", type=click.Path(file_okay=False), default=None,
              help="Built UI bundle; default $EPIGLAB_UI, then ./frontend/dist.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
def serve(config_path, bind, ui_dir, out_dir, sets):
    """Serve the labelling UI and API until interrupted; flush metrics on exit."""
    import uvicorn

    from .server import LabelSession, create_app

    cfg = _load(config_path, sets)
    out = Path(out_dir) if out_dir else cfg.output_dir
    bundle = cfg.build_bundle()

    if ui_dir is None:
        ui_dir = os.environ.get("EPIGLAB_UI")
    if ui_dir is None and Path("frontend/dist/index.html").is_file():
        ui_dir = "frontend/dist"

    session = LabelSession(cfg.loop, bundle, cfg.server_seed)
    app = create_app(session, ui_dir=ui_dir)
    bind = bind or cfg.server_bind
    host, _, port = bind.rpartition(":")
    click.echo(f"serving on http://{bind}")
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port),
                    log_level="warning")
    finally:
        _write_atomic(out / "server_metrics.csv", session.metrics_csv())
        click.echo(f"metrics -> {out / 'server_metrics.csv'}")


if __name__ == "__main__":
    main()
