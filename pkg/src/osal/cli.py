"""Command-line entry point.

One config file describes an experiment; seeds expand to run directories
internally so the aggregate step always sees matched configs. Override
precedence is file < environment < command-line, applied in that order.

Exit status: 0 when every requested artifact was written and validated,
2 for invalid configuration (with field diagnostics), 1 for runtime
failures (partial run state stays on disk).
"""
from __future__ import annotations

import functools
import json
import math
import os
from pathlib import Path

import click
import numpy as np
import yaml

from . import report as reporting
from .alloop import (
    LossConfig,
    TrainConfig,
    apply_overrides,
    config_from_dict,
    load_run_result,
    resume_experiment,
    run_many,
)
from .datapool import generate_blobs
from .errors import ConfigError, OsalError
from .report import _slug, build_curve, time_sampling, write_curve_csv, write_timing_csv
from .vnn import build_model, train_stage

# flag spellings; "ood" expands to the internal oracle kind
ORACLE_FLAGS = {"clean": "clean", "noisy": "noisy", "ood": "ood_reject", "human": "human"}


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            raise SystemExit(2) from None
        except (OsalError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(1) from None

    return wrapper


@click.group()
def main():
    """Open-set active learning: run, resume, benchmark, and report."""


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------

def _load_doc(config_path) -> dict:
    doc = yaml.safe_load(Path(config_path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config: file must hold a mapping")
    if isinstance(doc.get("oracle"), str):
        doc["oracle"] = {"kind": doc["oracle"]}
    return doc


def _fold_environment(doc: dict) -> dict:
    url = os.environ.get("OSAL_ORACLE_URL")
    if url:
        oracle = dict(doc.get("oracle") or {"kind": "clean"})
        oracle["url"] = url
        doc["oracle"] = oracle
    return doc


def _flag_pairs(seeds, oracle, strategy, variant, optimizer) -> list[str]:
    pairs = []
    if seeds:
        pairs.append("seeds=" + json.dumps(sorted(set(seeds))))
    if oracle:
        pairs.append("oracle.kind=" + ORACLE_FLAGS[oracle])
    if strategy:
        pairs.append(f"strategy={strategy}")
    if variant:
        pairs.append(f"variant={variant}")
    if optimizer:
        pairs.append(f"train.optimizer={optimizer}")
    return pairs


def _build_config(config_path, set_pairs, seeds, oracle, strategy, variant, optimizer):
    doc = _fold_environment(_load_doc(config_path))
    if oracle:
        doc.setdefault("oracle", {"kind": "clean"})
    if optimizer:
        doc.setdefault("train", {})
    pairs = _flag_pairs(seeds, oracle, strategy, variant, optimizer) + list(set_pairs)
    return config_from_dict(apply_overrides(doc, pairs))


def _resolve_run_root(run_dir, name: str) -> Path:
    if run_dir:
        return Path(run_dir)
    return Path(os.environ.get("OSAL_RUN_ROOT", "runs")) / _slug(name)


def config_options(fn):
    for opt in reversed(
        [
            click.option(
                "--config",
                "config_path",
                required=True,
                type=click.Path(exists=True, dir_okay=False),
                help="experiment config file (YAML)",
            ),
            click.option("--run-dir", "run_dir", type=click.Path(file_okay=False)),
            click.option("--seed", "seeds", type=int, multiple=True, help="replaces the config's seed list"),
            click.option("--set", "set_pairs", multiple=True, metavar="KEY=VALUE"),
            click.option("--oracle", type=click.Choice(sorted(ORACLE_FLAGS))),
            click.option("--strategy", type=click.Choice(["uncertainty", "weibull", "random"])),
            click.option("--variant", type=click.Choice(["m1", "m2"])),
            click.option("--optimizer", type=click.Choice(["sgd", "adam"])),
        ]
    ):
        fn = opt(fn)
    return fn


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

@main.command()
@config_options
@guarded
def run(config_path, run_dir, seeds, set_pairs, oracle, strategy, variant, optimizer):
    """Run one experiment: a directory per seed plus an aggregate curve CSV."""
    config = _build_config(config_path, set_pairs, seeds, oracle, strategy, variant, optimizer)
    run_root = _resolve_run_root(run_dir, config.name)
    run_root.mkdir(parents=True, exist_ok=True)
    results = run_many(config, run_root)
    curve = build_curve(config.name, results)
    write_curve_csv(curve, run_root / "aggregate.csv")
    click.echo(
        f"{len(results)} run(s) -> {run_root} "
        f"(final accuracy mean {curve.y_mean[-1]:.4f})"
    )


@main.command()
@click.option("--run-dir", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@guarded
def resume(run_dir):
    """Continue an interrupted run from its last complete stage."""
    result, was_complete = resume_experiment(run_dir)
    if was_complete:
        click.echo("already complete")
    else:
        click.echo(f"resumed through stage {result.records[-1].stage}")


@main.command("bench-sampling")
@click.option("--pool-size", default=10000, show_default=True)
@click.option("--labeled-size", default=2000, show_default=True)
@click.option("--classes", default=4, show_default=True)
@click.option("--dim", default=16, show_default=True)
@click.option("--epochs", default=15, show_default=True)
@click.option("--repetitions", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default="timing.csv", type=click.Path(dir_okay=False), show_default=True)
@guarded
def bench_sampling(pool_size, labeled_size, classes, dim, epochs, repetitions, seed, out_path):
    """Time a full scoring+selection pass per strategy on a synthetic pool."""
    n_per = math.ceil((pool_size + labeled_size) / classes)
    ds = generate_blobs(
        {
            "classes": classes,
            "n_per_class": n_per,
            "dim": dim,
            "stddev": 1.0,
            "seed": seed,
            "eval_per_class": 1,
        }
    )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds.train_ids))
    l_idx, u_idx = order[:labeled_size], order[labeled_size : labeled_size + pool_size]
    model = build_model("m1", ds.feature_shape, ds.num_classes, z_dim=min(dim, 16), rng=rng)
    model, _ = train_stage(
        model,
        (ds.train_features[l_idx], ds.train_labels[l_idx]),
        TrainConfig(epochs_per_stage=epochs, optimizer="adam"),
        LossConfig(beta=0.1),
        rng,
    )
    common = dict(
        model=model,
        unlabeled_ids=[ds.train_ids[i] for i in u_idx],
        unlabeled_features=ds.train_features[u_idx],
        repetitions=repetitions,
        b=10,
        seed=seed,
    )
    results = [
        time_sampling("random", **common),
        time_sampling("uncertainty", **common),
        time_sampling(
            "weibull",
            labeled_ids=[ds.train_ids[i] for i in l_idx],
            labeled_features=ds.train_features[l_idx],
            labeled_labels=[int(y) for y in ds.train_labels[l_idx]],
            **common,
        ),
    ]
    write_timing_csv(results, out_path)
    for r in results:
        click.echo(f"{r.strategy:>12}: {r.mean_seconds:.4f}s +- {r.std_seconds:.4f}s")
    click.echo(f"timing table -> {out_path}")


@main.command()
@click.argument("run_roots", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="defaults to <first root>/report")
@click.option("--plot/--no-plot", default=True, show_default=True)
@guarded
def report(run_roots, out_dir, plot):
    """Aggregate persisted runs into curve CSVs (labels = directory names)."""
    groups = {}
    for root in run_roots:
        root = Path(root)
        seed_dirs = sorted(p for p in root.glob("seed-*") if p.is_dir())
        groups[root.name] = [load_run_result(p) for p in seed_dirs] if seed_dirs else [
            load_run_result(root)
        ]
    out = Path(out_dir) if out_dir else Path(run_roots[0]) / "report"
    emitted = reporting.emit_curves(groups, out, plot=plot)
    for curve, path in emitted:
        click.echo(f"{curve.label}: final {curve.y_mean[-1]:.4f} -> {path}")
    if any(rec.rejected_ood for results in groups.values() for r in results for rec in r.records):
        path = reporting.write_rejection_csv(groups, out / "rejections.csv")
        click.echo(f"rejection summary -> {path}")


@main.command("serve-oracle")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.option("--ui-dir", type=click.Path(file_okay=False), help="serve the annotator UI from this directory")
@guarded
def serve_oracle(host, port, ui_dir):
    """Serve the annotation queue over HTTP until interrupted."""
    from .oracle_service import serve

    click.echo(f"annotation queue on http://{host}:{port}")
    serve(host=host, port=port, ui_dir=ui_dir)


@main.command("make-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--classes", default=4, show_default=True)
@click.option("--n-per-class", default=250, show_default=True)
@click.option("--dim", default=16, show_default=True)
@click.option("--stddev", default=1.0, show_default=True)
@click.option("--radius", default=6.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--name", default="blobs", show_default=True)
@guarded
def make_synthetic(out_dir, classes, n_per_class, dim, stddev, radius, seed, name):
    """Write a seeded blob-dataset spec plus materialized arrays."""
    cfg = {
        "classes": classes,
        "n_per_class": n_per_class,
        "dim": dim,
        "stddev": stddev,
        "radius": radius,
        "seed": seed,
        "name": name,
    }
    ds = generate_blobs(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_path = out / f"{name}.yaml"
    spec_path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    np.savez(
        out / f"{name}.npz",
        train_features=ds.train_features,
        train_labels=ds.train_labels,
        eval_features=ds.eval_features,
        eval_labels=ds.eval_labels,
    )
    click.echo(
        f"{len(ds.train_ids)} train / {len(ds.eval_ids)} eval samples -> {spec_path}"
    )


if __name__ == "__main__":
    main()
