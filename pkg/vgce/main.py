#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
VGCE - Command Line Application
Dataset generation, training, evaluation, feasibility, retrieval and benchmarks
"""

import json
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import pandas as pd
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from threadpoolctl import threadpool_limits

import structlog

from vgce import __version__
from vgce.core.config import get_settings
from vgce.core.exceptions import ConfigError, VGCEError
from vgce.core.logging import configure_logging
from vgce.core.seeding import stream
from vgce.models.concepts import Split, World
from vgce.schemas.config import RunConfig
from vgce.services import bench, checkpoint, evaluation, reporting, retrieval, sweep, trainer
from vgce.services.dataset_io import Dataset, describe_dataset, load_dataset, save_dataset
from vgce.services.synthetic import SyntheticSpec, generate_synthetic

logger = structlog.get_logger()

CHECKPOINT_NAME = "checkpoint.vgcm"


def create_app() -> typer.Typer:
    """Create and configure the CLI application"""
    app = typer.Typer(
        name="vgce",
        help="Compositional zero-shot recognition with variational graph embeddings.",
        add_completion=False,
        no_args_is_help=True,
    )

    @app.callback(invoke_without_command=True)
    def main_callback(
        version: bool = typer.Option(False, "--version", help="Print the version and exit"),
    ):
        settings = get_settings()
        configure_logging(settings.LOG, settings.LOG_FORMAT)
        if version:
            typer.echo(__version__)
            raise typer.Exit(0)

    app.command("gen-synthetic")(cmd_gen_synthetic)
    app.command("train")(cmd_train)
    app.command("eval")(cmd_eval)
    app.command("feasibility")(cmd_feasibility)
    app.command("retrieve")(cmd_retrieve)
    app.command("predict")(cmd_predict)
    app.command("bench-graph")(cmd_bench_graph)
    app.command("sweep-k")(cmd_sweep_k)
    app.command("describe")(cmd_describe)
    return app


# Shared plumbing

@contextmanager
def _cli_errors():
    try:
        yield
    except (ConfigError, ValidationError) as e:
        _fail(e, 2)
    except (VGCEError, OSError) as e:
        _fail(e, 1)


def _fail(error: Exception, code: int):
    message = str(error).strip().splitlines()[0] if str(error).strip() else type(error).__name__
    logger.error("command failed", error=message, kind=type(error).__name__)
    typer.echo(f"error: {message}", err=True)
    raise typer.Exit(code)


def _threads(threads: Optional[int]) -> int:
    return threads if threads is not None else get_settings().THREADS


def _load_config(config_path: Optional[Path], out: Optional[Path], seed: Optional[int], threads: int) -> RunConfig:
    config = RunConfig.from_file(config_path) if config_path is not None else RunConfig()
    return config.with_overrides(seed=seed, output_dir=out, threads=threads)


def _load_dataset(config: RunConfig) -> Dataset:
    return load_dataset(
        config.dataset_dir,
        world=config.world,
        fallback_node_dim=config.model.node_dim_fallback,
        seed=config.train.seed,
    )


def _load_model(config: RunConfig, dataset: Dataset, checkpoint_path: Optional[Path]):
    path = checkpoint_path or (config.output_dir / CHECKPOINT_NAME)
    params, header = checkpoint.load_checkpoint(path)
    checkpoint.check_compatible(header, int(dataset.node_features.shape[1]), dataset.store.dim, config)
    return params


# Commands

def cmd_gen_synthetic(
    out: Path = typer.Option(..., "--out", help="Directory to write the dataset into"),
    states: int = typer.Option(8, "--states"),
    objects: int = typer.Option(6, "--objects"),
    seen_fraction: float = typer.Option(0.5, "--seen-fraction"),
    unseen_fraction: float = typer.Option(0.25, "--unseen-fraction"),
    d: int = typer.Option(32, "--d", help="Image feature dimension"),
    m: int = typer.Option(16, "--m", help="Node feature dimension"),
    samples_per_pair: int = typer.Option(20, "--samples-per-pair"),
    noise: float = typer.Option(0.1, "--noise"),
    seed: int = typer.Option(7, "--seed"),
):
    """Write a seeded synthetic dataset directory."""
    started = time.perf_counter()
    with _cli_errors():
        spec = SyntheticSpec(states, objects, seen_fraction, unseen_fraction, d, m, samples_per_pair, noise, seed)
        dataset = generate_synthetic(spec)
        save_dataset(out, *dataset)
        reporting.write_manifest(
            out, "gen-synthetic", None, 1, time.perf_counter() - started, extra={"spec": asdict(spec)}
        )
        typer.echo(str(out))


def cmd_train(
    config_path: Optional[Path] = typer.Option(None, "--config", help="Run configuration JSON"),
    out: Optional[Path] = typer.Option(None, "--out", help="Override output_dir"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Override train.seed"),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """Train a model and write checkpoint, training log and manifest."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        config = _load_config(config_path, out, seed, n_threads)
        dataset = _load_dataset(config)
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=1):
            result = trainer.train(dataset, config, log_path=out_dir / "train_log.jsonl", progress=get_settings().PROGRESS)
        path = checkpoint.save_checkpoint(out_dir / CHECKPOINT_NAME, result.params, config)
        reporting.write_manifest(out_dir, "train", config, n_threads, time.perf_counter() - started, extra={"steps": result.steps})
        typer.echo(str(path))


def cmd_eval(
    config_path: Optional[Path] = typer.Option(None, "--config"),
    checkpoint_path: Optional[Path] = typer.Option(None, "--checkpoint"),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """Bias-swept evaluation on the test split; writes report.json and curve.csv."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        config = _load_config(config_path, out, seed, n_threads)
        dataset = _load_dataset(config)
        params = _load_model(config, dataset, checkpoint_path)
        report = evaluation.evaluate_model(dataset, params, config, Split.TEST, n_threads)
        out_dir = Path(config.output_dir)
        reporting.write_json(out_dir / "report.json", report.to_dict())
        reporting.write_csv(out_dir / "curve.csv", report.curve_frame())
        reporting.write_manifest(out_dir, "eval", config, n_threads, time.perf_counter() - started)
        typer.echo(json.dumps({"auc": report.auc, "best_hm": report.best_hm, "tau_used": report.tau_used}))


def cmd_feasibility(
    config_path: Optional[Path] = typer.Option(None, "--config"),
    checkpoint_path: Optional[Path] = typer.Option(None, "--checkpoint"),
    out: Optional[Path] = typer.Option(None, "--out"),
    tau: Optional[float] = typer.Option(None, "--tau", min=0.0, max=1.0, help="Override eval.tau"),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """Edge probability and feasibility decision for every state-object pair."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        config = _load_config(config_path, out, None, n_threads)
        dataset = _load_dataset(config)
        params = _load_model(config, dataset, checkpoint_path)
        vocab, splits = dataset.vocab, dataset.splits
        scored = evaluation.score_split(dataset, params, World.OPEN, Split.TEST, n_threads)
        threshold = config.eval.tau if tau is None else tau
        mask = evaluation.feasibility_mask(scored.edge_probs, threshold, splits.seen_pairs)
        frame = pd.DataFrame(
            [
                {
                    "state": vocab.states[s],
                    "object": vocab.objects[o],
                    "probability": float(scored.edge_probs[s, o]),
                    "feasible": int(mask.xi[s, o]),
                }
                for s in range(vocab.n_states)
                for o in range(vocab.n_objects)
            ]
        )
        out_dir = Path(config.output_dir)
        reporting.write_csv(out_dir / "feasibility.csv", frame)
        reporting.write_manifest(out_dir, "feasibility", config, n_threads, time.perf_counter() - started, extra={"tau": threshold})
        typer.echo(f"{mask.n_feasible} of {vocab.n_states * vocab.n_objects} pairs feasible at tau={threshold}")


def cmd_retrieve(
    config_path: Optional[Path] = typer.Option(None, "--config"),
    checkpoint_path: Optional[Path] = typer.Option(None, "--checkpoint"),
    out: Optional[Path] = typer.Option(None, "--out"),
    max_queries: Optional[int] = typer.Option(None, "--max-queries", min=1),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """R@k for (image, target state) queries over the test images."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        config = _load_config(config_path, out, seed, n_threads)
        dataset = _load_dataset(config)
        params = _load_model(config, dataset, checkpoint_path)
        report = evaluation.evaluate_model(dataset, params, config, Split.TEST, n_threads)
        queries = retrieval.build_retrieval_queries(
            dataset.splits, Split.TEST, max_queries, stream(config.train.seed, "retrieval")
        )
        result = retrieval.evaluate_retrieval(
            dataset,
            params,
            queries,
            config.eval.k_list,
            bias=report.best_hm_bias,
            world=config.world,
            threads=n_threads,
            tau=report.tau_used,
        )
        out_dir = Path(config.output_dir)
        reporting.write_json(out_dir / "retrieval.json", result.to_dict())
        reporting.write_csv(
            out_dir / "retrieval.csv",
            pd.DataFrame({"k": list(result.recall), "recall": list(result.recall.values())}),
        )
        reporting.write_manifest(out_dir, "retrieve", config, n_threads, time.perf_counter() - started)
        typer.echo(json.dumps(result.to_dict()["recall"]))


def cmd_predict(
    config_path: Optional[Path] = typer.Option(None, "--config"),
    checkpoint_path: Optional[Path] = typer.Option(None, "--checkpoint"),
    out: Optional[Path] = typer.Option(None, "--out"),
    top_k: int = typer.Option(5, "--top-k", min=1),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """Top-k composition predictions for every test image."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        config = _load_config(config_path, out, None, n_threads)
        dataset = _load_dataset(config)
        params = _load_model(config, dataset, checkpoint_path)
        vocab, splits = dataset.vocab, dataset.splits
        scored = evaluation.score_split(dataset, params, config.world, Split.TEST, n_threads)
        records = []
        for (image_id, label), ranked in zip(splits.test_samples, evaluation.predict_topk(scored.scores, top_k)):
            for rank, (pair, score) in enumerate(ranked, start=1):
                records.append(
                    {
                        "image_id": image_id,
                        "rank": rank,
                        "state": vocab.states[pair.state_idx],
                        "object": vocab.objects[pair.object_idx],
                        "score": score,
                        "correct": int(pair == label),
                    }
                )
        out_dir = Path(config.output_dir)
        reporting.write_csv(out_dir / "predictions.csv", pd.DataFrame(records))
        reporting.write_manifest(out_dir, "predict", config, n_threads, time.perf_counter() - started)
        typer.echo(str(out_dir / "predictions.csv"))


def cmd_bench_graph(
    out: Path = typer.Option(Path("runs/bench"), "--out"),
    shapes: Optional[List[str]] = typer.Option(None, "--shape", help="Preset name; repeatable (default: all)"),
    m: int = typer.Option(16, "--m", min=1),
    hidden: int = typer.Option(16, "--hidden", min=1),
    h: int = typer.Option(8, "--h", min=1),
    layers: int = typer.Option(2, "--layers", min=1),
    repeats: int = typer.Option(1, "--repeats", min=1),
    measure: bool = typer.Option(True, "--measure/--no-measure"),
    seed: int = typer.Option(0, "--seed", min=0),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """Node counts, predicted cost ratios and measured encoder epochs per dataset shape."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        names = shapes or list(bench.PRESETS)
        unknown = [n for n in names if n not in bench.PRESETS]
        if unknown:
            raise ConfigError(f"unknown dataset shape(s) {unknown}; choose from {sorted(bench.PRESETS)}")
        with threadpool_limits(limits=n_threads):
            rows = bench.bench_graph([bench.PRESETS[n] for n in names], m, hidden, h, layers, seed, measure, repeats)
        frame = bench.bench_frame(rows)
        reporting.write_csv(out / "bench.csv", frame)
        reporting.write_manifest(out, "bench-graph", None, n_threads, time.perf_counter() - started, extra={"shapes": names})

        table = Table(title="graph size")
        for column in ("name", "n_nodes", "n_cge_cw", "n_cge_ow", "cost_ratio_ow", "primitive_ms", "cge_ow_ms"):
            table.add_column(column)
        for row in rows:
            table.add_row(
                row.name,
                str(row.n_nodes),
                str(row.n_cge_cw),
                str(row.n_cge_ow),
                f"{row.cost_ratio_ow:.1f}",
                "-" if row.primitive_ms is None else f"{row.primitive_ms:.1f}",
                "-" if row.cge_ow_ms is None else f"{row.cge_ow_ms:.1f}",
            )
        Console().print(table)


def cmd_sweep_k(
    config_path: Optional[Path] = typer.Option(None, "--config"),
    k_values: List[int] = typer.Option([16, 32, 64], "--k", help="Embedding dimension; repeatable"),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    threads: Optional[int] = typer.Option(None, "--threads", min=1),
):
    """Train one model per k and report closed/open-world best HM."""
    started = time.perf_counter()
    n_threads = _threads(threads)
    with _cli_errors():
        config = _load_config(config_path, out, seed, n_threads)
        dataset = _load_dataset(config)
        with threadpool_limits(limits=1):
            rows = sweep.sweep_embedding_dim(dataset, config, k_values, n_threads)
        out_dir = Path(config.output_dir)
        reporting.write_csv(out_dir / "sweep.csv", sweep.sweep_frame(rows))
        reporting.write_manifest(out_dir, "sweep-k", config, n_threads, time.perf_counter() - started, extra={"k": list(k_values)})
        typer.echo(str(out_dir / "sweep.csv"))


def cmd_describe(
    dataset_dir: Optional[Path] = typer.Option(None, "--dataset", help="Dataset directory"),
    config_path: Optional[Path] = typer.Option(None, "--config"),
    as_json: bool = typer.Option(False, "--json", help="Print JSON instead of a table"),
):
    """Dataset statistics: vocabulary, output-space sizes and split counts."""
    with _cli_errors():
        config = _load_config(config_path, None, None, 1)
        if dataset_dir is not None:
            config = config.model_copy(update={"dataset_dir": dataset_dir})
        summary = describe_dataset(_load_dataset(config)).to_dict()
        if as_json:
            typer.echo(json.dumps(summary, sort_keys=True))
            return
        table = Table(title=str(config.dataset_dir))
        table.add_column("statistic")
        table.add_column("value")
        for key, value in summary.items():
            table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))
        Console().print(table)


app = create_app()


def run() -> None:
    app()


if __name__ == "__main__":
    run()
