"""Command-line front end. Data goes to declared output paths, logs to stderr.

Every command resolves its options against an optional JSON config file (CLI
flags win), derives all randomness from one seed, and writes a manifest with
input digests so runs are reproducible from the manifest alone.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from . import __version__
from .catalog import ALL_FEATURE_NAMES, FOTS_FEATURES, NUMERIC_FEATURE_SETS, FeatureSetName
from .evaluate import (
    experiment_grid,
    grid_csv,
    grid_markdown,
    oof_scores,
    report_json_text,
    run_cross_dataset,
    run_cv,
    write_roc_points,
)
from .extract import extract_capture
from .flows import write_session_dump
from .learners import ALL_ALGORITHMS, Algorithm, ModelSpec
from .pipeline import (
    CompositionPlan,
    compose,
    derive_seed,
    read_feature_csv,
    stratified_kfold,
    table_ii_plan,
    write_feature_csv,
    write_manifest,
)
from .tls import CertificateStore, export_logs

ALGO_CHOICES = [a.value for a in ALL_ALGORITHMS] + ["all"]
SET_CHOICES = [s.value for s in FeatureSetName] + ["all"]


def _echo(message: str) -> None:
    click.echo(message, err=True)


OUTPUT_KEYS = ("out_path", "out_dir", "tls_csv", "session_dump", "logs_dir")


def _manifest_config(params: dict) -> dict:
    """Run configuration without output locations (they don't affect results)."""
    return {k: v for k, v in params.items() if k not in OUTPUT_KEYS}


def _merge_config(ctx: click.Context, config_path) -> dict:
    """Config file supplies values for options left at their defaults."""
    resolved = dict(ctx.params)
    resolved.pop("config", None)
    if not config_path:
        return resolved
    file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
    for name, value in file_values.items():
        if name not in resolved:
            continue
        source = ctx.get_parameter_source(name)
        if source is not None and source.name != "COMMANDLINE":
            resolved[name] = value
    return resolved


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


@click.group()
@click.version_option(version=__version__, prog_name="encflow")
def main() -> None:
    """Encrypted-traffic feature extraction and detection experiments."""


def _read_session_labels(path) -> dict:
    labels = {}
    with open(path, "r", encoding="utf-8", newline="") as fp:
        for record in csv.DictReader(fp):
            labels[record["session_id"]] = int(record["label"])
    return labels


@main.command()
@click.argument("pcaps", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label", type=click.IntRange(0, 1), default=None, help="Capture-level label: 0 legitimate, 1 malicious.")
@click.option("--source", required=True, help="Source dataset tag recorded in every row.")
@click.option("--window", default=15, show_default=True, help="Fixed packet window size.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Feature CSV output.")
@click.option("--encrypted-only/--all-sessions", default=True, show_default=True)
@click.option("--idle-timeout", default=300.0, show_default=True, help="Flow idle timeout, seconds.")
@click.option("--session-dump", type=click.Path(dir_okay=False), default=None, help="JSONL session summaries.")
@click.option("--export-logs", "logs_dir", type=click.Path(file_okay=False), default=None, help="conn/ssl/x509 TSV dir.")
@click.option("--tls-csv", type=click.Path(dir_okay=False), default=None, help="Also write the TLS feature block CSV.")
@click.option("--session-labels", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Sidecar CSV (session_id,label) overriding --label per session.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def extract(ctx, pcaps, label, source, window, out_path, encrypted_only, idle_timeout,
            session_dump, logs_dir, tls_csv, session_labels, config):
    """Extract labeled feature rows from PCAP/PCAPNG captures."""
    params = _merge_config(ctx, config)
    label = params["label"]
    sidecar = _read_session_labels(params["session_labels"]) if params["session_labels"] else None
    if label is None and sidecar is None:
        raise click.UsageError("either --label or --session-labels is required")
    rows, fots_rows, sessions = [], [], []
    counts: dict = {}
    store = CertificateStore()
    bundles = []
    try:
        for pcap in pcaps:
            result = extract_capture(
                pcap,
                label=label if label is not None else 0,
                source=params["source"],
                window_size=params["window"],
                encrypted_only=params["encrypted_only"],
                idle_timeout_s=params["idle_timeout"],
                session_labels=sidecar,
                cert_store=store,
            )
            if result.truncation is not None:
                _echo(f"warning: {pcap}: truncated at offset {result.truncation.offset}: {result.truncation.message}")
            rows.extend(result.rows)
            fots_rows.extend(result.fots_rows)
            sessions.extend(result.sessions)
            bundles.extend(result.bundles)
            for key, value in result.counts.items():
                counts[key] = counts.get(key, 0) + value
        write_feature_csv(rows, ALL_FEATURE_NAMES, params["out_path"])
        if params["tls_csv"]:
            write_feature_csv(fots_rows, FOTS_FEATURES, params["tls_csv"])
        if params["session_dump"]:
            write_session_dump(sessions, params["session_dump"])
        if params["logs_dir"]:
            export_logs(bundles, params["logs_dir"])
        write_manifest(
            str(params["out_path"]) + ".manifest.json",
            command="extract",
            config=_manifest_config({k: v for k, v in params.items() if k != "pcaps"}),
            inputs=pcaps,
            row_counts=counts,
        )
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(f"extract failed: {exc}") from exc
    _echo(f"extract: {counts.get('frames', 0)} frames -> {len(rows)} feature rows ({params['out_path']})")


@main.command(name="compose")
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--table-ii-scale", type=float, default=None,
              help="Use the built-in composition proportions scaled by this factor.")
@click.option("--inputs", "inputs", multiple=True, required=True, metavar="SRC=CSV",
              help="Per-source feature CSVs, e.g. mcfp=mcfp.csv (repeatable).")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def compose_cmd(ctx, plan_path, table_ii_scale, inputs, seed, out_path, config):
    """Compose a training dataset from per-source feature CSVs."""
    params = _merge_config(ctx, config)
    if params["plan_path"] is None and params["table_ii_scale"] is None:
        raise click.UsageError("either --plan or --table-ii-scale is required")
    try:
        if params["plan_path"] is not None:
            plan = CompositionPlan.from_json(Path(params["plan_path"]).read_text(encoding="utf-8"))
        else:
            plan = table_ii_plan(scale=params["table_ii_scale"])
        plan = CompositionPlan(targets=plan.targets, seed=params["seed"])
        sources = {}
        feature_names = None
        input_paths = []
        for item in params["inputs"]:
            src, _, path = item.partition("=")
            if not path:
                raise click.UsageError(f"--inputs expects SRC=CSV, got {item!r}")
            rows, names = read_feature_csv(path)
            if feature_names is None:
                feature_names = names
            elif names != feature_names:
                raise _fail(f"{path}: feature columns differ from the first input")
            sources[src] = rows
            input_paths.append(path)
        composed = compose(sources, plan)
        write_feature_csv(composed, feature_names, params["out_path"])
        by_source: dict = {}
        for row in composed:
            key = f"{row.source_dataset}/{'malicious' if row.label else 'legitimate'}"
            by_source[key] = by_source.get(key, 0) + 1
        write_manifest(
            str(params["out_path"]) + ".manifest.json",
            command="compose",
            config=_manifest_config({**{k: v for k, v in params.items() if k != "inputs"},
                                     "inputs": list(params["inputs"]), "plan": json.loads(plan.to_json())}),
            inputs=input_paths,
            row_counts={"total": len(composed), **by_source},
        )
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(f"compose failed: {exc}") from exc
    _echo(f"compose: {len(composed)} rows -> {params['out_path']}")


def _algorithms_for(name: str):
    return list(ALL_ALGORITHMS) if name == "all" else [Algorithm(name)]


def _sets_for(name: str):
    return list(NUMERIC_FEATURE_SETS) if name == "all" else [FeatureSetName(name)]


@main.command(name="eval")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--algo", type=click.Choice(ALGO_CHOICES), default="all", show_default=True)
@click.option("--set", "set_name", type=click.Choice(SET_CHOICES), default="all", show_default=True)
@click.option("--k", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--workers", default=1, show_default=True, help="Parallel grid cells (results identical to sequential).")
@click.option("--emit-roc", is_flag=True, default=False, help="Write out-of-fold ROC points per cell.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def eval_cmd(ctx, data_path, algo, set_name, k, seed, out_dir, workers, emit_roc, config):
    """Cross-validated evaluation over algorithms and feature sets."""
    params = _merge_config(ctx, config)
    try:
        rows, _ = read_feature_csv(params["data_path"])
        out = Path(params["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        algorithms = _algorithms_for(params["algo"])
        feature_sets = _sets_for(params["set_name"])
        grid = experiment_grid(
            rows,
            algorithms=algorithms,
            feature_sets=feature_sets,
            k=params["k"],
            seed=params["seed"],
            workers=params["workers"],
        )
        for (algo_name, fs_name), report in sorted(grid.reports.items()):
            (out / f"report-{algo_name}-{fs_name}.json").write_text(report_json_text(report), encoding="utf-8")
        (out / "grid.csv").write_text(grid_csv(grid), encoding="utf-8")
        (out / "grid.md").write_text(grid_markdown(grid), encoding="utf-8")
        if params["emit_roc"]:
            fold_plan = stratified_kfold(rows, k=params["k"], seed=derive_seed(params["seed"], "folds"))
            for algo_obj in algorithms:
                for fs in feature_sets:
                    spec = ModelSpec(algorithm=algo_obj, seed=derive_seed(params["seed"], f"{algo_obj.value}:{fs.value}"))
                    scores, labels = oof_scores(spec, rows, fs, fold_plan)
                    write_roc_points(out / f"roc-{algo_obj.value}-{fs.value}.csv", scores, labels)
        write_manifest(
            out / "manifest.json",
            command="eval",
            config=_manifest_config(params),
            inputs=[params["data_path"]],
            row_counts={"rows": len(rows), "cells": len(grid.reports)},
        )
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(f"eval failed: {exc}") from exc
    _echo(f"eval: {len(grid.reports)} cell(s) -> {out}")


@main.command(name="crossdataset")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--algo", type=click.Choice([a.value for a in ALL_ALGORITHMS]), default="RF", show_default=True)
@click.option("--set", "set_name", type=click.Choice([s.value for s in FeatureSetName]), default="FOS", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def crossdataset_cmd(ctx, data_path, algo, set_name, seed, out_dir, config):
    """Hold out each source dataset in both train/test directions."""
    params = _merge_config(ctx, config)
    try:
        rows, _ = read_feature_csv(params["data_path"])
        by_source: dict = {}
        for row in rows:
            by_source.setdefault(row.source_dataset, []).append(row)
        reports = run_cross_dataset(
            ModelSpec(algorithm=Algorithm(params["algo"])),
            by_source,
            FeatureSetName(params["set_name"]),
            seed=params["seed"],
        )
        out = Path(params["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        payload = [r.to_json_dict() for r in reports]
        (out / "crossdataset.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        lines = []
        for r in reports:
            lines.append(f"## {r.direction.value}")
            lines.append("")
            lines.append("| held-out source | accuracy | roc-auc | FPR | TPR |")
            lines.append("| --- | --- | --- | --- | --- |")
            for src, cell in sorted(r.cells.items()):
                lines.append(
                    f"| {src} | {cell['accuracy']:.4f} | {cell['roc_auc']:.4f} "
                    f"| {cell['fpr']:.4f} | {cell['tpr']:.4f} |"
                )
            lines.append("")
        (out / "crossdataset.md").write_text("\n".join(lines), encoding="utf-8")
        write_manifest(
            out / "manifest.json",
            command="crossdataset",
            config=_manifest_config(params),
            inputs=[params["data_path"]],
            row_counts={"rows": len(rows), "sources": len(by_source)},
        )
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(f"crossdataset failed: {exc}") from exc
    _echo(f"crossdataset: {len(by_source)} sources x 2 directions -> {out}")


if __name__ == "__main__":
    sys.exit(main())
