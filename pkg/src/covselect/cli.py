"""Command-line entry point orchestrating the experiments end to end.

Subcommands mirror the pipeline: ``synth`` makes a dataset, ``stats``
summarizes subjects, ``matrix`` evaluates every source-target pair,
``features`` emits the predictor inputs, ``train-predictor`` fits the
per-fold models, and ``compare``/``sweep`` run the selection benchmark.
Every output is a deterministic function of the inputs and seeds; partial
outputs are removed when a command fails.

Exit codes: 0 success, 2 usage error, 3 data validation error,
4 numerical failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import report
from .data import (
    SynthConfig,
    covset_read,
    covset_write,
    dataset_is_synthetic,
    synth_generate,
)
from .exceptions import CovselectError, InputError, NumericalError, ValidationError
from .features import FEATURE_NAMES, PairFeatures
from .folds import leave_groups_out_folds
from .harness import (
    AccuracyMatrix,
    build_accuracy_matrix,
    build_feature_table,
    candidate_sweep,
    compare_methods,
    compute_all_stats,
    evaluate_selection,
    filter_by_intra,
)
from .predictor import TrainConfig, load_model, mlp_train, save_model, scaler_fit
from .rpa import RpaConfig
from .selection import ALL_METHODS

DEFAULT_INTRA_FILTER = 0.65

RUN_CONFIG_DEFAULTS = {
    "fold_seed": 0,
    "selection_seed": 0,
    "lgo_folds": 10,
    "target_folds": 5,
    "filter_intra": None,
    "rpa": {
        "equalize_dispersion": False,
        "rotation_tol": 1e-8,
        "rotation_max_iter": 500,
        "rotation_restarts": 4,
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "max_epochs": 1000,
        "patience": 50,
        "validation_fraction": 0.1,
        "weight_decay": 0.0,
        "seed": 0,
    },
}


class _Outputs:
    """Tracks files created by one command so failures leave nothing behind."""

    def __init__(self):
        self.paths: list[Path] = []

    def register(self, path) -> Path:
        p = Path(path)
        self.paths.append(p)
        return p

    def discard_all(self) -> None:
        for p in self.paths:
            try:
                if p.is_file():
                    p.unlink()
            except OSError:
                pass


def _fail(outputs: _Outputs, exc: CovselectError) -> None:
    outputs.discard_all()
    click.echo(f"error: {exc}", err=True)
    code = 4 if isinstance(exc, NumericalError) else 3
    sys.exit(code)


def _deep_update(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _parse_set(pairs) -> dict:
    """Parse repeated ``--set dotted.key=value`` overrides (JSON values)."""
    out: dict = {}
    for item in pairs:
        if "=" not in item:
            raise click.UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _load_json_config(path, sets, defaults=None) -> dict:
    cfg = dict(defaults or {})
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = _deep_update(cfg, json.load(fh))
    return _deep_update(cfg, _parse_set(sets))


def _run_config(config, sets) -> dict:
    return _load_json_config(config, sets, RUN_CONFIG_DEFAULTS)


def _rpa_config(cfg: dict) -> RpaConfig:
    return RpaConfig(**cfg["rpa"])


def _dataset_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_subjects(data_path, cfg: dict, filter_intra):
    """Load, optionally filter by intra accuracy, and return (subjects, stats).

    ``filter_intra``: None follows the config, whose ``null`` default means
    "0.65 for real recordings, no filter for synthetic data"; a number is a
    threshold; 0 disables filtering.
    """
    subjects = covset_read(data_path)
    if not subjects:
        raise ValidationError(f"{data_path}: covset holds no subjects")
    threshold = filter_intra if filter_intra is not None else cfg.get("filter_intra")
    if threshold is None:
        threshold = 0.0 if dataset_is_synthetic(subjects) else DEFAULT_INTRA_FILTER
    stats = compute_all_stats(
        subjects, fold_seed=cfg["fold_seed"], n_folds=cfg["target_folds"]
    )
    if threshold > 0.0:
        subjects = filter_by_intra(subjects, stats, threshold)
        if len(subjects) < 2:
            raise ValidationError(
                f"intra-accuracy filter at {threshold} left {len(subjects)} subjects"
            )
    return subjects, stats, float(threshold)


def _write_metadata(outputs: _Outputs, directory: Path, command: str, cfg: dict, extra: dict):
    meta = {"command": command, "config": cfg}
    meta.update(extra)
    path = outputs.register(directory / "metadata.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _matrix_to_files(outputs: _Outputs, matrix: AccuracyMatrix, directory: Path, figures: bool):
    csv_path = outputs.register(directory / "accuracy_matrix.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target_id"] + list(matrix.source_ids))
        for i, tid in enumerate(matrix.target_ids):
            writer.writerow([tid] + [repr(v) for v in matrix.values[i].tolist()])
    json_path = outputs.register(directory / "accuracy_matrix.json")
    doc = {
        "target_ids": matrix.target_ids,
        "source_ids": matrix.source_ids,
        "values": matrix.values.tolist(),
        "intra": matrix.intra.tolist(),
        "row_order": matrix.row_order.tolist(),
        "col_order": matrix.col_order.tolist(),
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    if figures:
        report.render_accuracy_matrix(
            matrix, outputs.register(directory / "accuracy_matrix.png")
        )


def _matrix_from_json(path) -> AccuracyMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return AccuracyMatrix(
        target_ids=[str(t) for t in doc["target_ids"]],
        source_ids=[str(s) for s in doc["source_ids"]],
        values=np.asarray(doc["values"], dtype=np.float64),
        intra=np.asarray(doc["intra"], dtype=np.float64),
        row_order=np.asarray(doc["row_order"], dtype=np.intp),
        col_order=np.asarray(doc["col_order"], dtype=np.intp),
    )


def _features_to_csv(outputs: _Outputs, path: Path, table: dict, matrix: AccuracyMatrix):
    path = outputs.register(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "target_id", *FEATURE_NAMES, "true_accuracy"])
        for (src, tgt) in sorted(table):
            feats = table[(src, tgt)].to_array()
            writer.writerow(
                [src, tgt]
                + [repr(float(v)) for v in feats]
                + [repr(matrix.lookup(tgt, src))]
            )


def _features_from_csv(path) -> tuple[dict, dict]:
    """Read a features CSV; returns (feature table, true accuracy table)."""
    table = {}
    truth = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["source_id", "target_id", *FEATURE_NAMES, "true_accuracy"]
        if header != expected:
            raise ValidationError(f"{path}: unexpected features CSV header")
        for row in reader:
            src, tgt = row[0], row[1]
            table[(src, tgt)] = PairFeatures.from_array(
                [float(v) for v in row[2 : 2 + len(FEATURE_NAMES)]]
            )
            truth[(src, tgt)] = float(row[-1])
    if not table:
        raise ValidationError(f"{path}: no feature rows")
    return table, truth


def _get_matrix(subjects, cfg, jobs, matrix_dir):
    if matrix_dir:
        return _matrix_from_json(Path(matrix_dir) / "accuracy_matrix.json")
    return build_accuracy_matrix(
        subjects,
        fold_seed=cfg["fold_seed"],
        cfg=_rpa_config(cfg),
        n_folds=cfg["target_folds"],
        jobs=jobs,
    )


@click.group()
def main():
    """Covariance-based transfer learning benchmark tools."""


@main.command()
@click.option("--config", type=click.Path(exists=True), required=True, help="SynthConfig JSON.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Output covset path.")
@click.option("--set", "sets", multiple=True, help="Override config fields (key=value).")
def synth(config, out_path, sets):
    """Generate a deterministic synthetic covset."""
    outputs = _Outputs()
    try:
        cfg = SynthConfig.from_dict(_load_json_config(config, sets))
        subjects = synth_generate(cfg)
        outputs.register(out_path)
        covset_write(out_path, subjects)
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"wrote {len(subjects)} subjects to {out_path}")


def _tril_list(c: np.ndarray) -> list:
    i, j = np.tril_indices(c.shape[0])
    return c[i, j].tolist()


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option(
    "--filter-intra",
    type=float,
    default=None,
    help="Keep subjects with intra accuracy above this (0 disables; "
    "default 0.65 for real data, off for synthetic).",
)
def stats(data, out_path, config, sets, filter_intra):
    """Per-subject means, dispersions, and intra-subject accuracies."""
    outputs = _Outputs()
    try:
        cfg = _run_config(config, sets)
        subjects, all_stats, threshold = _load_subjects(data, cfg, filter_intra)
        kept = {s.subject_id for s in subjects}
        doc = {
            "fold_seed": cfg["fold_seed"],
            "filter_intra": threshold,
            "dataset_hash": _dataset_hash(data),
            "subjects": {
                sid: {
                    "intra_accuracy": st.intra_accuracy,
                    "overall_dispersion": st.overall_dispersion,
                    "class_dispersion_1": st.class_dispersion_1,
                    "class_dispersion_2": st.class_dispersion_2,
                    "overall_mean_tril": _tril_list(st.overall_mean),
                    "class_mean_1_tril": _tril_list(st.class_mean_1),
                    "class_mean_2_tril": _tril_list(st.class_mean_2),
                    "included": sid in kept,
                }
                for sid, st in sorted(all_stats.items())
            },
        }
        path = outputs.register(out_path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"wrote stats for {len(all_stats)} subjects ({len(kept)} kept)")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--filter-intra", type=float, default=None)
@click.option("--jobs", type=int, default=None, help="Worker processes (default: all cores).")
@click.option("--figures/--no-figures", default=True)
def matrix(data, out_dir, config, sets, filter_intra, jobs, figures):
    """Transfer accuracy for every (target, source) pair."""
    outputs = _Outputs()
    try:
        cfg = _run_config(config, sets)
        subjects, _stats, threshold = _load_subjects(data, cfg, filter_intra)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mat = build_accuracy_matrix(
            subjects,
            fold_seed=cfg["fold_seed"],
            cfg=_rpa_config(cfg),
            n_folds=cfg["target_folds"],
            jobs=jobs,
        )
        _matrix_to_files(outputs, mat, out, figures)
        _write_metadata(
            outputs,
            out,
            "matrix",
            cfg,
            {"dataset_hash": _dataset_hash(data), "filter_intra": threshold,
             "n_subjects": len(subjects)},
        )
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"wrote accuracy matrix for {len(subjects)} subjects to {out_dir}")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--filter-intra", type=float, default=None)
@click.option("--matrix", "matrix_dir", type=click.Path(exists=True), default=None,
              help="Reuse a matrix output directory instead of recomputing.")
@click.option("--jobs", type=int, default=None)
def features(data, out_path, config, sets, filter_intra, matrix_dir, jobs):
    """Pair features for all ordered pairs, with true accuracies."""
    outputs = _Outputs()
    try:
        cfg = _run_config(config, sets)
        subjects, all_stats, threshold = _load_subjects(data, cfg, filter_intra)
        mat = _get_matrix(subjects, cfg, jobs, matrix_dir)
        table = build_feature_table(
            subjects, all_stats, fold_seed=cfg["fold_seed"], n_folds=cfg["target_folds"]
        )
        _features_to_csv(outputs, Path(out_path), table, mat)
        meta_path = outputs.register(Path(str(out_path) + ".meta.json"))
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(
                {"command": "features", "config": cfg, "filter_intra": threshold,
                 "dataset_hash": _dataset_hash(data)},
                fh,
                indent=2,
                sort_keys=True,
            )
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"wrote {len(table)} feature rows to {out_path}")


@main.command("train-predictor")
@click.option("--features", "features_path", type=click.Path(exists=True), required=True)
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
def train_predictor(features_path, folds, out_dir, config, sets):
    """Train one predictor per leave-groups-out fold."""
    outputs = _Outputs()
    try:
        cfg = _run_config(config, sets)
        table, truth = _features_from_csv(features_path)
        ids = sorted({t for _, t in table} | {s for s, _ in table})
        lgo = leave_groups_out_folds(ids, n_folds=folds, seed=cfg["selection_seed"])
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"folds": [], "train_config": cfg["train"],
                    "selection_seed": cfg["selection_seed"]}
        for fold_idx, (train_ids, test_ids) in enumerate(lgo):
            train_set = set(train_ids)
            rows, targets = [], []
            for (src, tgt) in sorted(table):
                if src in train_set and tgt in train_set:
                    rows.append(table[(src, tgt)].to_array())
                    targets.append(truth[(src, tgt)])
            if len(rows) < 2:
                raise InputError(f"train-predictor: fold {fold_idx} has too few pairs")
            x = np.asarray(rows)
            scaler = scaler_fit(x)
            fold_train = TrainConfig(
                **{**cfg["train"], "seed": cfg["train"]["seed"] + fold_idx}
            )
            model = mlp_train(scaler.apply(x), np.asarray(targets), fold_train)
            model_path = outputs.register(out / f"fold_{fold_idx:02d}.json")
            save_model(model_path, scaler, model)
            manifest["folds"].append(
                {"index": fold_idx, "train_ids": train_ids, "test_ids": test_ids,
                 "model": model_path.name}
            )
        manifest_path = outputs.register(out / "folds.json")
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"trained {len(lgo)} fold models into {out_dir}")


def _load_fold_models(models_dir):
    models_dir = Path(models_dir)
    with open(models_dir / "folds.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    lgo = []
    predictors = []
    for fold in manifest["folds"]:
        lgo.append((list(fold["train_ids"]), list(fold["test_ids"])))
        predictors.append(load_model(models_dir / fold["model"]))
    return lgo, predictors, manifest


def _selection_inputs(data, cfg, filter_intra, matrix_dir, features_path, jobs, outputs):
    subjects, all_stats, threshold = _load_subjects(data, cfg, filter_intra)
    mat = _get_matrix(subjects, cfg, jobs, matrix_dir)
    if features_path:
        table, _truth = _features_from_csv(features_path)
    else:
        table = build_feature_table(
            subjects, all_stats, fold_seed=cfg["fold_seed"], n_folds=cfg["target_folds"]
        )
    return subjects, all_stats, threshold, mat, table


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--models", "models_dir", type=click.Path(exists=True), required=True)
@click.option("--candidates", type=int, default=6, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--filter-intra", type=float, default=None)
@click.option("--matrix", "matrix_dir", type=click.Path(exists=True), default=None)
@click.option("--features", "features_path", type=click.Path(exists=True), default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--figures/--no-figures", default=True)
def compare(data, models_dir, candidates, out_dir, config, sets, filter_intra,
            matrix_dir, features_path, jobs, figures):
    """Method-comparison matrix at one candidate count."""
    outputs = _Outputs()
    try:
        cfg = _run_config(config, sets)
        subjects, all_stats, threshold, mat, table = _selection_inputs(
            data, cfg, filter_intra, matrix_dir, features_path, jobs, outputs
        )
        lgo, predictors, _manifest = _load_fold_models(models_dir)
        outcome = evaluate_selection(
            all_stats,
            mat,
            table,
            lgo,
            predictors,
            k_values=[candidates],
            methods=ALL_METHODS,
            seed=cfg["selection_seed"],
        )
        comp = compare_methods(outcome, candidates)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, values, fmt in (
            ("comparison_mean_diff.csv", comp.mean_diff, repr),
            ("comparison_not_different.csv", comp.not_different,
             lambda v: "true" if v else "false"),
            ("comparison_p_values.csv", comp.p_values, repr),
        ):
            path = outputs.register(out / name)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["method"] + comp.methods)
                for i, m in enumerate(comp.methods):
                    writer.writerow([m] + [fmt(v) for v in values[i].tolist()])
        if figures:
            report.render_comparison(comp, outputs.register(out / "comparison.png"))
        _write_metadata(
            outputs, out, "compare", cfg,
            {"dataset_hash": _dataset_hash(data), "filter_intra": threshold,
             "candidates": candidates, "n_subjects": len(subjects)},
        )
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"wrote method comparison at k={candidates} to {out_dir}")


def _parse_k_values(spec_str: str) -> list[int]:
    spec_str = spec_str.strip()
    if ".." in spec_str:
        lo, hi = spec_str.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(v) for v in spec_str.split(",") if v]
    if not values or min(values) < 1:
        raise click.UsageError(f"bad --candidates specification {spec_str!r}")
    return sorted(set(values))


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--models", "models_dir", type=click.Path(exists=True), required=True)
@click.option("--candidates", default="1..10", show_default=True,
              help="Range 'a..b' or comma list of candidate counts.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--filter-intra", type=float, default=None)
@click.option("--matrix", "matrix_dir", type=click.Path(exists=True), default=None)
@click.option("--features", "features_path", type=click.Path(exists=True), default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--figures/--no-figures", default=True)
def sweep(data, models_dir, candidates, out_dir, config, sets, filter_intra,
          matrix_dir, features_path, jobs, figures):
    """Gap to Oracle for a range of candidate counts."""
    outputs = _Outputs()
    try:
        k_values = _parse_k_values(candidates)
        cfg = _run_config(config, sets)
        subjects, all_stats, threshold, mat, table = _selection_inputs(
            data, cfg, filter_intra, matrix_dir, features_path, jobs, outputs
        )
        lgo, predictors, _manifest = _load_fold_models(models_dir)
        outcome = evaluate_selection(
            all_stats, mat, table, lgo, predictors,
            k_values=k_values, methods=ALL_METHODS, seed=cfg["selection_seed"],
        )
        rows = candidate_sweep(outcome)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = outputs.register(out / "sweep.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "k", "gap_to_oracle"])
            for m, k, gap in rows:
                writer.writerow([m, k, repr(gap)])
        if figures:
            report.render_sweep(rows, outputs.register(out / "sweep.png"))
        _write_metadata(
            outputs, out, "sweep", cfg,
            {"dataset_hash": _dataset_hash(data), "filter_intra": threshold,
             "k_values": k_values, "n_subjects": len(subjects)},
        )
    except CovselectError as exc:
        _fail(outputs, exc)
    click.echo(f"wrote sweep over k={k_values[0]}..{k_values[-1]} to {out_dir}")


if __name__ == "__main__":
    main()
