# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Accuracy reports comparing all systems, and the embedding-size / depth sweeps."""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from user_embed.baselines import LogRegModel, PcaFeatures, StackingFeatures, fit_majority
from user_embed.config import RunConfig
from user_embed.data import (
    DatasetSchema,
    EncodedDataset,
    Normalizer,
    UserRecord,
    Vocabulary,
    build_vocab,
    fit_normalizer,
    split,
)
from user_embed.errors import DataError, NumericsError
from user_embed.model import UserModel, init_model, param_count, predict
from user_embed.synth import BayesOracle, SynthTruth
from user_embed.training import EVAL_CHUNK, evaluate, fine_tune, train

logger = logging.getLogger(__name__)

NOTICE = (
    "Accuracies are computed on the dataset identified by the fingerprint "
    "and are not comparable to figures obtained on other (proprietary) data."
)

ABSENT = "n/a"


def accuracy(predictions: Sequence[int] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Fraction of exact matches.

    Raises:
        NumericsError: On empty input or unequal lengths.
    """
    preds = np.asarray(predictions)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise NumericsError(f"Length mismatch: {preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise NumericsError("accuracy of empty input")
    return float(np.mean(preds == labels))


def dataset_fingerprint(path: str | Path) -> str:
    """SHA-256 of the dataset file contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def records_fingerprint(records: Iterable[UserRecord]) -> str:
    """SHA-256 of records serialized exactly as ``write_jsonl`` would."""
    digest = hashlib.sha256()
    for record in records:
        line = json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
        digest.update(line.encode("utf-8"))
    return digest.hexdigest()


@dataclass
class Splits:
    """Train/validation/test splits with the vocabulary and normalizer fitted on train."""

    schema: DatasetSchema
    vocab: Vocabulary
    normalizer: Normalizer
    train_records: list[UserRecord]
    val_records: list[UserRecord]
    test_records: list[UserRecord]
    train: EncodedDataset
    val: EncodedDataset
    test: EncodedDataset
    fingerprint: str = ""


def prepare_splits(
    records: Sequence[UserRecord],
    schema: DatasetSchema,
    fractions: tuple[float, float, float],
    seed: int,
    min_freq: int = 1,
    fingerprint: str | None = None,
    vocab: Vocabulary | None = None,
    normalizer: Normalizer | None = None,
) -> Splits:
    """Split records and encode every split against training statistics.

    A checkpoint's ``vocab`` and ``normalizer`` can be passed in to encode
    the splits exactly as the model saw them during training.
    """
    train_records, val_records, test_records = split(records, fractions, seed)
    if vocab is None:
        vocab = build_vocab(train_records, schema, min_freq)
    if normalizer is None:
        normalizer = fit_normalizer(train_records, schema.numeric_dim)
    return Splits(
        schema=schema,
        vocab=vocab,
        normalizer=normalizer,
        train_records=train_records,
        val_records=val_records,
        test_records=test_records,
        train=EncodedDataset(train_records, vocab, schema, normalizer),
        val=EncodedDataset(val_records, vocab, schema, normalizer),
        test=EncodedDataset(test_records, vocab, schema, normalizer),
        fingerprint=fingerprint or records_fingerprint(records),
    )


def predict_dataset(model: UserModel, dataset: EncodedDataset) -> dict[str, np.ndarray]:
    """Per-head predictions over a whole split, in chunks."""
    parts: dict[str, list[np.ndarray]] = {target: [] for target in model.heads}
    for start in range(0, len(dataset), EVAL_CHUNK):
        batch = dataset.batch(np.arange(start, min(start + EVAL_CHUNK, len(dataset))))
        for target, preds in predict(model, batch).items():
            parts[target].append(preds)
    return {target: np.concatenate(chunks) for target, chunks in parts.items()}


@dataclass
class EvalReport:
    """Test accuracy per (system, target); ``None`` marks an absent cell."""

    targets: list[str]
    rows: dict[str, dict[str, float | None]] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def systems(self) -> list[str]:
        return list(self.rows)

    def add_row(self, system: str, accuracies: Mapping[str, float | None]) -> None:
        row = {}
        for target in self.targets:
            value = accuracies.get(target)
            if value is not None and not 0.0 <= value <= 1.0:
                raise NumericsError(f"Accuracy {value} for {system}/{target} outside [0, 1]")
            row[target] = value
        self.rows[system] = row

    def cell(self, system: str, target: str) -> float | None:
        return self.rows[system][target]

    def best_systems(self) -> dict[str, list[str]]:
        """Per target, the non-oracle system(s) with the highest accuracy."""
        best = {}
        for target in self.targets:
            scored = {
                s: r[target] for s, r in self.rows.items() if s != "oracle" and r[target] is not None
            }
            if not scored:
                best[target] = []
                continue
            top = max(scored.values())
            best[target] = [s for s, v in scored.items() if v == top]
        return best

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_dict(self.rows, orient="index", columns=self.targets)
        frame.index.name = "system"
        return frame

    def to_dict(self) -> dict[str, Any]:
        return {
            "targets": self.targets,
            "rows": self.rows,
            "best": self.best_systems(),
            "metadata": self.metadata,
            "notice": NOTICE,
        }

    def write(self, stem: str | Path) -> None:
        """Write ``<stem>.csv`` (systems x targets plus a footer) and ``<stem>.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path = stem.with_suffix(".csv")
        self.to_frame().to_csv(csv_path, na_rep=ABSENT, float_format="%.6f")
        with open(csv_path, "a", encoding="utf-8") as f:
            f.write(f"# dataset_fingerprint: {self.metadata.get('dataset_fingerprint', '')}\n")
            f.write(f"# seed: {self.metadata.get('seed', '')}\n")
            f.write(f"# notice: {NOTICE}\n")
        with open(stem.with_suffix(".json"), "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, default=str)
            f.write("\n")
        logger.info("Wrote report %s.{csv,json}", stem)


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Cell-wise mean over reports (e.g. several seeds); absent if absent anywhere."""
    if not reports:
        raise NumericsError("No reports to average")
    out = EvalReport(targets=list(reports[0].targets))
    for system in reports[0].systems:
        row: dict[str, float | None] = {}
        for target in out.targets:
            values = [r.rows.get(system, {}).get(target) for r in reports]
            row[target] = None if any(v is None for v in values) else float(np.mean(values))
        out.add_row(system, row)
    out.metadata = {
        "seeds": [r.metadata.get("seed") for r in reports],
        "dataset_fingerprint": reports[0].metadata.get("dataset_fingerprint"),
        "averaged_over": len(reports),
    }
    return out


def train_model(splits: Splits, run: RunConfig, seed: int, **model_changes: Any) -> tuple[UserModel, Any]:
    """Initialize and train one multi-task model with seed ``seed``."""
    cfg = run.model_config(len(splits.schema.sequence_names), seed=seed, **model_changes)
    model = init_model(cfg, splits.schema, splits.vocab, splits.normalizer)
    return train(model, splits.train, splits.val, replace(run.train, seed=seed))


def compare_systems(
    splits: Splits,
    run: RunConfig,
    seed: int,
    truth: SynthTruth | None = None,
    model: UserModel | None = None,
    finetuned: Mapping[str, UserModel] | None = None,
    systems: Sequence[str] | None = None,
) -> EvalReport:
    """Test-split accuracy of every requested system.

    Systems missing a pre-trained artifact are trained here on the same
    train/validation splits. The oracle row needs the synthetic ground
    truth and is marked absent otherwise.

    Raises:
        DataError: If a supplied model was built for another schema.
    """
    systems = list(systems or run.eval.systems)
    targets = list(splits.schema.target_names)
    labels = splits.test.targets
    report = EvalReport(targets=targets)
    report.metadata = {
        "seed": seed,
        "dataset_fingerprint": splits.fingerprint,
        "config": run.to_dict(),
        "split_sizes": [len(splits.train), len(splits.val), len(splits.test)],
    }

    for supplied in [model, *(finetuned or {}).values()]:
        if supplied is not None and supplied.schema != splits.schema:
            raise DataError("Supplied model was trained on a different schema")

    def row_from(preds: np.ndarray) -> dict[str, float | None]:
        return {t: accuracy(preds[:, j], labels[:, j]) for j, t in enumerate(targets)}

    if "argmax" in systems:
        majority = fit_majority(splits.train.targets, splits.schema.cardinalities)
        report.add_row("argmax", row_from(majority.predict(len(splits.test))))

    logreg_cfg = replace(run.baselines.logreg, seed=seed)
    if "stacking" in systems:
        stacking = LogRegModel(StackingFeatures(), logreg_cfg).fit(splits.train, splits.val)
        report.add_row("stacking", row_from(stacking.predict(splits.test)))

    if "pca" in systems:
        pca = LogRegModel(
            PcaFeatures(run.baselines.pca_components, run.baselines.pca_solver), logreg_cfg
        ).fit(splits.train, splits.val)
        report.add_row("pca", row_from(pca.predict(splits.test)))
        report.metadata["pca_components"] = pca.describe()["components"]

    if "model" in systems or "finetuned" in systems:
        if model is None:
            model, log = train_model(splits, run, seed)
            report.metadata["train_stop_reason"] = log.stop_reason
            report.metadata["train_epochs"] = len(log.epochs)
        report.metadata["param_count"] = param_count(model)

    if "model" in systems and model is not None:
        preds = predict_dataset(model, splits.test)
        report.add_row(
            "model",
            {t: accuracy(preds[t], labels[:, j]) if t in preds else None for j, t in enumerate(targets)},
        )

    if "finetuned" in systems and model is not None:
        tuned = dict(finetuned or {})
        row: dict[str, float | None] = {}
        for j, target in enumerate(targets):
            if target not in tuned and target in model.heads:
                tuned[target], _ = fine_tune(model, target, splits.train, splits.val, run.train)
            if target in tuned:
                preds = predict_dataset(tuned[target], splits.test)
                row[target] = accuracy(preds[target], labels[:, j])
            else:
                row[target] = None
        report.add_row("finetuned", row)

    if "oracle" in systems:
        if truth is not None:
            report.add_row("oracle", row_from(BayesOracle(truth).predict(splits.test_records)))
        else:
            logger.warning("No synthetic ground truth available; oracle row marked absent")
            report.add_row("oracle", {})

    logger.info("Comparison (seed %d):\n%s", seed, report.to_frame().to_string())
    return report


@dataclass
class SweepPoint:
    value: int
    seed: int
    target: str
    accuracy: float
    initial_val_loss: float


@dataclass
class SweepResult:
    """Test accuracies per (grid value, seed, target)."""

    parameter: str
    grid: list[int]
    seeds: list[int]
    points: list[SweepPoint] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(p) for p in self.points])

    def accuracies(self, value: int, target: str) -> list[float]:
        return [p.accuracy for p in self.points if p.value == value and p.target == target]

    def mean_accuracy(self, value: int, target: str) -> float:
        return float(np.mean(self.accuracies(value, target)))

    def summary(self) -> pd.DataFrame:
        """Mean, min and max accuracy per (grid value, target)."""
        frame = self.to_frame()
        return (
            frame.groupby(["value", "target"], sort=False)["accuracy"]
            .agg(["mean", "min", "max"])
            .reset_index()
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameter": self.parameter,
            "grid": self.grid,
            "seeds": self.seeds,
            "points": [asdict(p) for p in self.points],
        }

    def write(self, stem: str | Path) -> None:
        """Write raw points (CSV + JSON) and the per-value summary CSV."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(stem.with_suffix(".csv"), index=False)
        self.summary().to_csv(stem.parent / f"{stem.name}_summary.csv", index=False)
        with open(stem.with_suffix(".json"), "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        logger.info("Wrote sweep %s (%d points)", stem, len(self.points))


def _sweep_point(
    splits: Splits, run: RunConfig, changes: dict[str, Any], value: int, seed: int
) -> list[SweepPoint]:
    """Train one fresh model for a grid point and score it on the test split."""
    cfg = run.model_config(len(splits.schema.sequence_names), seed=seed, **changes)
    model = init_model(cfg, splits.schema, splits.vocab, splits.normalizer)
    initial_loss, _ = evaluate(model, splits.val)
    model, _ = train(model, splits.train, splits.val, replace(run.train, seed=seed))
    preds = predict_dataset(model, splits.test)
    return [
        SweepPoint(
            value=value,
            seed=seed,
            target=target,
            accuracy=accuracy(preds[target], splits.test.targets[:, j]),
            initial_val_loss=initial_loss,
        )
        for j, target in enumerate(splits.schema.target_names)
    ]


def _run_sweep(
    parameter: str,
    splits: Splits,
    run: RunConfig,
    grid: Sequence[int],
    seeds: Sequence[int],
    changes_for: Any,
    jobs: int,
) -> SweepResult:
    if not grid:
        raise NumericsError(f"Sweep over {parameter} needs a non-empty grid")
    tasks = [(value, seed) for value in grid for seed in seeds]
    logger.info("Sweep %s: %d runs (grid %s x seeds %s, jobs=%d)", parameter, len(tasks), list(grid), list(seeds), jobs)
    result = SweepResult(parameter=parameter, grid=list(grid), seeds=list(seeds))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_sweep_point, splits, run, changes_for(value), value, seed)
                for value, seed in tasks
            ]
            for future in futures:
                result.points.extend(future.result())
    else:
        for value, seed in tasks:
            result.points.extend(_sweep_point(splits, run, changes_for(value), value, seed))
    return result


def sweep_embedding_size(
    splits: Splits,
    run: RunConfig,
    grid: Sequence[int] | None = None,
    seeds: Sequence[int] | None = None,
    jobs: int | None = None,
) -> SweepResult:
    """Accuracy as a function of the (shared) sequence embedding size."""
    return _run_sweep(
        "embedding_size",
        splits,
        run,
        grid if grid is not None else run.eval.embedding_grid,
        seeds if seeds is not None else run.eval.seeds,
        lambda value: {"embedding_dims": value},
        jobs or run.eval.jobs,
    )


def sweep_depth(
    splits: Splits,
    run: RunConfig,
    grid: Sequence[int] | None = None,
    seeds: Sequence[int] | None = None,
    jobs: int | None = None,
) -> SweepResult:
    """Accuracy as a function of trunk depth at a fixed embedding size."""
    size = run.eval.sweep_embedding_size
    return _run_sweep(
        "trunk_depth",
        splits,
        run,
        grid if grid is not None else run.eval.depth_grid,
        seeds if seeds is not None else run.eval.seeds,
        lambda value: {"embedding_dims": size, "trunk_depth": value},
        jobs or run.eval.jobs,
    )
