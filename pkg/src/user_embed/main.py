# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from user_embed.checkpoint import load_checkpoint, save_checkpoint
from user_embed.config import (
    RunConfig,
    apply_override,
    load_config,
    resolve_config,
    save_effective_config,
)
from user_embed.data import (
    DatasetSchema,
    EncodedDataset,
    UserRecord,
    load_jsonl,
    load_schema,
    save_schema,
    write_jsonl,
)
from user_embed.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericsError,
    UserEmbedError,
)
from user_embed.evaluation import (
    Splits,
    average_reports,
    compare_systems,
    dataset_fingerprint,
    prepare_splits,
    sweep_depth,
    sweep_embedding_size,
)
from user_embed.model import UserModel, init_model, represent
from user_embed.synth import SynthTruth, load_truth, save_truth, synth_generate
from user_embed.training import EVAL_CHUNK, fine_tune, train

logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICS = 4

DATASET_NAME = "dataset.jsonl"
SCHEMA_NAME = "schema.json"
TRUTH_NAME = "truth.json"
CHECKPOINT_NAME = "checkpoint.json"


class Application:
    """Runs one CLI command against a resolved configuration."""

    def __init__(self, run: RunConfig) -> None:
        self.run = run
        self.out = run.output_dir

    def _load_dataset(self) -> tuple[list[UserRecord], DatasetSchema, Optional[SynthTruth], str]:
        """Records, schema, optional ground truth and fingerprint of the configured data.

        Without ``data.dataset`` the synthetic generator is run in memory.
        The schema and ground truth default to ``schema.json`` and
        ``truth.json`` next to the dataset file.
        """
        data = self.run.data
        if data.dataset is None:
            logger.info("No dataset configured; generating %d synthetic users", self.run.synth.n_users)
            records, schema, truth = synth_generate(self.run.synth)
            fingerprint = ""
            return records, schema, truth, fingerprint

        dataset_path = Path(data.dataset)
        schema_path = Path(data.schema) if data.schema else dataset_path.parent / SCHEMA_NAME
        schema = load_schema(schema_path)
        records = load_jsonl(dataset_path, schema)
        truth_path = Path(data.truth) if data.truth else dataset_path.parent / TRUTH_NAME
        truth = load_truth(truth_path) if truth_path.exists() else None
        logger.info("Loaded %d records from %s", len(records), dataset_path)
        return records, schema, truth, dataset_fingerprint(dataset_path)

    def _splits(self, model: Optional[UserModel] = None) -> tuple[Splits, Optional[SynthTruth]]:
        records, schema, truth, fingerprint = self._load_dataset()
        if model is not None and model.schema != schema:
            raise DataError("Checkpoint schema does not match the dataset schema")
        splits = prepare_splits(
            records,
            schema,
            self.run.data.split,
            self.run.seed,
            self.run.data.min_freq,
            fingerprint=fingerprint or None,
            vocab=model.vocab if model is not None else None,
            normalizer=model.normalizer if model is not None else None,
        )
        logger.info(
            "Splits: train=%d val=%d test=%d", len(splits.train), len(splits.val), len(splits.test)
        )
        return splits, truth

    def synth(self) -> None:
        """Write dataset.jsonl, schema.json and the truth.json sidecar."""
        records, schema, truth = synth_generate(self.run.synth)
        self.out.mkdir(parents=True, exist_ok=True)
        count = write_jsonl(records, self.out / DATASET_NAME)
        save_schema(schema, self.out / SCHEMA_NAME)
        save_truth(truth, self.out / TRUTH_NAME)

        for target in schema.targets:
            counts = pd.Series([r.targets[target.name] for r in records]).value_counts()
            logger.info(
                "Empirical marginal of %s: %s",
                target.name,
                ", ".join(f"{lab}={counts.get(lab, 0) / max(count, 1):.3f}" for lab in target.labels),
            )
        logger.info("Wrote %d users to %s", count, self.out / DATASET_NAME)

    def train(self) -> None:
        """Train the multi-task model; write checkpoint.json and train_log.{json,csv}."""
        splits, _ = self._splits()
        cfg = self.run.model_config(len(splits.schema.sequence_names))
        model = init_model(cfg, splits.schema, splits.vocab, splits.normalizer)
        model, log = train(model, splits.train, splits.val, self.run.train)
        save_checkpoint(model, self.out / CHECKPOINT_NAME)
        log.write(self.out / "train_log")

    def finetune(self, checkpoint: Path, target: str) -> None:
        """Write one pruned, fine-tuned checkpoint per requested target."""
        model = load_checkpoint(checkpoint)
        targets = list(model.heads) if target == "all" else [model.schema.target(target).name]
        missing = [t for t in targets if t not in model.heads]
        if missing:
            raise DataError(f"Checkpoint has no head for {missing}; valid targets: {model.heads}")
        splits, _ = self._splits(model)
        for name in targets:
            tuned, log = fine_tune(model, name, splits.train, splits.val, self.run.train)
            save_checkpoint(tuned, self.out / f"finetuned_{name}.json")
            log.write(self.out / f"finetune_log_{name}")

    def eval(self, checkpoint: Optional[Path], finetuned: Sequence[Path]) -> None:
        """Write report.{csv,json}; one report per seed when nothing is pre-trained."""
        model = load_checkpoint(checkpoint) if checkpoint else None
        tuned = {}
        for path in finetuned:
            single = load_checkpoint(path)
            if len(single.heads) != 1:
                raise CheckpointError(f"{path} is not a fine-tuned single-head checkpoint")
            tuned[single.heads[0]] = single
        if model is None and tuned:
            raise ConfigError("--finetuned needs the multi-task --checkpoint it was derived from")
        splits, truth = self._splits(model)

        if model is not None:
            report = compare_systems(splits, self.run, self.run.seed, truth, model, tuned)
            report.write(self.out / "report")
            return

        reports = []
        for seed in self.run.eval.seeds:
            report = compare_systems(splits, self.run, seed, truth)
            report.write(self.out / f"report_seed{seed}")
            reports.append(report)
        average_reports(reports).write(self.out / "report")

    def sweep(self, kind: str) -> None:
        """Write sweep_<parameter>.{csv,json} plus the per-value summary."""
        splits, _ = self._splits()
        if kind in ("embedding", "both"):
            sweep_embedding_size(splits, self.run).write(self.out / "sweep_embedding_size")
        if kind in ("depth", "both"):
            sweep_depth(splits, self.run).write(self.out / "sweep_depth")

    def embed(self, checkpoint: Path) -> None:
        """Write the deep representation of every user to representations.csv."""
        model = load_checkpoint(checkpoint)
        records, schema, _, _ = self._load_dataset()
        if model.schema != schema:
            raise DataError("Checkpoint schema does not match the dataset schema")
        dataset = EncodedDataset(records, model.vocab, schema, model.normalizer)
        chunks = [
            represent(model, dataset.batch(np.arange(start, min(start + EVAL_CHUNK, len(dataset)))))
            for start in range(0, len(dataset), EVAL_CHUNK)
        ]
        matrix = np.concatenate(chunks) if chunks else np.zeros((0, model.deep_width))
        frame = pd.DataFrame(matrix, columns=[f"dim_{i}" for i in range(matrix.shape[1])])
        frame.index.name = "user"
        self.out.mkdir(parents=True, exist_ok=True)
        frame.to_csv(self.out / "representations.csv")
        logger.info("Wrote %d x %d representations", *matrix.shape)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser; global flags work before or after the command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="YAML/JSON run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Master seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="Output directory")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="Parallel sweep workers")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="Logging level")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        default=argparse.SUPPRESS,
        help="Dotted config override, e.g. model.trunk_depth=2 (repeatable)",
    )

    parser = argparse.ArgumentParser(
        prog="user-embed",
        description="Multi-sequence user embeddings for multi-task demographic prediction",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--users", type=int, help="Number of users (overrides synth.n_users)")

    sub.add_parser("train", parents=[common], help="Train the multi-task model")

    p = sub.add_parser("finetune", parents=[common], help="Fine-tune single-target models")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--target", required=True, help="Target name or 'all'")

    p = sub.add_parser("eval", parents=[common], help="Compare all systems on the test split")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--finetuned", type=Path, nargs="+", default=[])

    p = sub.add_parser("sweep", parents=[common], help="Embedding-size and depth sweeps")
    p.add_argument("--kind", choices=("embedding", "depth", "both"), default="both")

    p = sub.add_parser("embed", parents=[common], help="Export user representations")
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then --config, then --set overrides, then dedicated flags."""
    try:
        config = load_config(getattr(args, "config", None))
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    for override in getattr(args, "overrides", []):
        apply_override(config, override)
    if hasattr(args, "seed"):
        config["seed"] = args.seed
    if hasattr(args, "out"):
        config["output_dir"] = str(args.out)
    if hasattr(args, "jobs"):
        config["eval"]["jobs"] = args.jobs
    if hasattr(args, "log_level"):
        config["log_level"] = args.log_level
    if getattr(args, "users", None) is not None:
        config["synth"]["n_users"] = args.users
    return resolve_config(config)


def run_command(args: argparse.Namespace) -> None:
    run = build_run_config(args)
    logging.getLogger().setLevel(run.log_level)
    save_effective_config(run)
    logger.info("Running '%s' with seed %d into %s", args.command, run.seed, run.output_dir)

    app = Application(run)
    if args.command == "synth":
        app.synth()
    elif args.command == "train":
        app.train()
    elif args.command == "finetune":
        app.finetune(args.checkpoint, args.target)
    elif args.command == "eval":
        app.eval(args.checkpoint, args.finetuned)
    elif args.command == "sweep":
        app.sweep(args.kind)
    elif args.command == "embed":
        app.embed(args.checkpoint)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    log_level = getattr(logging, str(getattr(args, "log_level", "INFO")).upper(), logging.INFO)

    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    try:
        run_command(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except NumericsError as e:
        logger.error("Numeric error: %s", e)
        return EXIT_NUMERICS
    except (DataError, CheckpointError, FileNotFoundError) as e:
        logger.error("Data error: %s", e)
        return EXIT_DATA
    except UserEmbedError as e:
        logger.error("Error: %s", e)
        return EXIT_FAILURE
    except Exception as e:  # pylint: disable=broad-except
        logger.exception("Unexpected failure: %s", e)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
