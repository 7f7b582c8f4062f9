"""Command line entry point: ``geocaps train | eval | embed``.

Exit codes: 0 success, 2 configuration error, 3 data error (including missing
or corrupt checkpoints), 4 numerical abort.  Failures print one line
``geocaps: error[<kind>]: <reason>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, load_run_config, model_digest, parse_run_config, to_jsonable
from .data import PairDataset, generate_synthetic_pairs, load_image_directory
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .model import build_model
from .retrieval import recall_curve
from .train import Adam, fit

logger = logging.getLogger("geocaps")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def load_dataset(config: RunConfig) -> PairDataset:
    data = config.data
    if data.synthetic is not None:
        return generate_synthetic_pairs(data.synthetic)
    return load_image_directory(data.directory, data.train_fraction)


def embed_all(model, images: np.ndarray, branch: str, batch: int = 64) -> np.ndarray:
    """Eval-mode descriptors for a whole image array, in fixed-size chunks."""
    out = [model.embed(images[i:i + batch], branch, "eval").data for i in range(0, len(images), batch)]
    return np.concatenate(out) if out else np.zeros((0, model.config.code_length), dtype=np.float32)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_ckpt(path) -> ckpt_io.Checkpoint:
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return ckpt_io.read_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    dataset = load_dataset(config)
    train_set, _ = dataset.split(config.data.train_fraction)
    model = build_model(config.model)
    digest = model_digest(config.model)
    optimizer = Adam(model.named_parameters(), config.train)
    start = 0
    if args.resume:
        previous = _read_ckpt(args.resume)
        ckpt_io.restore(model, previous, digest, optimizer)
        start = int(previous.meta.get("epochs_completed", 0))

    log_path = Path(config.output.loss_log or f"{args.out}.loss.csv")
    if not args.resume or not log_path.exists():
        _write_csv(log_path, ["epoch", "mean_loss", "batches"], [])

    def log_epoch(metrics):
        with open(log_path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [metrics.epoch, f"{metrics.mean_loss:.9g}", metrics.batches])

    fit(model, train_set, config.train, config.loss, optimizer, start_epoch=start, callback=log_epoch)
    meta = {"run_config": to_jsonable(config), "epochs_completed": max(start, config.train.epochs)}
    ckpt_io.write_checkpoint(args.out, ckpt_io.snapshot(model, digest, meta, optimizer))
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_run_config(args.config)
    ckpt = _read_ckpt(args.ckpt)
    model = build_model(config.model)
    ckpt_io.restore(model, ckpt, model_digest(config.model))
    _, test_set = load_dataset(config).split(config.data.train_fraction)
    ground = embed_all(model, test_set.ground, "ground")
    satellite = embed_all(model, test_set.satellite, "satellite")
    report = recall_curve(ground, satellite, config.eval.k_list, config.eval.percent_list)
    _write_csv(args.report, ["metric", "K_or_percent", "value"], report.rows())
    return EXIT_OK


def cmd_embed(args) -> int:
    if args.branch not in ("ground", "satellite"):
        raise ConfigError(f"invalid branch {args.branch!r}; use ground or satellite")
    ckpt = _read_ckpt(args.ckpt)
    stored = ckpt.meta.get("run_config")
    if stored is None:
        raise ConfigError("checkpoint carries no run configuration")
    config = parse_run_config(stored)
    model = build_model(config.model)
    ckpt_io.restore(model, ckpt, model_digest(config.model))
    if args.input == "synthetic":
        if config.data.synthetic is None:
            raise ConfigError("checkpoint was not trained on synthetic data; pass an image directory")
        dataset = generate_synthetic_pairs(config.data.synthetic)
    else:
        dataset = load_image_directory(args.input, config.data.train_fraction)
    if args.split != "all":
        train_set, test_set = dataset.split(config.data.train_fraction)
        dataset = train_set if args.split == "train" else test_set
    images = dataset.ground if args.branch == "ground" else dataset.satellite
    desc = embed_all(model, images, args.branch)
    labels = dataset.names if dataset.names is not None else [str(int(i)) for i in dataset.ids]
    rows = ([label] + [f"{x:.9g}" for x in vec] for label, vec in zip(labels, desc))
    _write_csv(args.out, ["id"] + [f"d{i}" for i in range(desc.shape[1])], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="geocaps", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--resume", help="checkpoint to continue from (parameters and optimizer state)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recall report on the held-out split")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True, help="CSV output: metric,K_or_percent,value")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export descriptors as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="image directory, or 'synthetic' for the training data spec")
    p.add_argument("--branch", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.set_defaults(func=cmd_embed)
    return parser


def _fail(kind: str, code: int, exc: BaseException) -> int:
    reason = " ".join(str(exc).split())
    print(f"geocaps: error[{kind}]: {reason}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    threads = os.environ.get("GEOCAPS_THREADS", "1")
    try:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=max(1, int(threads)))
    except ValueError:
        return _fail("config", EXIT_CONFIG, ValueError(f"GEOCAPS_THREADS must be an integer, got {threads!r}"))
    try:
        with limiter:
            return args.func(args)
    except ConfigError as exc:  # includes checkpoint digest mismatch
        return _fail("config", EXIT_CONFIG, exc)
    except (DataError, CheckpointError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except NumericalError as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())
