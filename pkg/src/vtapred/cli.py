"""Command line for the pipeline: feature export, training, the ablation grid.

Configuration lives in a flat ``key = value`` text file; every key has a
matching command-line flag, and flags win over the file, which wins over the
defaults.  All randomness flows from ``--seed`` (or the seed list of the
ablation grid), so identical invocations produce byte-identical outputs.

Exit codes: 0 success, 1 data or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, load_dataset, prepare_records
from .evaluation import (
    CVConfig,
    DROPOUT_STREAM,
    INIT_STREAM,
    EvaluationError,
    build_examples,
    decade_vocabulary,
    format_report_table,
    run_ablation,
    write_per_seed_csv,
    write_predictions_csv,
    write_report_csv,
)
from .features import (
    FeatureConfig,
    FeatureError,
    extract,
    fit_standardizer,
    write_feature_matrix,
)
from .network import CheckpointError, NetworkConfig, init_params, save_checkpoint
from .optim import TrainConfig, TrainingError, train, write_loss_history

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Unusable configuration file or flag combination."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); this one table drives the config file, the
# mirrored command-line flags, and the manifest echo.
SETTINGS: dict[str, tuple] = {
    "feature_set": (str, FeatureConfig().feature_set),
    "include_windowed": (_parse_bool, True),
    "recent_beats": (int, 30),
    "window_beats": (int, 250),
    "ectopic_threshold": (float, 0.2),
    "ectopic_ref_beats": (int, 5),
    "lf_lo": (float, 0.04),
    "lf_hi": (float, 0.15),
    "hf_lo": (float, 0.15),
    "hf_hi": (float, 0.40),
    "use_embedding": (_parse_bool, True),
    "epochs": (int, 1000),
    "clip": (float, 0.1),
    "clip_mode": (str, "element"),
    "keep_prob": (float, 0.75),
    "lr": (float, 1.0),
    "rho": (float, 0.95),
    "eps": (float, 1e-6),
    "lam_nyhac": (float, 1.0),
    "lam_bmi": (float, 1.0),
    "horizon_ms": (float, 60000.0),
    "min_beats": (int, 250),
    "truncate_controls": (_parse_bool, True),
    "k_folds": (int, 10),
    "threshold": (float, 0.5),
    "patient_grouped": (_parse_bool, False),
    "seed": (int, 0),
    "seeds": (int, 10),
    "jobs": (int, 1),
}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}, line {lineno}: expected 'key = value'")
            key, _, raw = text.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in SETTINGS:
                raise ConfigError(f"{path}, line {lineno}: unknown key {key!r}")
            parser = SETTINGS[key][0]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}, line {lineno}: bad value for {key!r}: {exc}") from None
    return values


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge flag > config file > default into one settings dict."""
    from_file = parse_config_file(args.config) if args.config else {}
    settings = {}
    for key, (_, default) in SETTINGS.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
        elif key in from_file:
            settings[key] = from_file[key]
        else:
            settings[key] = default
    if getattr(args, "single_task", False):
        settings["lam_nyhac"] = 0.0
        settings["lam_bmi"] = 0.0
    return settings


def build_configs(settings: dict) -> CVConfig:
    try:
        features = FeatureConfig(
            feature_set=settings["feature_set"],
            include_windowed=settings["include_windowed"],
            recent_beats=settings["recent_beats"],
            window_beats=settings["window_beats"],
            lf_band=(settings["lf_lo"], settings["lf_hi"]),
            hf_band=(settings["hf_lo"], settings["hf_hi"]),
            ectopic_threshold=settings["ectopic_threshold"],
            ectopic_ref_beats=settings["ectopic_ref_beats"],
        )
        train_config = TrainConfig(
            epochs=settings["epochs"],
            clip=settings["clip"],
            clip_mode=settings["clip_mode"],
            keep_prob=settings["keep_prob"],
            lr=settings["lr"],
            rho=settings["rho"],
            eps=settings["eps"],
            lam_nyhac=settings["lam_nyhac"],
            lam_bmi=settings["lam_bmi"],
        )
        return CVConfig(
            features=features,
            train=train_config,
            use_embedding=settings["use_embedding"],
            k_folds=settings["k_folds"],
            threshold=settings["threshold"],
            patient_grouped=settings["patient_grouped"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_prepared(args: argparse.Namespace, settings: dict):
    records, patients = load_dataset(args.data_dir, args.metadata)
    prepared = prepare_records(
        records,
        horizon_ms=settings["horizon_ms"],
        min_beats=settings["min_beats"],
        truncate_controls=settings["truncate_controls"],
    )
    if not prepared:
        raise DatasetError("no usable records after the decision boundary")
    return prepared, patients


def dataset_checksum(tachogram_dir, metadata_file) -> str:
    """SHA-256 over the metadata and every tachogram file, in sorted order."""
    digest = hashlib.sha256()
    digest.update(Path(metadata_file).read_bytes())
    files = sorted(
        (p for p in Path(tachogram_dir).iterdir() if p.is_file() and not p.name.startswith(".")),
        key=lambda p: p.stem,
    )
    for path in files:
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def write_manifest(path, args, settings: dict, cv: CVConfig, seed_list, n_records: int) -> None:
    manifest = {
        "tool": "vtapred",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "dataset": {
            "tachograms": str(args.data_dir),
            "metadata": str(args.metadata),
            "checksum_sha256": dataset_checksum(args.data_dir, args.metadata),
            "records_used": n_records,
        },
        "seeds": list(seed_list),
        "settings": settings,
        "feature_config": asdict(cv.features),
        "train_config": asdict(cv.train),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_features(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    cv = build_configs(settings)
    records, _ = _load_prepared(args, settings)
    vectors = [extract(rec, cv.features) for rec in records]
    write_feature_matrix(args.out, records, vectors)
    log.info("wrote %d feature rows to %s", len(records), args.out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    cv = build_configs(settings)
    records, patients = _load_prepared(args, settings)
    seed = settings["seed"]

    vectors = {rec.record_id: extract(rec, cv.features) for rec in records}
    standardizer = fit_standardizer(list(vectors.values()))
    bmis = [patients[r.patient_id].bmi for r in records if patients[r.patient_id].bmi is not None]
    bmi_standardizer = fit_standardizer(np.array(bmis)) if bmis else None
    vocab = decade_vocabulary(patients)
    vocab_index = {decade: i for i, decade in enumerate(vocab)}
    examples = build_examples(records, vectors, patients, standardizer, bmi_standardizer, vocab_index)

    net_config = NetworkConfig(
        num_features=vectors[records[0].record_id].values.size,
        num_decades=max(len(vocab), 1),
        use_embedding=cv.use_embedding,
    )
    params = init_params(net_config, np.random.default_rng([seed, INIT_STREAM, 0]))
    params, history = train(examples, cv.train, params,
                            np.random.default_rng([seed, DROPOUT_STREAM, 0]))
    save_checkpoint(args.out, params, extra={"settings": settings, "seed": seed})
    loss_path = f"{args.out}.loss.csv"
    write_loss_history(loss_path, history)
    log.info("trained on %d records; checkpoint %s, losses %s", len(records), args.out, loss_path)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    cv = build_configs(settings)
    records, patients = _load_prepared(args, settings)
    seed_list = list(range(settings["seeds"]))

    report = run_ablation(records, patients, cv, seeds=seed_list, jobs=settings["jobs"])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(out_dir / "report.csv", report)
    table = format_report_table(report)
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    write_per_seed_csv(out_dir / "per_seed.csv", report)
    predictions_dir = out_dir / "predictions"
    predictions_dir.mkdir(exist_ok=True)
    for (row, seed), preds in report.predictions.items():
        write_predictions_csv(predictions_dir / f"{row}_seed{seed}.csv", preds)
    write_manifest(out_dir / "manifest.json", args, settings, cv, seed_list, len(records))
    sys.stdout.write(table)
    return 0


def _add_common_arguments(sub: argparse.ArgumentParser, io_out: str) -> None:
    sub.add_argument("--data-dir", required=True, help="directory of tachogram text files")
    sub.add_argument("--metadata", required=True, help="metadata CSV path")
    sub.add_argument("--config", help="flat key=value configuration file")
    sub.add_argument("--out", required=True, help=io_out)
    sub.add_argument("--single-task", action="store_true",
                     help="disable the auxiliary training targets (sets both weights to 0)")
    # Mirror every config key as a flag; bools get --key/--no-key pairs.
    for key, (parser, default) in SETTINGS.items():
        flag = "--" + key.replace("_", "-")
        if parser is _parse_bool:
            sub.add_argument(flag, action=argparse.BooleanOptionalAction, default=None,
                             help=f"(default {default})")
        else:
            sub.add_argument(flag, type=parser, default=None, metavar=key.upper(),
                             help=f"(default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtapred",
        description="Early-warning prediction of ventricular tachyarrhythmia "
                    "from RR-interval tachograms.",
    )
    parser.add_argument("--version", action="version", version=f"vtapred {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p_feat = subparsers.add_parser(
        "features", help="extract the configured feature matrix to CSV")
    _add_common_arguments(p_feat, "output CSV path")
    p_feat.set_defaults(func=cmd_features)

    p_train = subparsers.add_parser(
        "train", help="train one model on all usable records")
    _add_common_arguments(p_train, "output checkpoint path")
    p_train.set_defaults(func=cmd_train)

    p_ablate = subparsers.add_parser(
        "ablate", help="run the staged configuration grid with cross-validation")
    _add_common_arguments(p_ablate, "output directory for reports")
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version, 2 for usage errors; usage
        # problems are configuration errors here.
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (DatasetError, FeatureError, ConfigError, CheckpointError, EvaluationError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
