"""Stratified cross-validation, ranking metrics, and the staged ablation grid.

The grid retrains the model from scratch for every (configuration row, seed,
fold) combination, pools the held-out predictions per run, and averages the
resulting metrics over seeds.  All randomness is derived from the run seed
through fixed stream labels, so a (seed, data, config) triple pins every
number bit-for-bit, no matter how many worker processes are used.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .dataset import LABEL_CONTROL, LABEL_VTA, PatientMeta, RRRecord
from .features import (
    FEATURE_SET_BASELINE11,
    FEATURE_SET_RECENT,
    FeatureConfig,
    FeatureVector,
    extract,
    fit_standardizer,
    standardize,
)
from .network import Example, NetworkConfig, init_params, predict
from .optim import TrainConfig, TrainingError, train

# Stream labels mixed into the seed so each consumer of randomness gets an
# independent, reproducible generator.
FOLD_STREAM = 11
INIT_STREAM = 23
DROPOUT_STREAM = 37

ROW_BASELINE = "baseline"
ROW_WINDOWED = "windowed"
ROW_EMBEDDING = "age_embedding"
ROW_MULTI_TASK = "multi_task"
ABLATION_ROWS = (ROW_BASELINE, ROW_WINDOWED, ROW_EMBEDDING, ROW_MULTI_TASK)
ROW_LABELS = {
    ROW_BASELINE: "Baseline",
    ROW_WINDOWED: "+ windowed features",
    ROW_EMBEDDING: "+ age embedding",
    ROW_MULTI_TASK: "+ multi-task optimization",
}
METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "auc")


class EvaluationError(Exception):
    """Invalid evaluation setup (bad folds, single-class inputs, ...)."""


@dataclass(frozen=True)
class CVConfig:
    """Everything one cross-validated evaluation needs besides the data."""

    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    use_embedding: bool = True
    k_folds: int = 10
    threshold: float = 0.5
    patient_grouped: bool = False


@dataclass(eq=False)
class Predictions:
    """Pooled held-out predictions, in input record order."""

    record_ids: list[str]
    labels: np.ndarray  # 1 = event class, 0 = control
    probs: np.ndarray   # predicted event probability


def make_folds(labels, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Stratified fold assignment: shuffle within each class, deal round-robin.

    Returns k sorted index arrays that partition range(len(labels)).  Per
    class, fold sizes differ by at most one.  Fewer than two folds, or a
    class with fewer records than folds, is an error.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise EvaluationError("cross-validation needs at least 2 folds")
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise EvaluationError(
                f"class {cls!r} has {idx.size} records but {k} folds were requested"
            )
        rng.shuffle(idx)
        for j in range(k):
            folds[j].extend(idx[j::k].tolist())
    return [np.array(sorted(f), dtype=int) for f in folds]


def make_patient_folds(patient_ids, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Grouped folds: all records of a patient land in one fold.

    Patients are shuffled and greedily assigned to the currently smallest
    fold (by record count), which balances sizes but not class ratios; meant
    for leakage studies rather than the default protocol.
    """
    if k < 2:
        raise EvaluationError("cross-validation needs at least 2 folds")
    patient_ids = list(patient_ids)
    by_patient: dict[str, list[int]] = {}
    for i, pid in enumerate(patient_ids):
        by_patient.setdefault(pid, []).append(i)
    if len(by_patient) < k:
        raise EvaluationError(f"{len(by_patient)} patients cannot fill {k} folds")
    order = sorted(by_patient)
    rng.shuffle(order)
    folds: list[list[int]] = [[] for _ in range(k)]
    for pid in order:
        smallest = min(range(k), key=lambda j: (len(folds[j]), j))
        folds[smallest].extend(by_patient[pid])
    return [np.array(sorted(f), dtype=int) for f in folds]


def metrics(labels, probs, threshold: float = 0.5) -> dict[str, float]:
    """Confusion-matrix metrics at a probability threshold (ties positive).

    Returns accuracy, sensitivity, specificity and precision along with the
    raw counts.  When nothing is predicted positive, precision is 0 and the
    ``no_positive_predictions`` flag is set instead of dividing by zero.
    """
    labels = np.asarray(labels, dtype=int)
    probs = np.asarray(probs, dtype=float)
    pred = probs >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    tn = int(np.sum(~pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    total = tp + fp + tn + fn
    no_positive = (tp + fp) == 0
    return {
        "accuracy": (tp + tn) / total if total else 0.0,
        "sensitivity": tp / (tp + fn) if (tp + fn) else 0.0,
        "specificity": tn / (tn + fp) if (tn + fp) else 0.0,
        "precision": 0.0 if no_positive else tp / (tp + fp),
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
        "no_positive_predictions": no_positive,
    }


def auc(labels, probs) -> float:
    """Rank-based AUC with ties counted half, equal to the trapezoidal ROC area."""
    labels = np.asarray(labels, dtype=int)
    probs = np.asarray(probs, dtype=float)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs at least one record of each class")
    ranks = rankdata(probs, method="average")
    u = float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def decade_vocabulary(patients: dict[str, PatientMeta]) -> list[int]:
    """Sorted known birth decades; the embedding reserves one extra unknown row."""
    return sorted({p.birth_decade for p in patients.values() if p.birth_decade is not None})


def _decade_index(meta: PatientMeta, vocab_index: dict[int, int]) -> int:
    if meta.birth_decade is None:
        return len(vocab_index)
    return vocab_index.get(meta.birth_decade, len(vocab_index))


def build_examples(
    records: list[RRRecord],
    vectors: dict[str, FeatureVector],
    patients: dict[str, PatientMeta],
    standardizer,
    bmi_standardizer,
    vocab_index: dict[int, int],
) -> list[Example]:
    examples = []
    for rec in records:
        meta = patients[rec.patient_id]
        y_bmi = None
        if bmi_standardizer is not None and meta.bmi is not None:
            y_bmi = float(standardize(bmi_standardizer, np.array([meta.bmi]))[0])
        examples.append(Example(
            features=standardize(standardizer, vectors[rec.record_id]),
            decade_index=_decade_index(meta, vocab_index),
            y_vta=1 if rec.label == LABEL_VTA else 0,
            y_nyhac=None if meta.nyhac is None else meta.nyhac - 1,
            y_bmi=y_bmi,
        ))
    return examples


def run_cv(
    records: list[RRRecord],
    patients: dict[str, PatientMeta],
    config: CVConfig,
    seed: int,
    vectors: dict[str, FeatureVector] | None = None,
) -> Predictions:
    """One cross-validated evaluation: returns pooled held-out predictions.

    Per fold, the standardizers (features and the BMI target) are fitted on
    the training folds only, a fresh network is initialized and trained, and
    the held-out records are scored.  ``vectors`` may carry precomputed
    features to avoid re-extraction across seeds; when omitted they are
    extracted here.
    """
    if not records:
        raise EvaluationError("no records to evaluate")
    if vectors is None:
        vectors = {rec.record_id: extract(rec, config.features) for rec in records}

    labels = np.array([1 if rec.label == LABEL_VTA else 0 for rec in records], dtype=int)
    fold_rng = np.random.default_rng([seed, FOLD_STREAM])
    if config.patient_grouped:
        folds = make_patient_folds([rec.patient_id for rec in records], config.k_folds, fold_rng)
    else:
        folds = make_folds([rec.label for rec in records], config.k_folds, fold_rng)

    vocab = decade_vocabulary(patients)
    vocab_index = {decade: i for i, decade in enumerate(vocab)}
    num_features = vectors[records[0].record_id].values.size
    net_config = NetworkConfig(
        num_features=num_features,
        num_decades=max(len(vocab), 1),
        use_embedding=config.use_embedding,
    )

    probs = np.full(len(records), np.nan)
    for fold_i, test_idx in enumerate(folds):
        test_set = set(test_idx.tolist())
        train_records = [rec for i, rec in enumerate(records) if i not in test_set]
        test_records = [records[i] for i in test_idx]

        standardizer = fit_standardizer([vectors[rec.record_id] for rec in train_records])
        train_bmis = [
            patients[rec.patient_id].bmi
            for rec in train_records
            if patients[rec.patient_id].bmi is not None
        ]
        bmi_standardizer = fit_standardizer(np.array(train_bmis)) if train_bmis else None

        train_examples = build_examples(
            train_records, vectors, patients, standardizer, bmi_standardizer, vocab_index)
        test_examples = build_examples(
            test_records, vectors, patients, standardizer, bmi_standardizer, vocab_index)

        params = init_params(net_config, np.random.default_rng([seed, INIT_STREAM, fold_i]))
        try:
            train(train_examples, config.train, params,
                  np.random.default_rng([seed, DROPOUT_STREAM, fold_i]))
        except TrainingError as exc:
            raise TrainingError(f"fold {fold_i}: {exc}") from None
        probs[test_idx] = predict(params, test_examples)

    return Predictions([rec.record_id for rec in records], labels, probs)


def ablation_config(row: str, base: CVConfig) -> CVConfig:
    """Resolve one grid row into a concrete configuration.

    Rows build on each other: the reference panel first, then the recent-beat
    features plus windowed trends, then the age embedding, and finally the
    auxiliary training targets (whose weights come from ``base.train``).
    """
    if row not in ABLATION_ROWS:
        raise EvaluationError(f"unknown ablation row {row!r}")
    single = {"lam_nyhac": 0.0, "lam_bmi": 0.0}
    if row == ROW_BASELINE:
        features = replace(base.features, feature_set=FEATURE_SET_BASELINE11, include_windowed=False)
        return replace(base, features=features, use_embedding=False,
                       train=replace(base.train, **single))
    features = replace(base.features, feature_set=FEATURE_SET_RECENT, include_windowed=True)
    if row == ROW_WINDOWED:
        return replace(base, features=features, use_embedding=False,
                       train=replace(base.train, **single))
    if row == ROW_EMBEDDING:
        return replace(base, features=features, use_embedding=True,
                       train=replace(base.train, **single))
    return replace(base, features=features, use_embedding=True)


@dataclass(eq=False)
class EvalReport:
    rows: tuple[str, ...]
    seeds: tuple[int, ...]
    per_seed: dict[str, dict[int, dict[str, float]]]
    means: dict[str, dict[str, float]]
    predictions: dict[tuple[str, int], Predictions]


def _run_item(payload):
    row, seed, records, patients, config, vectors = payload
    preds = run_cv(records, patients, config, seed, vectors=vectors)
    return row, seed, preds


def run_ablation(
    records: list[RRRecord],
    patients: dict[str, PatientMeta],
    base: CVConfig,
    seeds=10,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate every grid row over the given seeds.

    ``seeds`` is either a count (meaning range(count)) or an explicit list.
    Feature vectors are extracted once per distinct feature configuration and
    shared across seeds and workers.  With ``jobs > 1`` the (row, seed) items
    run in a process pool; results are merged in fixed order, so the output
    is identical to a serial run.
    """
    seed_list = tuple(range(seeds)) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
    if not seed_list:
        raise EvaluationError("need at least one seed")
    configs = {row: ablation_config(row, base) for row in ABLATION_ROWS}

    vectors_by_features: dict[FeatureConfig, dict[str, FeatureVector]] = {}
    for row, config in configs.items():
        if config.features not in vectors_by_features:
            vectors_by_features[config.features] = {
                rec.record_id: extract(rec, config.features) for rec in records
            }

    items = [
        (row, seed, records, patients, configs[row], vectors_by_features[configs[row].features])
        for row in ABLATION_ROWS
        for seed in seed_list
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_item, items))
    else:
        results = [_run_item(item) for item in items]

    predictions = {(row, seed): preds for row, seed, preds in results}
    per_seed: dict[str, dict[int, dict[str, float]]] = {}
    means: dict[str, dict[str, float]] = {}
    for row in ABLATION_ROWS:
        per_seed[row] = {}
        for seed in seed_list:
            preds = predictions[(row, seed)]
            stats = metrics(preds.labels, preds.probs, base.threshold)
            stats["auc"] = auc(preds.labels, preds.probs)
            per_seed[row][seed] = stats
        means[row] = {
            name: float(np.mean([per_seed[row][s][name] for s in seed_list]))
            for name in METRIC_NAMES
        }
    return EvalReport(ABLATION_ROWS, seed_list, per_seed, means, predictions)


def format_report_table(report: EvalReport) -> str:
    """Aligned text table of seed-averaged metrics, as percentages."""
    header = ("Configuration", "Accuracy", "Sensitivity", "Specificity", "Precision", "AUC")
    lines = [f"{header[0]:<28}" + "".join(f"{h:>13}" for h in header[1:])]
    for row in report.rows:
        cells = "".join(f"{100.0 * report.means[row][m]:>13.2f}" for m in METRIC_NAMES)
        lines.append(f"{ROW_LABELS[row]:<28}" + cells)
    return "\n".join(lines) + "\n"


def write_report_csv(path, report: EvalReport) -> None:
    """Seed-averaged metrics as CSV percentages with two decimals."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("configuration," + ",".join(METRIC_NAMES) + "\n")
        for row in report.rows:
            cells = ",".join(f"{100.0 * report.means[row][m]:.2f}" for m in METRIC_NAMES)
            fh.write(f"{ROW_LABELS[row]},{cells}\n")


def write_per_seed_csv(path, report: EvalReport) -> None:
    """Raw (unaveraged, unscaled) per-seed metrics as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("configuration,seed," + ",".join(METRIC_NAMES) + "\n")
        for row in report.rows:
            for seed in report.seeds:
                stats = report.per_seed[row][seed]
                cells = ",".join(f"{stats[m]:.17g}" for m in METRIC_NAMES)
                fh.write(f"{ROW_LABELS[row]},{seed},{cells}\n")


def write_predictions_csv(path, predictions: Predictions) -> None:
    """Pooled per-record predictions: record_id,label,probability."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("record_id,label,probability\n")
        for rid, label, prob in zip(predictions.record_ids, predictions.labels, predictions.probs):
            name = LABEL_VTA if label == 1 else LABEL_CONTROL
            fh.write(f"{rid},{name},{prob:.17g}\n")
