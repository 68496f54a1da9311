"""Synthetic benchmark data.

Two generators:

* :func:`gaussian_task` builds a cleanly separable two-class feature task
  (class means at +1 and -1 in every dimension) with auxiliary targets that
  correlate with the class.  It bypasses feature extraction by returning
  ready-made feature vectors, so it isolates the model and trainer.
* :func:`write_tachogram_dataset` writes a fake tachogram directory plus
  metadata CSV to disk so the full ingest -> features -> training pipeline
  can be exercised end to end without patient data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import LABEL_CONTROL, LABEL_VTA, PatientMeta, RRRecord
from .features import FeatureVector


def gaussian_task(
    n: int = 200,
    num_features: int = 7,
    sigma: float = 0.3,
    seed: int = 0,
) -> tuple[list[RRRecord], dict[str, PatientMeta], dict[str, FeatureVector]]:
    """Two well-separated Gaussian classes with class-correlated auxiliaries.

    Event-class examples sit at +1 in every feature, controls at -1, with
    noise ``sigma``; any competent trainer should reach near-perfect accuracy.
    Records alternate classes and carry short constant tachograms that exist
    only to satisfy the record type; use the returned vectors directly.

    Returns (records, patients, vectors-by-record-id).
    """
    rng = np.random.default_rng(seed)
    records: list[RRRecord] = []
    patients: dict[str, PatientMeta] = {}
    vectors: dict[str, FeatureVector] = {}
    names = tuple(f"x{j}" for j in range(num_features))
    placeholder = np.full(16, 800.0)
    for i in range(n):
        is_event = i % 2 == 0
        rid = f"s{i:03d}"
        pid = f"p{i:03d}"
        center = 1.0 if is_event else -1.0
        values = center + sigma * rng.standard_normal(num_features)

        nyhac = None
        if rng.random() < 0.85:
            nyhac = int(rng.choice([3, 4] if is_event else [1, 2]))
        bmi = None
        if rng.random() < 0.9:
            bmi = float(np.clip(26.0 + (2.5 if is_event else -2.5) + rng.normal(0, 1.2), 12, 60))
        patients[pid] = PatientMeta(pid, 1930 + 10 * (i % 6), nyhac, bmi)
        records.append(RRRecord(rid, placeholder, LABEL_VTA if is_event else LABEL_CONTROL, pid))
        vectors[rid] = FeatureVector(rid, names, values)
    return records, patients, vectors


def _control_intervals(n_beats: int, rng: np.random.Generator) -> np.ndarray:
    """Stable rhythm: slow sinusoidal modulation, sparse ectopy."""
    out = np.empty(n_beats)
    t = 0.0
    compensate = False
    for i in range(n_beats):
        base = 850.0
        rr = base + 60.0 * np.sin(2 * np.pi * 0.095 * t) + rng.normal(0.0, 14.0)
        if compensate:
            rr = base * 1.3
            compensate = False
        elif rng.random() < 0.02:
            rr = base * 0.55
            compensate = True
        out[i] = min(max(rr, 200.0), 2500.0)
        t += out[i] / 1000.0
    return out


def _event_intervals(n_beats: int, rng: np.random.Generator) -> np.ndarray:
    """Deteriorating rhythm: accelerating baseline and ectopy ramping up."""
    out = np.empty(n_beats)
    t = 0.0
    compensate = False
    for i in range(n_beats):
        frac = i / max(n_beats - 1, 1)
        base = 820.0 - 170.0 * frac
        rr = base + 35.0 * np.sin(2 * np.pi * 0.11 * t) + rng.normal(0.0, 12.0)
        ectopic_p = 0.02 + (0.10 * max(0.0, frac - 0.6) / 0.4)
        if compensate:
            rr = base * 1.3
            compensate = False
        elif rng.random() < ectopic_p:
            rr = base * 0.55
            compensate = True
        out[i] = min(max(rr, 200.0), 2500.0)
        t += out[i] / 1000.0
    return out


def write_tachogram_dataset(
    out_dir,
    n_event: int = 12,
    n_control: int = 12,
    n_beats: int = 420,
    seed: int = 0,
    records_per_patient: int = 1,
) -> tuple[Path, Path]:
    """Write a synthetic dataset to disk; returns (tachogram dir, metadata path).

    Event records accelerate and accumulate ectopic beats toward the end;
    controls stay stable, so the extracted features carry real signal.  A few
    metadata cells are left blank to exercise the unknown-value paths.
    """
    out_dir = Path(out_dir)
    tacho_dir = out_dir / "tachograms"
    tacho_dir.mkdir(parents=True, exist_ok=True)
    metadata_path = out_dir / "metadata.csv"
    rng = np.random.default_rng(seed)

    rows = []
    total = n_event + n_control
    for i in range(total):
        is_event = i < n_event
        rid = f"r{i:03d}"
        pid = f"pat{i // max(records_per_patient, 1):03d}"
        intervals = (_event_intervals if is_event else _control_intervals)(n_beats, rng)
        with open(tacho_dir / f"{rid}.txt", "w", encoding="utf-8") as fh:
            fh.writelines(f"{v:.1f}\n" for v in intervals)
        birth_year = "" if rng.random() < 0.1 else str(int(rng.integers(1925, 1985)))
        nyhac = "" if rng.random() < 0.2 else str(int(rng.integers(1, 5)))
        bmi = "" if rng.random() < 0.15 else f"{rng.uniform(19, 38):.1f}"
        rows.append([rid, pid, LABEL_VTA if is_event else LABEL_CONTROL, birth_year, nyhac, bmi])

    # Patients sharing records must share metadata; keep the first row's values.
    seen: dict[str, list[str]] = {}
    for row in rows:
        pid = row[1]
        if pid in seen:
            row[3:] = seen[pid]
        else:
            seen[pid] = row[3:]

    with open(metadata_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "patient_id", "label", "birth_year", "nyhac", "bmi"])
        writer.writerows(rows)
    return tacho_dir, metadata_path
