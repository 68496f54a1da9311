"""Tachogram ingestion, patient metadata, and the pre-event decision boundary.

A dataset is a directory of plain-text tachogram files (one RR interval in
milliseconds per line; the file stem is the record id) plus a metadata CSV
with the header ``record_id,patient_id,label,birth_year,nyhac,bmi``.  Empty
metadata cells mean "unknown".  Records of the event class end at the onset
of the arrhythmia, so dropping the final minute of signal leaves exactly the
data an early-warning model is allowed to see.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

LABEL_VTA = "VTA"
LABEL_CONTROL = "Control"
LABELS = (LABEL_VTA, LABEL_CONTROL)

METADATA_COLUMNS = ("record_id", "patient_id", "label", "birth_year", "nyhac", "bmi")

MAX_INTERVAL_MS = 5000.0
DEFAULT_HORIZON_MS = 60000.0
DEFAULT_MIN_BEATS = 250

BMI_RANGE = (10.0, 100.0)
NYHAC_CLASSES = (1, 2, 3, 4)


class DatasetError(Exception):
    """Malformed tachogram or metadata input."""


class UnusableRecordError(DatasetError):
    """Record left without usable signal once the decision boundary is applied."""


def round_to_decade(year: int) -> int:
    """Round a calendar year to the nearest decade, ties upward (1945 -> 1950)."""
    return int(math.floor(year / 10.0 + 0.5)) * 10


@dataclass(frozen=True, eq=False)
class PatientMeta:
    """Per-patient metadata; every field except the id may be unknown (None)."""

    patient_id: str
    birth_decade: int | None = None  # birth year rounded to a decade
    nyhac: int | None = None         # heart-failure functional class, 1..4
    bmi: float | None = None         # kg/m^2


@dataclass(frozen=True, eq=False)
class RRRecord:
    """One tachogram: consecutive RR intervals in milliseconds plus its label.

    ``truncated_ms`` tracks how much signal the decision boundary has already
    removed from the end, which is what makes repeated boundary application a
    no-op instead of eating another horizon's worth of beats.
    """

    record_id: str
    intervals_ms: np.ndarray
    label: str
    patient_id: str
    truncated_ms: float = 0.0

    def __post_init__(self):
        arr = np.array(self.intervals_ms, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DatasetError(
                f"record {self.record_id!r}: intervals must be a non-empty 1-D sequence"
            )
        if not np.all(np.isfinite(arr)) or not np.all((arr > 0.0) & (arr < MAX_INTERVAL_MS)):
            raise DatasetError(
                f"record {self.record_id!r}: intervals must lie in (0, {MAX_INTERVAL_MS:g}) ms"
            )
        if self.label not in LABELS:
            raise DatasetError(f"record {self.record_id!r}: unknown label {self.label!r}")
        arr.flags.writeable = False  # records are shared read-only across workers
        object.__setattr__(self, "intervals_ms", arr)

    def __len__(self) -> int:
        return int(self.intervals_ms.size)


def apply_decision_boundary(record: RRRecord, horizon_ms: float = DEFAULT_HORIZON_MS) -> RRRecord:
    """Drop the minimal suffix whose cumulative duration reaches the horizon.

    The removed suffix is the smallest one summing to >= ``horizon_ms``, so
    every remaining beat ends strictly more than one horizon before the event
    (or recording end).  A non-positive horizon, or a record that was already
    truncated at least this far, is returned unchanged.

    Raises UnusableRecordError if nothing would remain.
    """
    needed = horizon_ms - record.truncated_ms
    if needed <= 0:
        return record
    tail_sums = np.cumsum(record.intervals_ms[::-1])
    cut = int(np.searchsorted(tail_sums, needed, side="left")) + 1
    if cut >= len(record):
        raise UnusableRecordError(
            f"record {record.record_id!r}: boundary of {horizon_ms:g} ms leaves no signal"
        )
    removed = float(tail_sums[cut - 1])
    return RRRecord(
        record.record_id,
        record.intervals_ms[: len(record) - cut],
        record.label,
        record.patient_id,
        truncated_ms=record.truncated_ms + removed,
    )


def prepare_records(
    records: list[RRRecord],
    horizon_ms: float = DEFAULT_HORIZON_MS,
    min_beats: int = DEFAULT_MIN_BEATS,
    truncate_controls: bool = True,
) -> list[RRRecord]:
    """Apply the decision boundary to each record and drop the unusable ones.

    Controls are truncated identically by default so both classes lose a
    comparable amount of signal.  Records left with fewer than ``min_beats``
    intervals (or with nothing at all before the boundary) are excluded with
    a logged warning rather than failing the whole run.
    """
    kept = []
    for rec in records:
        if rec.label == LABEL_CONTROL and not truncate_controls:
            out = rec
        else:
            try:
                out = apply_decision_boundary(rec, horizon_ms)
            except UnusableRecordError as exc:
                log.warning("excluding unusable record: %s", exc)
                continue
        if len(out) < min_beats:
            log.warning(
                "excluding record %r: %d beats remain before the boundary (need %d)",
                rec.record_id, len(out), min_beats,
            )
            continue
        kept.append(out)
    return kept


def _read_tachogram(path: Path) -> np.ndarray:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = float(text)
            except ValueError:
                raise DatasetError(f"{path}, line {lineno}: not a number: {text!r}") from None
            if not math.isfinite(value) or not (0.0 < value < MAX_INTERVAL_MS):
                raise DatasetError(
                    f"{path}, line {lineno}: interval {text!r} outside (0, {MAX_INTERVAL_MS:g}) ms"
                )
            values.append(value)
    if not values:
        raise DatasetError(f"{path}: empty tachogram")
    return np.asarray(values, dtype=float)


def _parse_metadata_row(row: list[str], lineno: int, path: Path) -> dict:
    if len(row) != len(METADATA_COLUMNS):
        raise DatasetError(
            f"{path}, line {lineno}: expected {len(METADATA_COLUMNS)} columns, got {len(row)}"
        )
    record_id, patient_id, label, birth_year, nyhac, bmi = (cell.strip() for cell in row)
    if not record_id or not patient_id:
        raise DatasetError(f"{path}, line {lineno}: record_id and patient_id are required")
    if label not in LABELS:
        raise DatasetError(f"{path}, line {lineno}: label must be one of {LABELS}, got {label!r}")

    decade = None
    if birth_year:
        try:
            decade = round_to_decade(int(birth_year))
        except ValueError:
            raise DatasetError(f"{path}, line {lineno}: bad birth_year {birth_year!r}") from None

    nyhac_val = None
    if nyhac:
        try:
            nyhac_val = int(nyhac)
        except ValueError:
            raise DatasetError(f"{path}, line {lineno}: bad nyhac {nyhac!r}") from None
        if nyhac_val not in NYHAC_CLASSES:
            raise DatasetError(f"{path}, line {lineno}: nyhac must be in {NYHAC_CLASSES}")

    bmi_val = None
    if bmi:
        try:
            bmi_val = float(bmi)
        except ValueError:
            raise DatasetError(f"{path}, line {lineno}: bad bmi {bmi!r}") from None
        if not (BMI_RANGE[0] <= bmi_val <= BMI_RANGE[1]):
            raise DatasetError(
                f"{path}, line {lineno}: bmi {bmi_val:g} outside [{BMI_RANGE[0]:g}, {BMI_RANGE[1]:g}]"
            )

    return {
        "record_id": record_id,
        "patient_id": patient_id,
        "label": label,
        "meta": PatientMeta(patient_id, decade, nyhac_val, bmi_val),
    }


def _read_metadata(path: Path) -> tuple[dict, dict]:
    """Parse the metadata CSV into (record rows by id, PatientMeta by patient id)."""
    rows: dict[str, dict] = {}
    patients: dict[str, PatientMeta] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(cell.strip() for cell in header) != METADATA_COLUMNS:
            raise DatasetError(
                f"{path}: header must be exactly {','.join(METADATA_COLUMNS)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            parsed = _parse_metadata_row(row, lineno, path)
            rid = parsed["record_id"]
            if rid in rows:
                raise DatasetError(f"{path}, line {lineno}: duplicate record_id {rid!r}")
            meta = parsed["meta"]
            seen = patients.get(meta.patient_id)
            if seen is None:
                patients[meta.patient_id] = meta
            elif (seen.birth_decade, seen.nyhac, seen.bmi) != (meta.birth_decade, meta.nyhac, meta.bmi):
                raise DatasetError(
                    f"{path}, line {lineno}: patient {meta.patient_id!r} has inconsistent metadata"
                )
            rows[rid] = parsed
    return rows, patients


def load_dataset(tachogram_dir, metadata_file) -> tuple[list[RRRecord], dict[str, PatientMeta]]:
    """Load every tachogram in a directory along with its metadata.

    Args:
        tachogram_dir: directory of tachogram text files; the file stem is the
            record id.
        metadata_file: CSV with one row per record (see module docstring).

    Returns:
        (records, patients): records sorted by record id, and a mapping from
        patient id to PatientMeta.  A tachogram without a metadata row, or any
        malformed line, raises DatasetError naming the offending location.
    """
    dir_path = Path(tachogram_dir)
    if not dir_path.is_dir():
        raise DatasetError(f"tachogram directory not found: {dir_path}")
    rows, patients = _read_metadata(Path(metadata_file))

    files = sorted(
        (p for p in dir_path.iterdir() if p.is_file() and not p.name.startswith(".")),
        key=lambda p: p.stem,
    )
    if not files:
        raise DatasetError(f"no tachogram files in {dir_path}")

    records = []
    for path in files:
        rid = path.stem
        row = rows.get(rid)
        if row is None:
            raise DatasetError(f"{path}: no metadata row for record {rid!r}")
        records.append(RRRecord(rid, _read_tachogram(path), row["label"], row["patient_id"]))
    return records, patients
