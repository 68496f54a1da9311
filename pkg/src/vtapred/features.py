"""Feature extraction from boundary-truncated RR-interval sequences.

Two feature families are supported:

* ``recent``: statistics of the most recent beats (mean/min/max RR plus
  low- and high-frequency band power), optionally extended with two windowed
  trend features that compare the last beats against the ones just before.
* ``baseline11``: a classic full-sequence panel of eleven time-domain,
  frequency-domain, and nonlinear statistics, used as a reference point.

Ectopic beats are detected with a running-mean rule and removed before any
statistic other than the windowed ectopic count is computed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import lombscargle

FEATURE_SET_RECENT = "recent"
FEATURE_SET_BASELINE11 = "baseline11"
FEATURE_SETS = (FEATURE_SET_RECENT, FEATURE_SET_BASELINE11)

FREQ_GRID_STEP_HZ = 0.005
VLF_BAND = (0.003, 0.04)

RECENT_NAMES = ("mean_rr", "lf_power", "hf_power", "min_rr", "max_rr")
WINDOWED_NAMES = ("delta_mean_rr", "delta_ectopic_count")
BASELINE11_NAMES = (
    "mean_nn", "sdnn", "rmssd", "pnn50",
    "vlf_power", "lf_power", "hf_power", "lf_hf_ratio",
    "poincare_sd1", "poincare_sd2", "sample_entropy",
)


class FeatureError(Exception):
    """Input unfit for the requested feature computation."""


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for feature extraction; defaults give the recent-beat family."""

    feature_set: str = FEATURE_SET_RECENT
    include_windowed: bool = True
    recent_beats: int = 30
    window_beats: int = 250
    lf_band: tuple[float, float] = (0.04, 0.15)
    hf_band: tuple[float, float] = (0.15, 0.40)
    ectopic_threshold: float = 0.2
    ectopic_ref_beats: int = 5

    def __post_init__(self):
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"feature_set must be one of {FEATURE_SETS}, got {self.feature_set!r}")
        if self.recent_beats < 2:
            raise ValueError("recent_beats must be >= 2")
        if self.window_beats < 2 or self.window_beats % 2:
            raise ValueError("window_beats must be an even number >= 2")
        for lo, hi in (self.lf_band, self.hf_band):
            if not lo < hi:
                raise ValueError(f"degenerate frequency band ({lo:g}, {hi:g})")
        if self.lf_band[1] != self.hf_band[0]:
            raise ValueError("lf and hf bands must be adjacent (lf high edge == hf low edge)")
        if self.ectopic_threshold <= 0:
            raise ValueError("ectopic_threshold must be positive")
        if self.ectopic_ref_beats < 1:
            raise ValueError("ectopic_ref_beats must be >= 1")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Named feature values for one record; values are always finite."""

    record_id: str
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1 or arr.size != len(self.names):
            raise FeatureError(f"record {self.record_id!r}: names/values length mismatch")
        if len(set(self.names)) != len(self.names):
            raise FeatureError(f"record {self.record_id!r}: duplicate feature names")
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise FeatureError(
                f"record {self.record_id!r}: non-finite value for feature {self.names[bad[0]]!r}"
            )
        object.__setattr__(self, "values", arr)


def detect_ectopic(intervals_ms, threshold: float = 0.2, ref_beats: int = 5) -> np.ndarray:
    """Flag beats deviating from the running mean of recent accepted beats.

    A beat is ectopic when it differs from the mean of the previous
    ``ref_beats`` non-ectopic beats by more than ``threshold`` (relative).
    The first ``ref_beats`` beats are assumed normal and seed the reference.
    Flagged beats do not update the reference, so a run of short beats after
    an ectopic one keeps being measured against the last sane baseline.

    Returns a boolean mask aligned with the input (True = ectopic).
    """
    x = np.asarray(intervals_ms, dtype=float)
    if x.ndim != 1 or x.size < ref_beats + 1:
        raise FeatureError("sequence too short for ectopic filtering")
    mask = np.zeros(x.size, dtype=bool)
    recent = list(x[:ref_beats])
    total = float(sum(recent))
    for i in range(ref_beats, x.size):
        reference = total / ref_beats
        if abs(x[i] - reference) > threshold * reference:
            mask[i] = True
        else:
            total += x[i] - recent[0]
            recent.pop(0)
            recent.append(x[i])
    return mask


def time_stats(intervals_ms, recent_beats: int = 30) -> tuple[float, float, float]:
    """(mean, min, max) of the last ``recent_beats`` intervals.

    The caller is expected to pass an ectopic-filtered sequence; this function
    only checks that enough beats remain.
    """
    x = np.asarray(intervals_ms, dtype=float)
    if x.size < recent_beats:
        raise FeatureError(f"need at least {recent_beats} beats for recent-beat statistics")
    tail = x[-recent_beats:]
    return float(tail.mean()), float(tail.min()), float(tail.max())


def band_power(intervals_ms, band: tuple[float, float], grid_step: float = FREQ_GRID_STEP_HZ) -> float:
    """Spectral power of an RR sequence inside a frequency band.

    The sequence is unevenly sampled in time (each beat lands at the end of
    its interval), so the spectrum is estimated with a Lomb-Scargle
    periodogram of the mean-subtracted intervals, evaluated on a uniform grid
    of ``grid_step`` spanning ``(lo, hi]``, and integrated with the trapezoid
    rule.  An all-equal sequence has no power anywhere and returns 0.
    """
    lo, hi = band
    if not lo < hi:
        raise FeatureError(f"degenerate frequency band ({lo:g}, {hi:g})")
    x = np.asarray(intervals_ms, dtype=float)
    if x.size < 2:
        raise FeatureError("need at least 2 intervals for band power")
    if np.ptp(x) == 0:
        return 0.0
    n_freqs = int(np.floor((hi - lo) / grid_step + 1e-9))
    if n_freqs < 1:
        raise FeatureError(f"band ({lo:g}, {hi:g}) narrower than the {grid_step:g} Hz grid step")
    freqs = lo + grid_step * np.arange(1, n_freqs + 1)
    times_s = np.cumsum(x) / 1000.0
    centred = x - x.mean()
    pgram = lombscargle(times_s, centred, 2.0 * np.pi * freqs)
    return float(trapezoid(pgram, freqs))


def windowed_diff(intervals_ms, ectopic_mask, window_beats: int = 250) -> tuple[float, int]:
    """Trend features over the last ``window_beats`` raw beats.

    The window is split in the middle: B holds the older half, A the most
    recent half.  Returns (mean_A - mean_B, ectopic_count_A - ectopic_count_B)
    where the means use non-ectopic beats only and the counts use the mask
    as-is.  A fully ectopic half-window has no defined mean and is an error.
    """
    x = np.asarray(intervals_ms, dtype=float)
    mask = np.asarray(ectopic_mask, dtype=bool)
    if x.shape != mask.shape:
        raise FeatureError("intervals and ectopic mask must have the same length")
    if window_beats < 2 or window_beats % 2:
        raise FeatureError("window_beats must be an even number >= 2")
    if x.size < window_beats:
        raise FeatureError(f"need at least {window_beats} beats for windowed features")
    half = window_beats // 2
    recent, recent_mask = x[-half:], mask[-half:]
    older, older_mask = x[-window_beats:-half], mask[-window_beats:-half]
    kept_recent = recent[~recent_mask]
    kept_older = older[~older_mask]
    if kept_recent.size == 0 or kept_older.size == 0:
        raise FeatureError("a half-window contains only ectopic beats")
    delta_mean = float(kept_recent.mean() - kept_older.mean())
    delta_count = int(recent_mask.sum()) - int(older_mask.sum())
    return delta_mean, delta_count


def sample_entropy(intervals_ms, m: int = 2, r: float | None = None) -> float:
    """Sample entropy with Chebyshev distance and self-matches excluded.

    ``r`` defaults to 0.2 * sample standard deviation.  Degenerate counts get
    the usual conventions: no template matches at length m returns 0, and no
    matches at length m+1 returns the maximum resolvable value
    ``log(n*(n-1)/2)`` for n = N - m template pairs.
    """
    x = np.asarray(intervals_ms, dtype=float)
    n = x.size
    if n < m + 2:
        raise FeatureError(f"need at least {m + 2} beats for sample entropy with m={m}")
    if r is None:
        r = 0.2 * float(np.std(x, ddof=1))
    # Chebyshev distances between templates, built from the pairwise
    # point distances by taking maxima along the diagonal offsets.
    point = np.abs(x[:, None] - x[None, :])
    cheb = point
    for k in range(1, m):
        cheb = np.maximum(cheb[:-1, :-1], point[k:, k:])
    n_templates = n - m
    cheb_m = cheb[:n_templates, :n_templates]
    cheb_m1 = np.maximum(cheb[: n - m, : n - m], point[m:, m:])
    # Pair counts over i < j; the diagonal always matches itself, drop it.
    matches_m = (np.count_nonzero(cheb_m <= r) - n_templates) // 2
    matches_m1 = (np.count_nonzero(cheb_m1 <= r) - n_templates) // 2
    if matches_m == 0:
        return 0.0
    if matches_m1 == 0:
        return float(np.log(n_templates * (n_templates - 1) / 2.0))
    return float(-np.log(matches_m1 / matches_m))


def _poincare(x: np.ndarray) -> tuple[float, float]:
    """Short- and long-term Poincare dispersion (SD1, SD2).

    SD1 is the RMS distance of successive-beat points from the identity line,
    which works out to RMSSD / sqrt(2); SD2 is the spread of the projections
    along that line.
    """
    diffs = np.diff(x)
    sd1 = float(np.sqrt(np.mean((diffs / np.sqrt(2.0)) ** 2)))
    along = (x[1:] + x[:-1]) / np.sqrt(2.0)
    sd2 = float(np.std(along, ddof=1))
    return sd1, sd2


def baseline11(intervals_ms, config: FeatureConfig = FeatureConfig()) -> dict[str, float]:
    """The eleven-feature full-sequence reference panel.

    Expects an ectopic-filtered sequence; uses every beat of it rather than
    only the recent window.  pNN50 counts successive differences strictly
    greater than 50 ms; the LF/HF ratio is defined as 0 when there is no HF
    power at all.
    """
    x = np.asarray(intervals_ms, dtype=float)
    # sample entropy (m=2) needs 4 beats, SD2 needs 3; 4 covers everything
    if x.size < 4:
        raise FeatureError("sequence too short for the baseline feature panel")
    diffs = np.diff(x)
    sdnn = float(np.std(x, ddof=1))
    rmssd = float(np.sqrt(np.mean(diffs**2)))
    pnn50 = float(np.mean(np.abs(diffs) > 50.0))
    vlf = band_power(x, VLF_BAND)
    lf = band_power(x, config.lf_band)
    hf = band_power(x, config.hf_band)
    sd1, sd2 = _poincare(x)
    return {
        "mean_nn": float(x.mean()),
        "sdnn": sdnn,
        "rmssd": rmssd,
        "pnn50": pnn50,
        "vlf_power": vlf,
        "lf_power": lf,
        "hf_power": hf,
        "lf_hf_ratio": lf / hf if hf > 0 else 0.0,
        "poincare_sd1": sd1,
        "poincare_sd2": sd2,
        "sample_entropy": sample_entropy(x),
    }


def extract(record, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Compute the configured feature vector for one truncated record.

    Pure function of (record, config): no caching, no mutation, so results
    can be computed once and shared across folds and seeds.
    """
    raw = record.intervals_ms
    try:
        mask = detect_ectopic(raw, config.ectopic_threshold, config.ectopic_ref_beats)
        filtered = raw[~mask]
        if config.feature_set == FEATURE_SET_BASELINE11:
            panel = baseline11(filtered, config)
            names = BASELINE11_NAMES
            values = [panel[name] for name in names]
        else:
            mean_rr, min_rr, max_rr = time_stats(filtered, config.recent_beats)
            recent = filtered[-config.recent_beats:]
            lf = band_power(recent, config.lf_band)
            hf = band_power(recent, config.hf_band)
            names = RECENT_NAMES
            values = [mean_rr, lf, hf, min_rr, max_rr]
        if config.include_windowed:
            delta_mean, delta_count = windowed_diff(raw, mask, config.window_beats)
            names = names + WINDOWED_NAMES
            values = values + [delta_mean, float(delta_count)]
    except FeatureError as exc:
        raise FeatureError(f"record {record.record_id!r}: {exc}") from None
    return FeatureVector(record.record_id, names, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature min-max ranges fitted on training data only."""

    minima: np.ndarray
    maxima: np.ndarray


def fit_standardizer(vectors) -> Standardizer:
    """Fit per-feature minima/maxima from vectors or a plain (n, f) array."""
    if isinstance(vectors, np.ndarray):
        matrix = np.asarray(vectors, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
    else:
        rows = list(vectors)
        if not rows:
            raise FeatureError("cannot fit a standardizer on an empty collection")
        matrix = np.stack([np.asarray(v.values if isinstance(v, FeatureVector) else v, float) for v in rows])
    if matrix.size == 0:
        raise FeatureError("cannot fit a standardizer on an empty collection")
    return Standardizer(matrix.min(axis=0), matrix.max(axis=0))


def standardize(standardizer: Standardizer, values) -> np.ndarray:
    """Map values into [0, 1] by the fitted ranges, clamping out-of-range input.

    A degenerate feature (min == max on the training data) maps to 0.5.
    """
    x = np.asarray(values.values if isinstance(values, FeatureVector) else values, dtype=float)
    span = standardizer.maxima - standardizer.minima
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    scaled = (x - standardizer.minima) / safe_span
    scaled = np.where(degenerate, 0.5, scaled)
    return np.clip(scaled, 0.0, 1.0)


def write_feature_matrix(path, records, vectors) -> None:
    """Write features as CSV: ``record_id,label,<names>``, 6 significant digits."""
    vectors = list(vectors)
    records = list(records)
    if len(records) != len(vectors):
        raise FeatureError("records and vectors must be aligned")
    if not vectors:
        raise FeatureError("nothing to write")
    names = vectors[0].names
    for vec in vectors:
        if vec.names != names:
            raise FeatureError("all vectors must share one feature set")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("record_id,label," + ",".join(names) + "\n")
        for rec, vec in zip(records, vectors):
            cells = ",".join(f"{v:.6g}" for v in vec.values)
            fh.write(f"{rec.record_id},{rec.label},{cells}\n")
