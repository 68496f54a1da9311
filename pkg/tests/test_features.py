"""Feature extraction tests: ectopic filtering, spectra, windows, panels."""

import math

import numpy as np
import pytest

from oracles import (
    lomb_band_power,
    lomb_periodogram,
    modulated_tachogram,
    poincare_widths,
    sample_entropy_loops,
)
from vtapred import (
    BASELINE11_NAMES,
    RECENT_NAMES,
    VLF_BAND,
    WINDOWED_NAMES,
    FeatureConfig,
    FeatureError,
    FeatureVector,
    RRRecord,
    band_power,
    baseline11,
    detect_ectopic,
    extract,
    fit_standardizer,
    sample_entropy,
    standardize,
    time_stats,
    windowed_diff,
    write_feature_matrix,
)


class TestDetectEctopic:
    def test_single_large_outlier_flagged(self):
        x = [800.0] * 5 + [400.0] + [800.0] * 4
        mask = detect_ectopic(x, threshold=0.2, ref_beats=5)
        assert mask.tolist() == [False] * 5 + [True] + [False] * 4

    def test_flagged_beat_does_not_shift_reference(self):
        # the 400 must not drag the running mean down and condemn the 800s
        x = [800.0] * 5 + [400.0, 400.0] + [800.0] * 3
        mask = detect_ectopic(x)
        assert mask.tolist() == [False] * 5 + [True, True] + [False] * 3

    def test_constant_sequence_all_clear(self):
        mask = detect_ectopic(np.full(40, 700.0))
        assert not mask.any()

    def test_small_alternation_all_clear(self):
        x = np.where(np.arange(40) % 2 == 0, 800.0, 810.0)
        assert not detect_ectopic(x).any()

    def test_too_short_message(self):
        with pytest.raises(FeatureError, match="sequence too short for ectopic filtering"):
            detect_ectopic([800.0] * 5, ref_beats=5)

    def test_mask_invariant_under_scaling(self, rng):
        for _ in range(10):
            x = rng.normal(800.0, 40.0, 80)
            spikes = rng.choice(np.arange(10, 80), size=6, replace=False)
            x[spikes] *= rng.uniform(1.4, 1.9, size=6)
            np.testing.assert_array_equal(detect_ectopic(x), detect_ectopic(3.7 * x))

    def test_mask_length_matches_input(self, rng):
        x = rng.normal(800.0, 30.0, 57)
        assert detect_ectopic(x).shape == (57,)


class TestTimeStats:
    def test_constant_tail(self):
        mean, lo, hi = time_stats(np.full(45, 800.0), recent_beats=30)
        assert (mean, lo, hi) == (800.0, 800.0, 800.0)

    def test_alternating_tail(self):
        x = np.where(np.arange(30) % 2 == 0, 790.0, 810.0)
        mean, lo, hi = time_stats(x, recent_beats=30)
        assert mean == pytest.approx(800.0)
        assert (lo, hi) == (790.0, 810.0)

    def test_filtering_happens_before_stats(self):
        x = np.array([800.0] * 5 + [9999.0] + [800.0] * 25)
        mask = detect_ectopic(x)
        assert mask.sum() == 1
        mean, lo, hi = time_stats(x[~mask], recent_beats=30)
        assert (mean, lo, hi) == (800.0, 800.0, 800.0)

    def test_only_last_beats_counted(self):
        x = np.array([600.0] * 10 + [800.0] * 30)
        assert time_stats(x, recent_beats=30) == (800.0, 800.0, 800.0)

    def test_insufficient_beats(self):
        with pytest.raises(FeatureError, match="recent-beat statistics"):
            time_stats(np.full(29, 800.0), recent_beats=30)


class TestBandPower:
    def test_constant_sequence_is_exactly_zero(self):
        x = np.full(30, 800.0)
        assert band_power(x, (0.04, 0.15)) == 0.0
        assert band_power(x, (0.15, 0.40)) == 0.0

    def test_low_frequency_tone_lands_in_lf(self):
        x = modulated_tachogram(0.10)
        lf = band_power(x, (0.04, 0.15))
        hf = band_power(x, (0.15, 0.40))
        assert lf > 10.0 * hf

    def test_high_frequency_tone_lands_in_hf(self):
        x = modulated_tachogram(0.30)
        lf = band_power(x, (0.04, 0.15))
        hf = band_power(x, (0.15, 0.40))
        assert hf > 10.0 * lf

    def test_dense_grid_oracle_agrees_on_tone_location(self):
        # independent periodogram on a 10x finer grid, hand-rolled trapezoid
        for freq, widest in ((0.10, (0.04, 0.15)), (0.30, (0.15, 0.40))):
            x = modulated_tachogram(freq)
            t = np.cumsum(x) / 1000.0
            y = x - x.mean()
            in_band = lomb_periodogram(t, y, np.arange(widest[0] + 0.0005, widest[1], 0.0005))
            other = (0.15, 0.40) if widest == (0.04, 0.15) else (0.04, 0.15)
            out_band = lomb_periodogram(t, y, np.arange(other[0] + 0.0005, other[1], 0.0005))
            assert np.trapezoid(in_band) > 10.0 * np.trapezoid(out_band)

    def test_matches_direct_formula_on_shared_grid(self, rng):
        for _ in range(8):
            x = rng.normal(820.0, 45.0, 60)
            for band in ((0.04, 0.15), (0.15, 0.40), VLF_BAND):
                got = band_power(x, band)
                want = lomb_band_power(x, band)
                assert got == pytest.approx(want, rel=1e-8)

    def test_non_negative(self, rng):
        for _ in range(10):
            x = rng.normal(800.0, 60.0, 50)
            assert band_power(x, (0.04, 0.15)) >= 0.0

    def test_total_band_dominates_sub_bands(self, rng):
        for _ in range(6):
            x = rng.normal(800.0, 50.0, 100)
            total = band_power(x, (0.003, 0.40))
            for sub in (VLF_BAND, (0.04, 0.15), (0.15, 0.40)):
                assert total >= band_power(x, sub) * (1.0 - 1e-9)

    def test_degenerate_band_rejected(self):
        with pytest.raises(FeatureError, match="degenerate frequency band"):
            band_power(np.full(30, 800.0), (0.15, 0.15))

    def test_needs_two_beats(self):
        with pytest.raises(FeatureError, match="at least 2 intervals"):
            band_power([800.0], (0.04, 0.15))


class TestWindowedDiff:
    def test_ectopic_count_difference(self):
        x = np.full(250, 800.0)
        mask = np.zeros(250, dtype=bool)
        mask[-6:] = True        # six in the recent half
        mask[10:12] = True      # two in the older half
        delta_mean, delta_count = windowed_diff(x, mask, window_beats=250)
        assert delta_count == 4
        assert delta_mean == 0.0

    def test_identical_halves_vanish(self):
        x = np.tile(np.linspace(700.0, 900.0, 125), 2)
        mask = np.zeros(250, dtype=bool)
        assert windowed_diff(x, mask, 250) == (0.0, 0)

    def test_accelerating_rhythm_is_negative(self):
        x = np.r_[np.full(125, 800.0), np.full(125, 620.0)]
        delta_mean, delta_count = windowed_diff(x, np.zeros(250, dtype=bool), 250)
        assert delta_mean == pytest.approx(-180.0)
        assert delta_count == 0

    def test_mean_uses_only_clean_beats(self):
        x = np.r_[np.full(125, 800.0), np.full(125, 620.0)]
        mask = np.zeros(250, dtype=bool)
        x[-1] = 3000.0
        mask[-1] = True
        delta_mean, _ = windowed_diff(x, mask, 250)
        assert delta_mean == pytest.approx(-180.0)

    def test_antisymmetric_under_half_swap(self, rng):
        for _ in range(10):
            x = rng.normal(780.0, 50.0, 250)
            mask = rng.random(250) < 0.1
            swapped_x = np.r_[x[125:], x[:125]]
            swapped_m = np.r_[mask[125:], mask[:125]]
            try:
                dm, dc = windowed_diff(x, mask, 250)
            except FeatureError:
                continue
            dm2, dc2 = windowed_diff(swapped_x, swapped_m, 250)
            assert dm2 == pytest.approx(-dm)
            assert dc2 == -dc

    def test_shape_mismatch(self):
        with pytest.raises(FeatureError, match="same length"):
            windowed_diff(np.full(250, 800.0), np.zeros(249, dtype=bool))

    def test_odd_window_rejected(self):
        with pytest.raises(FeatureError, match="even"):
            windowed_diff(np.full(251, 800.0), np.zeros(251, dtype=bool), window_beats=251)

    def test_too_short(self):
        with pytest.raises(FeatureError, match="need at least 250 beats"):
            windowed_diff(np.full(249, 800.0), np.zeros(249, dtype=bool), 250)

    def test_all_ectopic_half_rejected(self):
        x = np.full(250, 800.0)
        mask = np.zeros(250, dtype=bool)
        mask[-125:] = True
        with pytest.raises(FeatureError, match="only ectopic beats"):
            windowed_diff(x, mask, 250)


class TestBaseline11:
    def test_names_and_length(self):
        panel = baseline11(np.random.default_rng(0).normal(800.0, 40.0, 120))
        assert tuple(panel) == BASELINE11_NAMES
        assert len(panel) == 11

    def test_constant_sequence_collapses(self):
        panel = baseline11(np.full(60, 800.0))
        assert panel["sdnn"] == 0.0
        assert panel["rmssd"] == 0.0
        assert panel["pnn50"] == 0.0
        assert panel["vlf_power"] == 0.0
        assert panel["lf_power"] == 0.0
        assert panel["hf_power"] == 0.0
        assert panel["lf_hf_ratio"] == 0.0
        assert panel["mean_nn"] == 800.0

    def test_alternating_50ms_steps(self):
        x = np.where(np.arange(40) % 2 == 0, 800.0, 850.0)
        panel = baseline11(x)
        assert panel["rmssd"] == pytest.approx(50.0)
        # strict inequality: a 50 ms step is not > 50 ms
        assert panel["pnn50"] == 0.0
        assert panel["poincare_sd1"] == pytest.approx(50.0 / math.sqrt(2.0))

    def test_sd1_identity_on_random_sequences(self, rng):
        for _ in range(100):
            x = rng.normal(800.0, rng.uniform(5.0, 80.0), rng.integers(10, 200))
            panel = baseline11(x)
            diffs = np.diff(x)
            rmssd = np.sqrt(np.mean(diffs**2))
            assert panel["poincare_sd1"] == pytest.approx(rmssd / math.sqrt(2.0), rel=1e-12)
            sd1, sd2 = poincare_widths(x)
            assert panel["poincare_sd1"] == pytest.approx(sd1, rel=1e-12)
            assert panel["poincare_sd2"] == pytest.approx(sd2, rel=1e-12)

    def test_sample_entropy_matches_loop_oracle(self, rng):
        for _ in range(25):
            x = rng.normal(800.0, 50.0, rng.integers(12, 40))
            assert sample_entropy(x) == pytest.approx(sample_entropy_loops(x), rel=1e-12)

    def test_sample_entropy_custom_radius(self, rng):
        x = rng.normal(800.0, 50.0, 30)
        assert sample_entropy(x, r=25.0) == pytest.approx(sample_entropy_loops(x, r=25.0), rel=1e-12)

    def test_sample_entropy_too_short(self):
        with pytest.raises(FeatureError, match="sample entropy"):
            sample_entropy([800.0, 810.0, 790.0])

    def test_panel_too_short(self):
        with pytest.raises(FeatureError, match="too short for the baseline"):
            baseline11([800.0, 810.0, 790.0])


class TestExtract:
    def _record(self, n=300, seed=5):
        rng = np.random.default_rng(seed)
        return RRRecord("rec", rng.normal(800.0, 35.0, n), "VTA", "p")

    def test_recent_with_windowed_has_seven_features(self):
        vec = extract(self._record(), FeatureConfig())
        assert vec.names == RECENT_NAMES + WINDOWED_NAMES
        assert vec.values.shape == (7,)

    def test_recent_without_windowed_has_five(self):
        vec = extract(self._record(), FeatureConfig(include_windowed=False))
        assert vec.names == RECENT_NAMES

    def test_baseline_panel_has_eleven(self):
        cfg = FeatureConfig(feature_set="baseline11", include_windowed=False)
        vec = extract(self._record(), cfg)
        assert vec.names == BASELINE11_NAMES
        assert vec.values.shape == (11,)

    def test_pure_function(self):
        rec = self._record()
        cfg = FeatureConfig()
        a = extract(rec, cfg)
        b = extract(rec, cfg)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.names == b.names

    def test_error_names_the_record(self):
        rec = RRRecord("tiny", np.full(40, 800.0), "Control", "p")
        with pytest.raises(FeatureError, match="record 'tiny'"):
            extract(rec, FeatureConfig())

    def test_windowed_features_see_raw_sequence(self):
        # an ectopic beat in the recent half must be visible to the count
        rng = np.random.default_rng(9)
        x = rng.normal(800.0, 10.0, 300)
        x[-20] = 1500.0
        rec = RRRecord("r", x, "VTA", "p")
        vec = extract(rec, FeatureConfig())
        by_name = dict(zip(vec.names, vec.values))
        assert by_name["delta_ectopic_count"] >= 1.0


class TestFeatureVector:
    def test_rejects_nan_naming_the_feature(self):
        with pytest.raises(FeatureError, match="non-finite value for feature 'b'"):
            FeatureVector("r", ("a", "b"), np.array([1.0, np.nan]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(FeatureError, match="length mismatch"):
            FeatureVector("r", ("a", "b"), np.array([1.0]))

    def test_rejects_duplicate_names(self):
        with pytest.raises(FeatureError, match="duplicate"):
            FeatureVector("r", ("a", "a"), np.array([1.0, 2.0]))


class TestStandardizer:
    def test_midpoint_maps_to_half(self):
        std = fit_standardizer(np.array([[0.0], [10.0]]))
        assert standardize(std, np.array([5.0]))[0] == 0.5

    def test_out_of_range_clamps(self):
        std = fit_standardizer(np.array([[0.0], [10.0]]))
        assert standardize(std, np.array([12.0]))[0] == 1.0
        assert standardize(std, np.array([-3.0]))[0] == 0.0

    def test_degenerate_feature_maps_to_half(self):
        std = fit_standardizer(np.array([[4.0, 1.0], [4.0, 3.0]]))
        out = standardize(std, np.array([99.0, 2.0]))
        assert out[0] == 0.5
        assert out[1] == pytest.approx(0.5)

    def test_empty_fit_rejected(self):
        with pytest.raises(FeatureError, match="empty"):
            fit_standardizer([])

    def test_monotone_per_feature(self, rng):
        train = rng.normal(0.0, 2.0, (30, 4))
        std = fit_standardizer(train)
        lo = standardize(std, rng.normal(0.0, 2.0, 4))
        hi = standardize(std, std.maxima + 1.0)
        assert np.all(hi >= lo)

    def test_training_data_lands_in_unit_box(self, rng):
        train = rng.normal(0.0, 3.0, (40, 5))
        std = fit_standardizer(train)
        for row in train:
            out = standardize(std, row)
            assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_fit_accepts_feature_vectors(self):
        vecs = [FeatureVector("a", ("x",), np.array([1.0])), FeatureVector("b", ("x",), np.array([3.0]))]
        std = fit_standardizer(vecs)
        assert standardize(std, np.array([2.0]))[0] == 0.5


class TestFeatureMatrixExport:
    def test_round_trip_format(self, tmp_path):
        recs = [
            RRRecord("r1", np.full(10, 800.0), "VTA", "p1"),
            RRRecord("r2", np.full(10, 700.0), "Control", "p2"),
        ]
        vecs = [
            FeatureVector("r1", ("f1", "f2"), np.array([1.0, 0.123456789])),
            FeatureVector("r2", ("f1", "f2"), np.array([2.0, 1e-7])),
        ]
        out = tmp_path / "features.csv"
        write_feature_matrix(out, recs, vecs)
        lines = out.read_text().splitlines()
        assert lines[0] == "record_id,label,f1,f2"
        assert lines[1] == "r1,VTA,1,0.123457"
        assert lines[2] == "r2,Control,2,1e-07"

    def test_mismatched_lengths_rejected(self, tmp_path):
        rec = RRRecord("r1", np.full(10, 800.0), "VTA", "p1")
        with pytest.raises(FeatureError, match="aligned"):
            write_feature_matrix(tmp_path / "x.csv", [rec], [])

    def test_mixed_feature_sets_rejected(self, tmp_path):
        recs = [
            RRRecord("r1", np.full(10, 800.0), "VTA", "p1"),
            RRRecord("r2", np.full(10, 700.0), "Control", "p2"),
        ]
        vecs = [
            FeatureVector("r1", ("f1",), np.array([1.0])),
            FeatureVector("r2", ("f2",), np.array([2.0])),
        ]
        with pytest.raises(FeatureError, match="one feature set"):
            write_feature_matrix(tmp_path / "x.csv", recs, vecs)


class TestFeatureConfigValidation:
    def test_unknown_feature_set(self):
        with pytest.raises(ValueError, match="feature_set"):
            FeatureConfig(feature_set="mystery")

    def test_odd_window(self):
        with pytest.raises(ValueError, match="even"):
            FeatureConfig(window_beats=251)

    def test_band_adjacency_enforced(self):
        with pytest.raises(ValueError, match="adjacent"):
            FeatureConfig(lf_band=(0.04, 0.14), hf_band=(0.15, 0.40))

    def test_degenerate_band(self):
        with pytest.raises(ValueError, match="degenerate"):
            FeatureConfig(lf_band=(0.15, 0.04), hf_band=(0.04, 0.40))
