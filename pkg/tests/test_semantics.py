import numpy as np
import pytest

from drivestyle.config import ThresholdSpec
from drivestyle.distributions import Family, make_rng
from drivestyle.errors import ContractError, EventFileError, InputError
from drivestyle.markov import Segment
from drivestyle.models import ThresholdTable
from drivestyle.semantics import (
    AccelLevel,
    DistanceLevel,
    PrimitivePattern,
    RateLevel,
    Variable,
    all_patterns,
    compute_thresholds,
    default_thresholds,
    describe_event,
    family_report,
    label_event,
    label_segment,
    label_value,
    load_thresholds,
    preference_index,
    segment_representative,
    semantic_sentence,
    threshold_rows,
)


@pytest.fixture
def table() -> ThresholdTable:
    return default_thresholds()


def test_lattice_has_75_distinct_patterns():
    patterns = all_patterns()
    assert len(patterns) == 75
    assert len(set(patterns)) == 75


def test_bundled_thresholds(table):
    assert table.range_cuts == (27.32, 57.33)
    assert table.rate_cuts == (-1.17, -0.21, 0.33, 1.29)
    assert table.accel_cuts == (-0.24, -0.07, 0.06, 0.23)


class TestLabeling:
    def test_long_distance_rapid_fall_back_gentle_acceleration(self, table):
        assert label_segment([60.0, 1.5, 0.1], table) == PrimitivePattern(DistanceLevel.LD, RateLevel.RFB, AccelLevel.GA)

    def test_close_distance_keeping_no_acceleration(self, table):
        assert label_segment([20.0, 0.0, 0.0], table) == PrimitivePattern(DistanceLevel.CD, RateLevel.KE, AccelLevel.NA)

    def test_cut_points_belong_to_the_upper_level(self, table):
        assert label_value(27.32, Variable.RANGE, table) is DistanceLevel.ND
        assert label_value(57.33, Variable.RANGE, table) is DistanceLevel.LD
        assert label_value(-1.17, Variable.RATE, table) is RateLevel.CI
        assert label_value(0.23, Variable.ACCEL, table) is AccelLevel.AA
        assert label_value(-0.2400001, Variable.ACCEL, table) is AccelLevel.AD

    def test_non_finite_values_are_rejected(self, table):
        with pytest.raises(InputError):
            label_segment([np.nan, 0.0, 0.0], table)
        with pytest.raises(InputError):
            label_value(np.inf, Variable.RATE, table)

    def test_wrong_shape(self, table):
        with pytest.raises(InputError):
            label_segment([1.0, 2.0], table)

    def test_representative_is_segment_centroid(self):
        frames = np.arange(30.0).reshape(10, 3)
        np.testing.assert_allclose(segment_representative(frames, Segment(0, 2, 3)), frames[2:5].mean(axis=0))

    def test_representative_out_of_bounds(self):
        with pytest.raises(ContractError):
            segment_representative(np.zeros((5, 3)), Segment(0, 3, 4))

    def test_label_event(self, table):
        frames = np.vstack([np.tile([60.0, 1.5, 0.1], (4, 1)), np.tile([20.0, 0.0, 0.0], (6, 1))])
        labeled = label_event("e1", frames, [Segment(0, 0, 4), Segment(1, 4, 6)], table)
        assert [item.pattern.code for item in labeled] == ["RFB-GA-LD", "KE-NA-CD"]
        assert labeled[1].event_id == "e1"


class TestSentences:
    def test_sentence(self):
        pattern = PrimitivePattern(DistanceLevel.LD, RateLevel.KE, AccelLevel.AD)
        assert (
            semantic_sentence(pattern)
            == "The driver is keeping the lead vehicle by aggressive deceleration in a long distance."
        )

    def test_every_pattern_has_a_distinct_sentence(self):
        assert len({semantic_sentence(p) for p in all_patterns()}) == 75

    def test_preference_index(self):
        assert preference_index(PrimitivePattern(DistanceLevel.ND, RateLevel.FB, AccelLevel.AD)) == (2, 1)
        assert preference_index(PrimitivePattern(DistanceLevel.ND, RateLevel.RCI, AccelLevel.AA)) == (-2, -2)

    def test_code_round_trip(self):
        pattern = PrimitivePattern(DistanceLevel.CD, RateLevel.RCI, AccelLevel.GD)
        assert pattern.code == "RCI-GD-CD"
        assert PrimitivePattern.from_code("RCI-GD-CD") == pattern
        with pytest.raises(InputError):
            PrimitivePattern.from_code("XX-GD-CD")

    def test_describe_event(self, table):
        frames = np.tile([20.0, 0.0, 0.0], (15, 1))
        labeled = label_event("e1", frames, [Segment(0, 0, 15)], table)
        assert describe_event(labeled, 10.0) == [
            "[0.0-1.5 s] The driver is keeping the lead vehicle by no acceleration in a close distance."
        ]


class TestThresholdTables:
    def test_rows_cover_the_real_line(self, table):
        rows = threshold_rows(table)
        assert len(rows) == 13
        assert rows[0] == ("Range [m]", "LD", 57.33, float("inf"))
        assert rows[2] == ("Range [m]", "CD", float("-inf"), 27.32)

    def test_non_ascending_table_is_rejected(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text('{"range_cuts": [50, 20], "rate_cuts": [-1, 0, 1, 2], "accel_cuts": [-1, 0, 1, 2]}')
        with pytest.raises(EventFileError):
            load_thresholds(path)

    def test_fitted_thresholds_sit_at_percentiles(self):
        gen = make_rng(0)
        range_data = gen.gamma(6.0, 7.0, size=5000)
        rate_data = gen.standard_t(5.0, size=5000) * 0.5
        accel_data = gen.standard_t(5.0, size=5000) * 0.1
        table = compute_thresholds(range_data, rate_data, accel_data)
        assert table.source == "fitted"
        low, high = table.range_cuts
        assert np.mean(range_data < low) == pytest.approx(0.30, abs=0.03)
        assert np.mean(range_data < high) == pytest.approx(0.85, abs=0.03)
        fractions = [np.mean(rate_data < c) for c in table.rate_cuts]
        np.testing.assert_allclose(fractions, [0.15, 0.40, 0.60, 0.85], atol=0.03)

    def test_too_few_pooled_samples(self):
        data = np.linspace(1.0, 2.0, 50)
        with pytest.raises(InputError):
            compute_thresholds(data, data, data, ThresholdSpec(min_samples=100))

    def test_family_report_is_sorted(self):
        gen = make_rng(2)
        data = gen.normal(size=500)
        report = family_report(data + 40.0, data, data)
        for fits in report.values():
            logliks = [f.loglik for f in fits]
            assert logliks == sorted(logliks, reverse=True)
        assert {f.family for f in report[Variable.RANGE]} == set(Family)
