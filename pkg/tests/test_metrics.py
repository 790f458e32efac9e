import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from beliefshift.errors import InvalidInputError, InvalidParameterError, ShapeError
from beliefshift.metrics import (
    GroundTruth,
    IntervalSet,
    accuracy_at_delta,
    delta_key,
    diversity,
    evaluate,
    load_annotations,
    normalize_intervals,
    predicted_windows,
    random_baseline,
    save_annotations,
    spearman,
    temporal_iou,
)
from beliefshift.pipeline import FrameManifest
from tests.test_pipeline import timeline_of

GRID = 0.25


def grid_iou(pred, gt):
    """Oracle: count grid cells covered by each side (all endpoints on the grid)."""
    cells = lambda ivs: {c for a, b in ivs for c in range(int(round(a / GRID)), int(round(b / GRID)))}
    p, g = cells(pred), cells(gt)
    union = p | g
    return len(p & g) / len(union) if union else 0.0


interval_lists = st.lists(
    st.tuples(st.integers(0, 40), st.integers(1, 8)).map(lambda t: (t[0] * GRID, (t[0] + t[1]) * GRID)),
    max_size=6,
)


class TestIou:
    def test_hand_value(self):
        assert temporal_iou([(0, 2)], [(1, 3)]) == pytest.approx(1 / 3)

    def test_empty(self):
        assert temporal_iou([], []) == 0.0
        assert temporal_iou([(0, 1)], []) == 0.0

    def test_overlapping_inputs_are_merged(self):
        assert temporal_iou([(0, 2), (1, 3)], [(0, 3)]) == 1.0

    @given(interval_lists, interval_lists)
    def test_matches_grid_oracle(self, a, b):
        got = temporal_iou(a, b)
        assert got == pytest.approx(grid_iou(a, b), abs=1e-12)
        assert got == pytest.approx(temporal_iou(b, a), abs=1e-12)
        assert 0 <= got <= 1

    def test_interval_validation(self):
        with pytest.raises(InvalidInputError):
            IntervalSet(((2.0, 1.0),))

    def test_normalize_merges_touching(self):
        assert normalize_intervals([(2, 3), (0, 1), (1, 2)]) == [(0, 3)]


class TestWindows:
    def test_hand_value(self):
        tl = timeline_of([0.1, 0.9, 1.0, 0.85, 0.2])
        assert predicted_windows(tl, 0.8).intervals == ((1.0, 4.0),)

    def test_threshold_is_inclusive(self):
        tl = timeline_of([0.8, 0.1, 1.0])
        assert predicted_windows(tl, 0.8).intervals == ((0.0, 1.0), (2.0, 3.0))

    def test_all_equal_covers_everything(self):
        assert predicted_windows(timeline_of([0.4] * 5), 0.8).intervals == ((0.0, 5.0),)

    def test_two_peaks(self):
        assert predicted_windows(timeline_of([0.0, 1.0, 0.1, 0.95, 0.0]), 0.8).intervals == ((1.0, 2.0), (3.0, 4.0))

    def test_failed_records_break_runs(self):
        tl = timeline_of([1.0, None, 1.0])
        assert predicted_windows(tl, 0.5).intervals == ((0.0, 1.0), (2.0, 3.0))

    def test_bad_threshold(self):
        with pytest.raises(InvalidParameterError):
            predicted_windows(timeline_of([1.0, 2.0]), 0)


class TestAccuracy:
    def test_cases(self):
        assert accuracy_at_delta(5.1, 5.0, 0.25) == 1
        assert accuracy_at_delta(5.0, 5.0, 1e-6) == 1
        assert accuracy_at_delta(6.5, 5.0, 1.0) == 0
        assert accuracy_at_delta(10.2, 10.0, 0.25) == 1
        assert accuracy_at_delta(10.3, 10.0, 0.25) == 0
        with pytest.raises(InvalidParameterError):
            accuracy_at_delta(1, 1, 0)

    def test_random_baseline(self):
        # window of width 2 s inside a 10 s video
        assert random_baseline(10.0, 5.0, 1.0, trials=10_000, seed=0) == pytest.approx(0.2, abs=0.015)
        m = FrameManifest.synthetic("v", 10.0, 1)
        assert random_baseline(m, GroundTruth("transition_time", 5.0), 1.0, seed=1) == pytest.approx(0.2, abs=0.015)
        assert random_baseline(10.0, 5.0, 10.0, trials=500, seed=2) == 1.0
        assert random_baseline(10.0, 3.0, 1.0, seed=3) == random_baseline(10.0, 3.0, 1.0, seed=3)


class TestDiversity:
    def test_hand_value(self):
        vecs = {"a": [1.0, 0, 0], "b": [2.0, 0, 0], "c": [0, 1.0, 0]}
        assert diversity(list(vecs), lambda h: np.array(vecs[h])) == pytest.approx(2 / 3)

    def test_orthogonal_is_one(self):
        vecs = {"a": [1.0, 0], "b": [0, 1.0]}
        assert diversity(list(vecs), lambda h: np.array(vecs[h])) == pytest.approx(1.0)

    def test_identical_is_zero(self):
        assert diversity(["x", "x"], lambda h: np.ones(3)) == pytest.approx(0.0, abs=1e-12)

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            diversity(["x"], lambda h: np.ones(3))
        with pytest.raises(InvalidInputError):
            diversity(["x", "y"], lambda h: np.zeros(3))


class TestSpearman:
    def test_hand_value(self):
        assert spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)

    def test_monotone_and_reversed(self):
        assert spearman([1, 5, 9, 10], [2, 3, 50, 51]) == pytest.approx(1.0)
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_constant_is_nan(self):
        assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))

    def test_validation(self):
        with pytest.raises(ShapeError):
            spearman([1, 2], [1, 2, 3])

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=3, max_size=25))
    def test_matches_scipy_with_ties(self, pairs):
        a, b = map(list, zip(*pairs))
        ours = spearman(a, b)
        if len(set(a)) < 2 or len(set(b)) < 2:
            assert math.isnan(ours)
        else:
            assert ours == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)


class TestGroundTruth:
    def test_transition_from_windows(self):
        assert GroundTruth("windows", windows=((0, 1), (4, 8))).transition_time() == 6.0
        assert GroundTruth("windows", windows=((0, 1), (4, 8)), weights=(2.0, 1.0)).transition_time() == 0.5

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            GroundTruth("windows", windows=((0, 2), (1, 3)))
        with pytest.raises(InvalidInputError):
            GroundTruth("transition_time")
        with pytest.raises(InvalidInputError):
            GroundTruth("other", 1.0)

    def test_annotation_roundtrip(self, tmp_path):
        ann = {"a": GroundTruth("transition_time", 3.0), "b": GroundTruth("windows", windows=((1.0, 2.0),))}
        save_annotations(ann, tmp_path / "ann.json")
        assert load_annotations(tmp_path / "ann.json") == ann
        (tmp_path / "bad.json").write_text("{}")
        with pytest.raises(InvalidInputError):
            load_annotations(tmp_path / "bad.json")


def test_evaluate():
    tl = timeline_of([0.1, 0.9, 1.0, 0.85, 0.2])
    other = timeline_of([1.0, 0.0])
    other.video_id = "w"
    stray = timeline_of([1.0, 0.0])
    stray.video_id = "nobody"
    ann = {"v": GroundTruth("windows", windows=((2.0, 3.0),)), "w": GroundTruth("transition_time", 5.0)}
    report = evaluate([tl, other, stray], ann, deltas=(0.25, 1.0))
    row = report["per_video"]["v"]
    assert row["predicted_time"] == 3.0 and row["transition_time"] == 2.5
    assert row[delta_key(0.25)] == 0 and row[delta_key(1.0)] == 1
    assert row["iou"] == pytest.approx(1 / 3)
    assert report["per_video"]["w"]["iou"] is None
    assert report["aggregate"] == {"videos": 2, "acc@0.25s": 0.0, "acc@1s": 0.5, "iou": pytest.approx(1 / 3)}
    assert report["unmatched"] == ["nobody"]
