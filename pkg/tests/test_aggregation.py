"""Slide-feature pooling, Bayes grading, threshold calibration, head ensembles."""

from __future__ import annotations

import numpy as np
import pytest

from corepath.aggregation import (
    COUNT_CUTS,
    HeadEnsemble,
    LossMatrix,
    PERCENTILES,
    aggregate_patient,
    bayes_grade,
    calibrate_threshold,
    grade_risks,
    grading_class_weights,
    predict_slide,
    slide_features,
    train_detection_heads,
    train_grading_heads,
    train_length_heads,
)


class TestSlideFeatures:
    def test_constants(self):
        assert len(PERCENTILES) == 9
        assert COUNT_CUTS == (0.999, 0.99, 0.9)

    def test_single_patch_two_classes(self):
        v = slide_features(np.array([[0.2, 0.8]]))
        assert v.shape == (33,)
        # sums, medians, maxes and every percentile all equal the one row
        for start in range(0, 24, 2):
            assert v[start] == pytest.approx(0.2)
            assert v[start + 1] == pytest.approx(0.8)
        assert np.array_equal(v[24:30], np.zeros(6))  # no prob clears 0.9
        assert v[30] == 1.0
        assert np.array_equal(v[31:33], [0.0, 1.0])

    def test_count_cut_block(self):
        probs = np.array(
            [[0.9995, 0.0005], [0.995, 0.005], [0.95, 0.05], [0.5, 0.5]]
        )
        v = slide_features(probs)
        assert np.array_equal(v[24:26], [1.0, 0.0])
        assert np.array_equal(v[26:28], [2.0, 0.0])
        assert np.array_equal(v[28:30], [3.0, 0.0])
        assert v[30] == 4.0
        assert np.array_equal(v[31:33], [4.0, 0.0])

    def test_four_class_length(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(4), size=12)
        assert slide_features(p).shape == (65,)

    def test_zero_patches(self):
        assert np.array_equal(slide_features(np.zeros((0, 2))), np.zeros(33))
        assert np.array_equal(slide_features(np.array([]), n_classes=4), np.zeros(65))

    def test_row_order_invariant(self):
        rng = np.random.default_rng(1)
        p = rng.dirichlet(np.ones(2), size=40)
        a = slide_features(p)
        b = slide_features(p[rng.permutation(40)])
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="2-D"):
            slide_features(np.array([0.2, 0.8]))
        with pytest.raises(ValueError, match="expected 4 classes"):
            slide_features(np.zeros((3, 2)), n_classes=4)


class TestLossMatrix:
    def test_default_matrix(self):
        want = np.array(
            [
                [0.0, 0.1, 0.2, 0.3, 0.4],
                [0.2, 0.0, 0.1, 0.2, 0.3],
                [0.4, 0.2, 0.0, 0.1, 0.2],
                [0.6, 0.4, 0.2, 0.0, 0.1],
                [0.8, 0.6, 0.4, 0.2, 0.0],
            ]
        )
        assert np.allclose(LossMatrix(0.1, 0.2, 5).matrix(), want)

    def test_overcall_is_cheaper_than_undercall(self):
        L = LossMatrix().matrix()
        for step in range(1, 5):
            for y in range(5 - step):
                assert L[y, y + step] < L[y + step, y]


class TestBayesGrade:
    def test_uniform_distribution_prefers_grade_four(self):
        risks = grade_risks(np.full(5, 0.2))
        assert np.allclose(risks, [0.4, 0.26, 0.18, 0.16, 0.2])
        assert bayes_grade(np.full(5, 0.2)) == 4

    def test_one_hot_identity(self):
        for k in range(5):
            p = np.zeros(5)
            p[k] = 1.0
            assert bayes_grade(p) == k + 1

    def test_exact_tie_resolves_upward(self):
        loss = LossMatrix(overcall_rate=0.2, undercall_rate=0.2, n_grades=2)
        assert bayes_grade(np.array([0.5, 0.5]), loss) == 2

    def test_agrees_with_risk_argmin(self):
        rng = np.random.default_rng(2)
        loss = LossMatrix()
        for p in rng.dirichlet(np.ones(5), size=60):
            risks = grade_risks(p, loss)
            want = int(np.flatnonzero(risks == risks.min()).max()) + 1
            assert bayes_grade(p, loss) == want

    def test_validation(self):
        with pytest.raises(ValueError, match="5 grade"):
            bayes_grade(np.array([0.5, 0.5]))
        with pytest.raises(ValueError, match="sum to 1"):
            bayes_grade(np.array([0.3, 0.3, 0.3, 0.3, 0.3]))
        with pytest.raises(ValueError, match="non-negative"):
            bayes_grade(np.array([-0.2, 0.4, 0.4, 0.2, 0.2]))
        # a sub-tolerance drift is accepted
        assert bayes_grade(np.array([0.2 + 5e-7, 0.2, 0.2, 0.2, 0.2])) == 4


class TestCalibrateThreshold:
    scores = np.array([0.9, 0.8, 0.7, 0.3, 0.2, 0.1])
    labels = np.array([1, 1, 1, 0, 1, 0])

    def test_fixture_targets(self):
        assert calibrate_threshold(self.scores, self.labels, 0.75) == 0.7
        assert calibrate_threshold(self.scores, self.labels, 0.5) == 0.8
        assert calibrate_threshold(self.scores, self.labels, 1.0) == 0.2
        assert calibrate_threshold(self.scores, self.labels, 0.01) == 0.9

    def test_exact_ratio_is_not_rounded_up(self):
        # 3/4 positives exactly: the 1e-12 guard keeps k at 3, not 4
        assert calibrate_threshold(self.scores, self.labels, 0.75) == 0.7

    def test_threshold_is_maximal(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 30))
            scores = np.round(rng.uniform(0, 1, n), 2)
            labels = np.zeros(n, dtype=np.int64)
            labels[rng.integers(0, n, max(1, n // 2))] = 1
            if labels.sum() == 0:
                labels[0] = 1
            target = float(rng.uniform(0.05, 1.0))
            thr = calibrate_threshold(scores, labels, target)
            pos = scores[labels == 1]
            assert np.mean(pos >= thr) >= target - 1e-12
            above = pos[pos > thr]
            if len(above):
                assert np.mean(pos >= above.min()) < target

    def test_validation(self):
        with pytest.raises(ValueError):
            calibrate_threshold(self.scores, self.labels, 0.0)
        with pytest.raises(ValueError):
            calibrate_threshold(self.scores, self.labels, 1.5)
        with pytest.raises(ValueError, match="no positive"):
            calibrate_threshold(np.array([0.5]), np.array([0]), 0.9)


def test_grading_class_weights_fixture():
    assert np.allclose(grading_class_weights(np.array([1, 1, 2])), [0.75, 0.75, 1.5])
    # already balanced grades keep unit weights
    assert np.allclose(grading_class_weights(np.array([1, 2, 3])), np.ones(3))


def head_training_data(seed=4, n=24):
    rng = np.random.default_rng(seed)
    member_probs = [rng.dirichlet(np.ones(2), size=(n, 7)) for _ in range(2)]
    feats = [np.stack([slide_features(m[i]) for i in range(n)]) for m in member_probs]
    y = (np.arange(n) % 2).astype(np.int64)
    return feats, y


class TestHeadEnsembles:
    def test_detection_defaults(self):
        feats, y = head_training_data()
        heads = train_detection_heads(feats, y, n_rounds=3)
        assert heads.task == "detection"
        assert len(heads.members) == 2
        params = heads.members[0].get_params()
        assert params["objective"] == "binary_logistic"
        assert params["max_depth"] == 5
        assert params["n_rounds"] == 3  # override wins

    def test_predict_averages_members(self):
        feats, y = head_training_data()
        heads = train_detection_heads(feats, y, n_rounds=4)
        got = heads.predict([feats[0][:5], feats[1][:5]])
        want = np.mean(
            [m.predict(f[:5]) for m, f in zip(heads.members, feats)], axis=0
        )
        assert np.array_equal(got, want)
        with pytest.raises(ValueError, match="per member"):
            heads.predict([feats[0][:5]])

    def test_length_heads(self):
        feats, _ = head_training_data(seed=5)
        y = np.linspace(0.0, 4.0, len(feats[0]))
        heads = train_length_heads(feats, y, n_rounds=40)
        assert heads.members[0].get_params()["objective"] == "squared_error"
        pred = heads.predict([f for f in feats])
        assert pred.shape == (len(y),)

    def test_grading_heads(self):
        feats, _ = head_training_data(seed=6)
        isup = (np.arange(len(feats[0])) % 5 + 1).astype(np.int64)
        heads = train_grading_heads(feats, isup, n_rounds=3)
        params = heads.members[0].get_params()
        assert params["objective"] == "softmax" and params["n_classes"] == 5
        probs = heads.predict([np.atleast_2d(f[0]) for f in feats])
        assert probs.shape == (1, 5)
        assert probs.sum() == pytest.approx(1.0)
        with pytest.raises(ValueError, match="ISUP 1..5"):
            train_grading_heads(feats, np.zeros(len(feats[0]), dtype=np.int64))

    def test_save_load_round_trip(self, tmp_path):
        feats, y = head_training_data(seed=7)
        heads = train_detection_heads(feats, y, n_rounds=5)
        heads.threshold = 0.375
        out = heads.save(tmp_path / "det")
        assert (out / "heads.json").exists()
        assert (out / "member_00.json").exists() and (out / "member_01.json").exists()
        back = HeadEnsemble.load(out)
        assert back.task == "detection"
        assert back.threshold == 0.375
        assert np.array_equal(back.predict(feats), heads.predict(feats))


@pytest.fixture(scope="module")
def heads():
    feats, y = head_training_data(seed=8)
    det = train_detection_heads(feats, y, n_rounds=10)
    length = train_length_heads(feats, np.full(len(y), -1.0), n_rounds=10)
    gfeats, _ = head_training_data(seed=9)
    gfeats = [np.pad(f, ((0, 0), (0, 65 - 33))) for f in gfeats]
    isup = (np.arange(len(y)) % 5 + 1).astype(np.int64)
    grading = train_grading_heads(gfeats, isup, n_rounds=5)
    det_f = [f[:1] for f in feats]
    grade_f = [f[:1] for f in gfeats]
    return det, length, grading, det_f, grade_f


class TestPredictSlide:
    def test_record_shape_and_length_clamp(self, heads):
        det, length, grading, det_f, grade_f = heads
        rec = predict_slide("s1", det_f, grade_f, det, length, grading, threshold=0.0)
        assert set(rec) == {
            "slide_id", "p_malignant", "length_mm", "grade", "grade_if_malignant",
        }
        assert rec["slide_id"] == "s1"
        assert rec["length_mm"] == 0.0  # negative regression output clamps
        assert rec["grade"] == rec["grade_if_malignant"] >= 1

    def test_grade_gated_by_threshold(self, heads):
        det, length, grading, det_f, grade_f = heads
        rec = predict_slide("s2", det_f, grade_f, det, length, grading, threshold=2.0)
        assert rec["grade"] == 0
        assert rec["grade_if_malignant"] >= 1

    def test_threshold_fallback(self, heads):
        det, length, grading, det_f, grade_f = heads
        with pytest.raises(ValueError, match="threshold"):
            predict_slide("s3", det_f, grade_f, det, length, grading)
        det.threshold = 0.0
        rec = predict_slide("s3", det_f, grade_f, det, length, grading)
        assert rec["grade"] == rec["grade_if_malignant"]


class TestAggregatePatient:
    def test_rollup(self):
        rows = [
            {"p_malignant": 0.2, "length_mm": 1.5, "grade": 0},
            {"p_malignant": 0.9, "length_mm": 2.0, "grade": 3},
            {"p_malignant": 0.4, "length_mm": 0.0, "grade": 1},
        ]
        got = aggregate_patient(rows)
        assert got == {"p_malignant": 0.9, "length_mm": 3.5, "grade": 3}

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="no slide"):
            aggregate_patient([])
