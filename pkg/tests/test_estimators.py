import itertools

import numpy as np
import pytest
from sklearn.base import clone

from eigenrec.estimators import (
    CoefficientRegressor,
    SignPatternClassifier,
    _rank_factorized,
    index_to_pattern,
    pattern_to_index,
    signs_to_pattern,
)


def brute_force_ranking(minus_probs):
    """Exhaustive oracle: all patterns scored by independent products."""
    n = len(minus_probs)
    scored = []
    for signs in itertools.product("+-", repeat=n):
        p = 1.0
        for prob, s in zip(minus_probs, signs):
            p *= prob if s == "-" else 1.0 - prob
        scored.append(("".join(signs), p))
    return sorted(scored, key=lambda t: (-t[1], t[0]))


class TestPatternCodec:
    def test_round_trip(self):
        for idx in range(16):
            assert pattern_to_index(index_to_pattern(idx, 4)) == idx

    def test_msb_is_first_coordinate(self):
        assert pattern_to_index("-+++") == 8
        assert index_to_pattern(1, 4) == "+++-"

    def test_signs_to_pattern_zero_is_plus(self):
        assert signs_to_pattern(np.array([0.5, -0.5, 0.0])) == "+-+"

    def test_bad_pattern_rejected(self):
        with pytest.raises(ValueError):
            pattern_to_index("+x")


class TestFactorizedRanking:
    def test_spec_example(self):
        # confidences 0.9 / 0.8 for '+': products .72, .18, .08, .02
        ranked = list(_rank_factorized(np.array([0.1, 0.2])))
        assert [p for p, _ in ranked] == ["++", "+-", "-+", "--"]
        assert [round(v, 10) for _, v in ranked] == [0.72, 0.18, 0.08, 0.02]

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_enumeration_oracle(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.uniform(0.01, 0.99, size=5)
        got = list(_rank_factorized(probs))
        want = brute_force_ranking(probs)
        assert [p for p, _ in got] == [p for p, _ in want]
        assert np.allclose([v for _, v in got], [v for _, v in want], rtol=1e-10)

    def test_tie_break_lexicographic(self):
        ranked = list(_rank_factorized(np.array([0.5, 0.5])))
        assert [p for p, _ in ranked] == ["++", "+-", "-+", "--"]

    def test_lazy_prefix(self):
        probs = np.random.default_rng(3).uniform(0.01, 0.99, 20)
        gen = _rank_factorized(probs)
        top = [next(gen) for _ in range(8)]
        assert len(top) == 8  # 2^20 patterns never materialized


class TestCoefficientRegressor:
    def test_fit_predict_shape_and_norm(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (80, 3))
        y = rng.uniform(-1, 1, (80, 3))
        reg = CoefficientRegressor(max_epochs=5, patience=5, seed=1).fit(x, y)
        out = reg.predict(x[:7])
        assert out.shape == (7, 3)
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_sklearn_clone_and_params(self):
        reg = CoefficientRegressor(learning_rate=5e-4, seed=3)
        cloned = clone(reg)
        assert cloned.get_params()["learning_rate"] == 5e-4
        cloned.set_params(batch_size=16)
        assert cloned.batch_size == 16

    def test_explicit_validation_set(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (60, 2))
        y = rng.uniform(-1, 1, (60, 2))
        reg = CoefficientRegressor(max_epochs=5, patience=5, seed=2)
        reg.fit(x[:50], y[:50], X_val=x[50:], y_val=y[50:])
        assert reg.report_.epochs_run >= 1

    def test_predict_before_fit_raises(self):
        with pytest.raises(Exception):
            CoefficientRegressor().predict(np.ones((2, 3)))

    def test_feature_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (40, 3))
        y = rng.uniform(-1, 1, (40, 3))
        reg = CoefficientRegressor(max_epochs=2, patience=2).fit(x, y)
        with pytest.raises(ValueError):
            reg.predict(np.ones((2, 5)))

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, (50, 2))
        y = rng.uniform(-1, 1, (50, 2))
        r1 = CoefficientRegressor(max_epochs=10, patience=10, seed=9).fit(x, y)
        r2 = CoefficientRegressor(max_epochs=10, patience=10, seed=9).fit(x, y)
        assert np.array_equal(r1.predict(x[:5]), r2.predict(x[:5]))


class TestSignPatternClassifier:
    @staticmethod
    def separable_data(n=400, seed=0):
        # sign of a linear probe of the input: easily learnable
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (n, 3))
        y = np.stack([x[:, 0] + 0.1 * x[:, 1], x[:, 2]], axis=1)
        return x, y

    def test_joint_head_learns(self):
        x, y = self.separable_data()
        clf = SignPatternClassifier(max_epochs=120, patience=120, seed=0).fit(x, y)
        assert clf.head_kind_ == "joint"
        preds = clf.predict(x)
        truth = [signs_to_pattern(row) for row in y]
        acc = np.mean([p == t for p, t in zip(preds, truth)])
        assert acc >= 0.9

    def test_probabilities_sum_to_one(self):
        x, y = self.separable_data(200, seed=1)
        clf = SignPatternClassifier(max_epochs=20, patience=20, seed=1).fit(x, y)
        probs = clf.predict_proba(x[:10])
        assert probs.shape == (10, 4)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-8)

    def test_joint_ranking_sorted(self):
        x, y = self.separable_data(200, seed=2)
        clf = SignPatternClassifier(max_epochs=20, patience=20, seed=2).fit(x, y)
        ranked = list(clf.rank_patterns(x[0]))
        vals = [v for _, v in ranked]
        assert vals == sorted(vals, reverse=True)
        assert abs(sum(vals) - 1.0) <= 1e-8

    def test_factorized_head_forced(self):
        x, y = self.separable_data(200, seed=3)
        clf = SignPatternClassifier(head="factorized", max_epochs=20, patience=20, seed=3)
        clf.fit(x, y)
        assert clf.head_kind_ == "factorized"
        ranked = list(clf.rank_patterns(x[0]))
        assert len(ranked) == 4
        vals = [v for _, v in ranked]
        assert vals == sorted(vals, reverse=True)

    def test_pattern_string_labels_accepted(self):
        x, y = self.separable_data(150, seed=4)
        labels = np.array([signs_to_pattern(row) for row in y])
        clf = SignPatternClassifier(max_epochs=10, patience=10, seed=4).fit(x, labels)
        assert clf.n_coefficients_ == 2

    def test_label_permutation_permutes_predictions(self):
        x, y = self.separable_data(300, seed=5)
        clf1 = SignPatternClassifier(max_epochs=60, patience=60, seed=5).fit(x, y)
        clf2 = SignPatternClassifier(max_epochs=60, patience=60, seed=5).fit(x, -y)
        p1 = clf1.predict(x[:40])
        p2 = clf2.predict(x[:40])
        flip = {"+": "-", "-": "+"}
        flipped = ["".join(flip[ch] for ch in p) for p in p2]
        agreement = np.mean([a == b for a, b in zip(p1, flipped)])
        assert agreement >= 0.9
