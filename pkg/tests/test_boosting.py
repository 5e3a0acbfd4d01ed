import json
import math

import numpy as np
import pytest

from haarboost import boosting
from haarboost import dataset
from haarboost import error
from haarboost import features
from haarboost import imaging


class TestTrainStump:

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            values = rng.integers(-6, 7, 64)
            labels = rng.integers(0, 2, 64)
            labels[:2] = (1, 0)
            # dyadic weights make every partial sum exact
            weights = rng.integers(1, 17, 64) / 1024

            weak = boosting.train_stump(values, labels, weights)
            expected_error, expected_decisions = brute_force_stump(
                values, labels, weights
            )

            assert weak.error == expected_error
            assert weak.predict(values).tolist() == expected_decisions

    def test_separable_values(self):
        weak = boosting.train_stump([1, 3], [1, 0], [0.5, 0.5], 42)

        assert weak == boosting.WeakClassifier(42, 2.0, 1, 0.0)

    def test_inverted_polarity(self):
        weak = boosting.train_stump([1, 3], [0, 1], [0.5, 0.5])

        assert (weak.theta, weak.polarity, weak.error) == (2.0, -1, 0.0)
        assert weak.predict(3) == 1
        assert weak.predict(1) == 0

    def test_constant_values(self):
        weak = boosting.train_stump([5, 5, 5, 5], [1, 1, 1, 0],
                                    [0.25] * 4)

        assert weak.error == 0.25
        assert (weak.theta, weak.polarity) == (4.0, -1)
        assert weak.predict(np.array([5, 5])).tolist() == [1, 1]

    def test_tie_goes_to_the_smallest_threshold(self):
        weak = boosting.train_stump([1, 2, 3], [1, 1, 1], [1 / 3] * 3)

        assert (weak.theta, weak.polarity, weak.error) == (0.0, -1, 0.0)

    def test_needs_two_examples(self):
        with pytest.raises(ValueError):
            boosting.train_stump([1], [1], [1.0])


class TestScanner:

    def test_block_size_does_not_change_the_result(self, noise):
        fset = features.enumerate_features(24).prefix(3000)
        weights = boosting.normalize(
            boosting.WeightVector(np.linspace(1, 2, len(noise)))
        )
        reference = boosting.StumpScanner(noise, 0, 3000, fset).best(weights)

        for block in (1, 97, 3000):
            scanner = boosting.StumpScanner(noise, 0, 3000, fset, block=block)
            assert scanner.best(weights) == reference

    def test_range_result_equals_single_stumps(self, noise):
        fset = features.enumerate_features(24)
        weights = boosting.init_weights(noise.stats)
        start, stop = 50000, 50040
        candidates = [
            boosting.train_stump(noise.feature_values(fset[i]), noise.labels,
                                 weights, i)
            for i in range(start, stop)
        ]

        assert boosting.best_over_range(range(start, stop), noise, weights) \
            == boosting.select_min(candidates)

    def test_invalid_range(self, noise):
        with pytest.raises(ValueError):
            boosting.StumpScanner(noise, 10, 10)
        with pytest.raises(ValueError):
            boosting.StumpScanner(noise, 0, 162337)


def test_select_min_breaks_ties_by_index():
    a = boosting.WeakClassifier(7, 1.0, 1, 0.25)
    b = boosting.WeakClassifier(3, 2.0, -1, 0.25)
    c = boosting.WeakClassifier(1, 2.0, -1, 0.3)

    assert boosting.select_min([a, b, c]) is b


class TestWeights:

    def test_initial_weights(self, synth_small):
        weights = boosting.init_weights(synth_small.stats)

        assert weights.round == 1
        assert weights.w[0] == 1 / 100
        assert weights.w[-1] == 1 / 100
        assert math.fsum(weights.w) == 1.0

    def test_unequal_classes(self):
        weights = boosting.init_weights(dataset.DatasetStats(2, 4))

        assert weights.w.tolist() == [0.25, 0.25, 0.125, 0.125, 0.125, 0.125]

    def test_weight_collapse(self):
        with pytest.raises(error.WeightCollapseError) as excinfo:
            boosting.normalize(boosting.WeightVector(np.zeros(4), round=3))
        assert str(excinfo.value).startswith("round 3: weight collapse")

    def test_weak_learner_no_better_than_chance(self, synth_small):
        weights = boosting.init_weights(synth_small.stats)
        weak = boosting.WeakClassifier(0, 0.0, 1, 0.5)

        with pytest.raises(error.WeakLearnerError):
            boosting.update_weights(weights, weak, synth_small)

    def test_update_with_quarter_error(self, synth_small):
        weights = boosting.init_weights(synth_small.stats)
        fset = features.enumerate_features(24)
        values = synth_small.feature_values(fset[0])
        weak = boosting.WeakClassifier(0, float(np.median(values)), 1, 0.25)
        correct = weak.predict(values) == synth_small.labels

        updated = boosting.update_weights(weights, weak, synth_small)

        assert correct.any() and not correct.all()
        assert updated.round == 2
        assert updated.w[correct] == pytest.approx(weights.w[correct] / 3)
        assert np.array_equal(updated.w[~correct], weights.w[~correct])

    def test_weights_are_read_only(self):
        weights = boosting.WeightVector([0.5, 0.5])

        with pytest.raises(ValueError):
            weights.w[0] = 1.0

    @pytest.mark.parametrize("eps", [0.0, 1e-12, 0.5, 0.7])
    def test_clamp(self, eps):
        clamped = boosting.clamp(eps)

        assert 1e-10 <= clamped <= 0.5 - 1e-10
        assert math.isfinite(math.log(1 / boosting.beta_of(eps)))


class TestTrain:

    def test_block_layout_does_not_change_the_model(self, synth_small):
        fset = features.enumerate_features(24).prefix(5000)
        reference = boosting.train(
            synth_small, 5, boosting.SequentialExecutor(synth_small, fset)
        )
        blocked = boosting.train(
            synth_small, 5, BlockedExecutor(synth_small, fset, block=333)
        )

        assert blocked.to_dict() == reference.to_dict()

    def test_adaboost_identities(self, noise):
        fset = features.enumerate_features(24).prefix(2000)
        executor = boosting.SequentialExecutor(noise, fset)
        records = []
        weights = boosting.init_weights(noise.stats)

        for t in range(1, 9):
            weights = boosting.normalize(weights)
            weak = executor.select(weights)
            records.append(boosting.RoundRecord.from_weak(weak))
            weights = boosting.update_weights(weights, weak, noise)
            if weak.error > 1e-10:
                after = boosting.normalize(weights).w
                values = noise.feature_values(fset[weak.feature_index])
                wrong = weak.predict(values) != noise.labels
                assert math.fsum(after[wrong]) == pytest.approx(0.5,
                                                                abs=1e-9)

            sc = boosting.StrongClassifier(tuple(records))
            assert boosting.training_error(sc, noise) <= \
                boosting.error_bound(sc.rounds) + 1e-9

    def test_train_calls_back_every_round(self, synth_small):
        fset = features.enumerate_features(24).prefix(1000)
        calls = []
        sc = boosting.train(synth_small, 3,
                            boosting.SequentialExecutor(synth_small, fset),
                            callback=lambda r, t: calls.append((r, t)))

        assert [t.round for _, t in calls] == [1, 2, 3]
        assert [r for r, _ in calls] == list(sc.rounds)
        assert all(t.total >= 0 for _, t in calls)

    def test_separable_data_is_learned(self, synth_small):
        sc = boosting.train(synth_small, 5)

        assert boosting.training_error(sc, synth_small) == 0.0
        assert sc.rounds[0].weak.error < 0.05

    def test_training_error_does_not_grow(self, synth_medium):
        sc = boosting.train(synth_medium, 10)
        errors = [
            boosting.training_error(
                boosting.StrongClassifier(sc.rounds[:t]), synth_medium
            )
            for t in (1, 3, 5, 10)
        ]

        assert errors == sorted(errors, reverse=True)

    def test_zero_rounds(self, synth_small):
        with pytest.raises(ValueError):
            boosting.train(synth_small, 0)

    def test_failing_executor_reports_the_round(self, synth_small):
        class Failing:
            def select(self, weights):
                raise error.WeakLearnerError("no stump")

        with pytest.raises(error.WeakLearnerError) as excinfo:
            boosting.train(synth_small, 2, Failing())
        assert excinfo.value.round == 1


class TestStrongClassifier:

    @pytest.fixture(scope="class")
    def model(self, synth_small):
        fset = features.enumerate_features(24).prefix(20000)
        return boosting.train(synth_small, 4,
                              boosting.SequentialExecutor(synth_small, fset))

    def test_document_round_trip(self, model):
        document = json.loads(json.dumps(model.to_dict()))

        assert document["version"] == boosting.MODEL_VERSION
        assert boosting.StrongClassifier.from_dict(document) == model

    def test_classify_matches_predict(self, model, synth_small):
        decisions = [model.classify(ex.x) for ex in synth_small.examples]

        assert decisions == model.predict(synth_small).tolist()

    def test_single_round_matches_its_stump(self, model, synth_small):
        single = boosting.StrongClassifier(model.rounds[:1])
        weak = model.rounds[0].weak
        values = synth_small.feature_values(single.features()[0])

        assert single.predict(synth_small).tolist() == \
            weak.predict(values).tolist()

    def test_wrong_window_size(self, model):
        ii = imaging.integral_of(imaging.Image(np.zeros((24, 23))))

        with pytest.raises(error.ImageSizeError) as excinfo:
            model.classify(ii)
        assert "expected 24x24, got 23x24" in str(excinfo.value)

    def test_unsupported_version(self, model):
        document = model.to_dict()
        document["version"] = 99

        with pytest.raises(error.ModelFormatError):
            boosting.StrongClassifier.from_dict(document)

    def test_mismatched_descriptor(self, model):
        document = model.to_dict()
        document["rounds"][0]["feature"]["x"] += 1

        with pytest.raises(error.ModelFormatError):
            boosting.StrongClassifier.from_dict(document)

    def test_incomplete_document(self):
        with pytest.raises(error.ModelFormatError):
            boosting.StrongClassifier.from_dict({"version": 1})


class BlockedExecutor:

    """Sequential scan with a custom block size."""

    def __init__(self, dataset, feature_set, block):
        self.scanner = boosting.StumpScanner(dataset, 0, len(feature_set),
                                             feature_set, block=block)

    def select(self, weights):
        return self.scanner.best(weights)


def brute_force_stump(values, labels, weights):
    """
    Try every threshold between and around the distinct values, in
    ascending order, polarity +1 before -1.
    """
    distinct = sorted(set(values.tolist()))
    thresholds = [distinct[0] - 1.0]
    thresholds += [(a + b) / 2 for a, b in zip(distinct, distinct[1:])]
    thresholds.append(distinct[-1] + 1.0)

    best = None
    for theta in thresholds:
        for polarity in (1, -1):
            decisions = [int(polarity * v < polarity * theta)
                         for v in values.tolist()]
            err = sum(w for w, d, y in zip(weights, decisions, labels)
                      if d != y)
            if best is None or err < best[0]:
                best = (err, decisions)
    return best
