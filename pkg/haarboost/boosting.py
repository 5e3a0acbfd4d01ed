"""
This module provides weighted decision stumps, the AdaBoost round loop
and the strong classifier.

The sequential scan implemented here is the reference every parallel and
distributed strategy must reproduce bit for bit. Three rules make that
possible:

* Stumps are fit by one sort-and-scan routine that handles every feature
  independently of the others, so the result for a feature does not
  depend on which range or block it was scanned in.
* Class weight totals are exact sums (``math.fsum``) of the round's
  weights, identical on every node.
* Candidates are ranked by the total order (error, global index).
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import config
from . import error
from . import features

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

#: Version number written into model files.
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class WeightVector:

    """
    The example weights of one boosting round.

    Args:
        w (numpy.ndarray): float64 weights, one per example.
        round (int): The round the weights belong to.
    """

    w: np.ndarray
    round: int = 1

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return (self.round == other.round
                and np.array_equal(self.w, other.w))


@dataclass(frozen=True)
class WeakClassifier:

    """
    A decision stump on one feature.

    The stump outputs 1 if ``polarity * f(x) < polarity * theta``, 0
    otherwise.

    Args:
        feature_index (int): Global index of the feature.
        theta (float): The threshold.
        polarity (int): +1 or -1.
        error (float): Weighted training error.
    """

    feature_index: int
    theta: float
    polarity: int
    error: float

    def predict(self, values):
        """
        Apply the stump to feature values.

        Args:
            values: A feature value or an array of values.

        Returns:
            The 0/1 decision(s), int or numpy.ndarray of uint8.
        """
        if self.polarity == 1:
            decision = np.less(values, self.theta)
        else:
            decision = np.greater(values, self.theta)
        if np.ndim(decision) == 0:
            return int(decision)
        return decision.astype(np.uint8)

    def key(self):
        """Return the ranking key (error, feature_index)."""
        return (self.error, self.feature_index)


@dataclass(frozen=True)
class RoundRecord:

    """
    The outcome of one boosting round.

    Args:
        weak (WeakClassifier): The selected stump.
        beta (float): ``eps / (1 - eps)`` of the clamped error.
        alpha (float): ``log(1 / beta)``, the vote weight.
    """

    weak: WeakClassifier
    beta: float
    alpha: float

    @classmethod
    def from_weak(cls, weak):
        beta = beta_of(weak.error)
        return cls(weak, beta, math.log(1.0 / beta))


@dataclass(frozen=True)
class RoundTiming:

    """
    Wall-clock seconds spent in the phases of one round.
    """

    round: int
    normalize: float
    scan: float
    reduce: float
    update: float

    @property
    def total(self):
        return self.normalize + self.scan + self.reduce + self.update


@dataclass(frozen=True)
class StrongClassifier:

    """
    The weighted vote of the selected stumps.

    Args:
        rounds (tuple): The :class:`RoundRecord` of every round, in order.
        window (int): Side length of the classified windows.
    """

    rounds: tuple
    window: int = config.WINDOW

    @property
    def threshold(self):
        """float: Half the sum of all vote weights."""
        return 0.5 * sum(r.alpha for r in self.rounds)

    def features(self):
        """Return the :class:`HaarFeature` of every round."""
        fset = features.enumerate_features(self.window)
        return [fset[r.weak.feature_index] for r in self.rounds]

    def classify(self, ii):
        """Classify one integral image, see :func:`classify`."""
        return classify(self, ii)

    def predict(self, dataset):
        """
        Classify every example of a dataset.

        Returns:
            numpy.ndarray: 0/1 decisions, one per example.
        """
        votes = np.zeros(len(dataset))
        for record, feature in zip(self.rounds, self.features()):
            values = dataset.feature_values(feature)
            votes += record.alpha * record.weak.predict(values)
        return (votes >= self.threshold).astype(np.uint8)

    def to_dict(self):
        """Return the model document written to model files."""
        return {
            "version": MODEL_VERSION,
            "window": self.window,
            "rounds": [
                {
                    "feature": feature.to_dict(),
                    "theta": r.weak.theta,
                    "polarity": r.weak.polarity,
                    "error": r.weak.error,
                    "beta": r.beta,
                    "alpha": r.alpha,
                }
                for r, feature in zip(self.rounds, self.features())
            ],
        }

    @classmethod
    def from_dict(cls, data):
        """
        Create a classifier from a model document.

        Raises:
            ModelFormatError: If the document is incomplete or its
                feature descriptors disagree with the enumeration.
        """
        try:
            if data["version"] != MODEL_VERSION:
                raise error.ModelFormatError(
                    "Unsupported model version {!r}".format(data["version"])
                )
            window = int(data["window"])
            fset = features.enumerate_features(window)
            rounds = []
            for entry in data["rounds"]:
                feature = features.HaarFeature.from_dict(entry["feature"])
                if fset[feature.global_index] != feature:
                    raise error.ModelFormatError(
                        "Feature descriptor {} does not match global index "
                        "{}".format(entry["feature"], feature.global_index)
                    )
                weak = WeakClassifier(
                    feature.global_index, float(entry["theta"]),
                    int(entry["polarity"]), float(entry["error"]),
                )
                rounds.append(RoundRecord(
                    weak, float(entry["beta"]), float(entry["alpha"])
                ))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise error.ModelFormatError("Invalid model document: {}"
                                         .format(e))
        return cls(tuple(rounds), window)


def clamp(eps):
    """Clamp a weighted error into [EPSILON_CLAMP, 0.5 - EPSILON_CLAMP]."""
    low = config.EPSILON_CLAMP
    return min(max(eps, low), 0.5 - low)


def beta_of(eps):
    """Return beta = eps / (1 - eps) of the clamped error."""
    eps = clamp(eps)
    return eps / (1.0 - eps)


def init_weights(stats):
    """
    Return the first-round weights.

    Positives come first in every dataset, so the counts are enough to
    place the weights.

    Args:
        stats (DatasetStats): The class counts.

    Returns:
        WeightVector: 1/(2l) for each positive, 1/(2m) for each negative.
    """
    w = np.r_[np.full(stats.l, 1.0 / (2 * stats.l)),
              np.full(stats.m, 1.0 / (2 * stats.m))]
    return WeightVector(w, round=1)


def normalize(weights):
    """
    Scale the weights to sum to one.

    Args:
        weights (WeightVector): Positive weights.

    Returns:
        WeightVector: The normalized weights of the same round.

    Raises:
        WeightCollapseError: If the total is zero or not finite.
    """
    total = math.fsum(weights.w)
    if not total > 0.0 or not math.isfinite(total):
        raise error.WeightCollapseError(
            "weight collapse: total weight is {!r}".format(total),
            weights.round,
        )
    return WeightVector(weights.w / total, weights.round)


def class_totals(weights, labels):
    """Return the exact weight totals (positives, negatives)."""
    positives = labels == 1
    return math.fsum(weights[positives]), math.fsum(weights[~positives])


def _scan(order, labels_sorted, valid, weights, totals):
    """
    Find the best threshold position and polarity of many features.

    Args:
        order (numpy.ndarray): Per feature, example indices sorted by
            feature value, shape (features, n).
        labels_sorted (numpy.ndarray): Positive mask in that order.
        valid (numpy.ndarray): Candidate positions 0..n, shape
            (features, n + 1); position k puts the first k sorted
            examples below the threshold.
        weights (numpy.ndarray): The example weights.
        totals (tuple): Exact class totals, see :func:`class_totals`.

    Returns:
        tuple: Arrays ``(position, polarity, error)``, one entry per
        feature. Ties go to the smallest position, then polarity +1.
    """
    tpos, tneg = totals
    count, n = order.shape
    ws = weights[order]
    pos = np.where(labels_sorted, ws, 0.0)
    neg = ws - pos

    below_pos = np.zeros((count, n + 1))
    below_neg = np.zeros((count, n + 1))
    np.cumsum(pos, axis=1, out=below_pos[:, 1:])
    np.cumsum(neg, axis=1, out=below_neg[:, 1:])

    errors = np.empty((count, n + 1, 2))
    # polarity +1: positives predicted below the threshold
    errors[:, :, 0] = below_neg + (tpos - below_pos)
    errors[:, :, 1] = below_pos + (tneg - below_neg)
    errors[~valid] = np.inf

    flat = errors.reshape(count, 2 * (n + 1))
    best = flat.argmin(axis=1)
    polarity = np.where(best % 2 == 0, 1, -1)
    return best // 2, polarity, flat[np.arange(count), best]


def _sort(values):
    """Sort feature values; return order and candidate-position mask."""
    order = np.argsort(values, axis=1, kind="stable")
    ordered = np.take_along_axis(values, order, axis=1)
    count, n = values.shape
    valid = np.ones((count, n + 1), dtype=bool)
    valid[:, 1:n] = ordered[:, :-1] < ordered[:, 1:]
    return order, valid


def threshold_at(values, position):
    """
    Return the threshold of a candidate position.

    Args:
        values (numpy.ndarray): The feature values of all examples.
        position (int): Number of sorted examples below the threshold.

    Returns:
        float: The midpoint between the neighbouring distinct values,
        or one below the minimum / above the maximum at the ends.
    """
    ordered = np.sort(values)
    if position == 0:
        return float(ordered[0]) - 1.0
    if position == ordered.size:
        return float(ordered[-1]) + 1.0
    return (float(ordered[position - 1]) + float(ordered[position])) / 2.0


def train_stump(feature_values, labels, weights, feature_index=0):
    """
    Fit the stump with minimal weighted error on one feature.

    Args:
        feature_values: Feature value of every example.
        labels: 0/1 label of every example; both labels must occur.
        weights (WeightVector): The example weights.
        feature_index (int, optional): Index stored in the result.

    Returns:
        WeakClassifier: The best stump. Ties go to the smallest threshold,
        then polarity +1. If all values are equal the better constant
        classifier is returned.
    """
    values = np.asarray(feature_values).reshape(1, -1)
    labels = np.asarray(labels, dtype=np.uint8)
    if values.shape[1] < 2 or labels.size != values.shape[1]:
        raise ValueError("Need at least two examples with one label each")
    w = weights.w if isinstance(weights, WeightVector) else np.asarray(
        weights, dtype=np.float64
    )
    order, valid = _sort(values)
    labels_sorted = labels[order] == 1
    position, polarity, err = _scan(
        order, labels_sorted, valid, w, class_totals(w, labels)
    )
    return WeakClassifier(
        feature_index, threshold_at(values[0], int(position[0])),
        int(polarity[0]), float(err[0]),
    )


class StumpScanner:

    """
    Fit stumps for a contiguous range of features, round after round.

    The feature values do not change between rounds, so each feature is
    evaluated and sorted once when the scanner is built ("uploaded");
    every call of :meth:`best` only gathers the round's weights in the
    stored order and scans.

    Args:
        dataset (Dataset): The training examples.
        start (int): First global feature index.
        stop (int): One past the last global feature index.
        feature_set (FeatureSet, optional): The enumeration the indices refer
            to; the full enumeration of the dataset window by default.
        block (int, optional): Features per vectorized block.
    """

    def __init__(self, dataset, start, stop, feature_set=None, block=None):
        if feature_set is None:
            feature_set = _features_of(dataset)
        if not 0 <= start < stop <= len(feature_set):
            raise ValueError(
                "Invalid feature range [{}, {}) of {} features"
                .format(start, stop, len(feature_set))
            )
        self.dataset = dataset
        self.feature_set = feature_set
        self.start = start
        self.stop = stop
        self.block = block or config.BLOCK_SIZE
        self.upload_seconds = 0.0
        self._blocks = []
        self._upload()

    def __len__(self):
        return self.stop - self.start

    def _upload(self):
        begin = time.perf_counter()
        index_type = np.uint16 if len(self.dataset) <= 0xffff else np.int32
        positives = self.dataset.positives
        for lo in range(self.start, self.stop, self.block):
            hi = min(lo + self.block, self.stop)
            corners, coeffs = features.corner_table(self.feature_set, lo, hi)
            values = features.evaluate_batch(corners, coeffs,
                                             self.dataset.table)
            order, valid = _sort(values)
            self._blocks.append((
                lo, order.astype(index_type), positives[order], valid,
            ))
        self.upload_seconds = time.perf_counter() - begin
        log.debug(
            "Uploaded features [{}, {}) in {:.3f} s"
            .format(self.start, self.stop, self.upload_seconds)
        )

    def best(self, weights):
        """
        Return the best stump of the range.

        Args:
            weights (WeightVector): The round's weights.

        Returns:
            WeakClassifier: The minimum by (error, global index).
        """
        w = weights.w
        totals = class_totals(w, self.dataset.labels)
        best = None
        for lo, order, labels_sorted, valid in self._blocks:
            position, polarity, err = _scan(
                order, labels_sorted, valid, w, totals
            )
            i = int(err.argmin())
            if best is None or err[i] < best[0]:
                best = (float(err[i]), lo + i, int(position[i]),
                        int(polarity[i]))
        err, index, position, polarity = best
        values = self.dataset.feature_values(self.feature_set[index])
        return WeakClassifier(index, threshold_at(values, position),
                              polarity, err)


def _features_of(dataset):
    return features.enumerate_features(dataset.window)


def best_over_range(feature_range, dataset, weights, feature_set=None):
    """
    Return the best stump of a contiguous feature range.

    Args:
        feature_range (range): Global feature indices, step 1, non-empty.
        dataset (Dataset): The training examples.
        weights (WeightVector): The round's weights.
        feature_set (FeatureSet, optional): The enumeration in use.

    Returns:
        WeakClassifier: The minimum by (error, global index).
    """
    scanner = StumpScanner(dataset, feature_range.start, feature_range.stop,
                           feature_set=feature_set)
    return scanner.best(weights)


def select_min(candidates):
    """Return the candidate stump with the smallest (error, index) key."""
    return min(candidates, key=WeakClassifier.key)


class SequentialExecutor:

    """
    Scan all features in the calling thread.

    Args:
        dataset (Dataset): The training examples.
        feature_set (FeatureSet, optional): The features to scan; the full
            enumeration by default.
    """

    def __init__(self, dataset, feature_set=None):
        feature_set = feature_set or _features_of(dataset)
        self.scanner = StumpScanner(dataset, 0, len(feature_set),
                                    feature_set=feature_set)
        self.upload_seconds = self.scanner.upload_seconds
        self.reduce_seconds = 0.0

    def select(self, weights):
        """Return the best stump over all features for `weights`."""
        return self.scanner.best(weights)

    def close(self):
        pass


def update_weights(weights, weak, dataset):
    """
    Scale down the weights of the correctly classified examples.

    Args:
        weights (WeightVector): The normalized weights of round t.
        weak (WeakClassifier): The stump selected in round t.
        dataset (Dataset): The training examples.

    Returns:
        WeightVector: The unnormalized weights of round t + 1,
        ``w * beta ** (1 - e)`` with e = 0 for correct examples.

    Raises:
        WeakLearnerError: If the stump's error is not below 0.5.
    """
    if not weak.error < 0.5:
        raise error.WeakLearnerError(
            "weak learner no better than chance (error {!r})"
            .format(weak.error), weights.round,
        )
    fset = features.enumerate_features(dataset.window)
    values = dataset.feature_values(fset[weak.feature_index])
    correct = weak.predict(values) == dataset.labels
    beta = beta_of(weak.error)
    w = np.where(correct, weights.w * beta, weights.w)
    return WeightVector(w, weights.round + 1)


def train(dataset, rounds, executor=None, callback=None):
    """
    Run AdaBoost for a number of rounds.

    Each round normalizes the weights, asks the executor for the best
    stump, records beta and alpha, and updates the weights.

    Args:
        dataset (Dataset): The training examples.
        rounds (int): Number of rounds T, at least 1.
        executor (optional): Object with a ``select(weights)`` method
            returning the best :class:`WeakClassifier`; a
            :class:`SequentialExecutor` by default.
        callback (callable, optional): Called after every round with the
            :class:`RoundRecord` and its :class:`RoundTiming`.

    Returns:
        StrongClassifier: The trained classifier.

    Raises:
        HaarBoostError: Executor and weak-learner failures, with the
            failing round stored in their ``round`` attribute.
    """
    if rounds < 1:
        raise ValueError("Need at least one round, got {}".format(rounds))
    executor = executor or SequentialExecutor(dataset)
    weights = init_weights(dataset.stats)
    records = []
    for t in range(1, rounds + 1):
        try:
            start = time.perf_counter()
            weights = normalize(weights)
            normalized = time.perf_counter()
            weak = executor.select(weights)
            selected = time.perf_counter()
            record = RoundRecord.from_weak(weak)
            weights = update_weights(weights, weak, dataset)
            updated = time.perf_counter()
        except error.HaarBoostError as e:
            if getattr(e, "round", None) is None:
                e.round = t
            raise
        records.append(record)
        reduce = getattr(executor, "reduce_seconds", 0.0)
        timing = RoundTiming(
            round=t,
            normalize=normalized - start,
            scan=max(selected - normalized - reduce, 0.0),
            reduce=reduce,
            update=updated - selected,
        )
        log.debug(
            "Round {} selected feature {}, error={!r}, alpha={!r}"
            .format(t, weak.feature_index, weak.error, record.alpha)
        )
        if callback is not None:
            callback(record, timing)
    return StrongClassifier(tuple(records), dataset.window)


def classify(sc, ii):
    """
    Classify an integral image with a strong classifier.

    Args:
        sc (StrongClassifier): The classifier.
        ii (IntegralImage): The window to classify.

    Returns:
        int: 1 if the alpha-weighted vote reaches half the total alpha,
        0 otherwise.

    Raises:
        ImageSizeError: If the window has the wrong size.
    """
    if (ii.width, ii.height) != (sc.window, sc.window):
        raise error.ImageSizeError(
            "expected {0}x{0}, got {1}x{2}"
            .format(sc.window, ii.width, ii.height)
        )
    vote = 0.0
    for record, feature in zip(sc.rounds, sc.features()):
        vote += record.alpha * record.weak.predict(
            features.evaluate(feature, ii)
        )
    return 1 if vote >= sc.threshold else 0


def training_error(sc, dataset):
    """Return the fraction of misclassified training examples."""
    return float(np.mean(sc.predict(dataset) != dataset.labels))


def error_bound(rounds):
    """
    Return the product of ``2 * sqrt(eps * (1 - eps))`` over the rounds.

    With equal class counts this bounds the training error of the strong
    classifier.
    """
    return math.prod(2.0 * math.sqrt(r.weak.error * (1.0 - r.weak.error))
                     for r in rounds)
