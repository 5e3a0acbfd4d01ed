"""
This module runs the per-round stump search over groups of features on
several threads of one process.

Groups are scanned concurrently, each thread writing only its own
result; the caller merges the group results after all of them finished,
using the (error, global index) order. The merged stump therefore does
not depend on the partition, the number of threads or the order in
which groups complete.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import boosting
from . import config
from . import error
from . import features

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True)
class ByType:
    """Partition scheme: one group per feature type."""


@dataclass(frozen=True)
class ByChunk:

    """
    Partition scheme: `k` contiguous groups of nearly equal size.

    Args:
        k (int): Number of groups.
    """

    k: int


@dataclass(frozen=True)
class FeaturePartition:

    """
    Disjoint contiguous feature ranges covering a global-index interval.

    Args:
        groups (tuple): Non-empty ``range`` objects in ascending order.
        scheme: The scheme the partition was built with.
    """

    groups: tuple
    scheme: object

    def sizes(self):
        """Return the number of features per group."""
        return [len(g) for g in self.groups]

    @property
    def start(self):
        return self.groups[0].start

    @property
    def stop(self):
        return self.groups[-1].stop


def partition(total, scheme, offset=0, window=config.WINDOW):
    """
    Split the features ``offset .. offset + total - 1`` into groups.

    Args:
        total (int): Number of features, at least 1.
        scheme (ByType or ByChunk): How to split.
        offset (int, optional): First global index. :class:`ByType`
            requires 0.
        window (int, optional): Window whose enumeration defines the type
            ranges.

    Returns:
        FeaturePartition: The groups. :class:`ByType` yields the type
        ranges in canonical order, cut at `total`; :class:`ByChunk` yields
        `k` ranges whose sizes differ by at most one, larger ones first.

    Raises:
        PartitionError: If `total` or `k` is out of range.
    """
    if total < 1:
        raise error.PartitionError(
            "Need at least one feature, got {}".format(total)
        )
    if isinstance(scheme, ByType):
        if offset != 0:
            raise error.PartitionError(
                "Type groups are only defined from global index 0"
            )
        fset = features.enumerate_features(window)
        if total > len(fset):
            raise error.PartitionError(
                "A {0}x{0} window has only {1} features, got {2}"
                .format(window, len(fset), total)
            )
        groups = tuple(fset.prefix(total).type_ranges().values())
    elif isinstance(scheme, ByChunk):
        if not 1 <= scheme.k <= total:
            raise error.PartitionError(
                "Chunk count must lie in 1..{}, got {}"
                .format(total, scheme.k)
            )
        size, extra = divmod(total, scheme.k)
        groups, start = [], offset
        for i in range(scheme.k):
            stop = start + size + (1 if i < extra else 0)
            groups.append(range(start, stop))
            start = stop
        groups = tuple(groups)
    else:
        raise error.PartitionError("Unknown scheme {!r}".format(scheme))
    return FeaturePartition(groups, scheme)


def parallel_best(partition, dataset, weights, worker_budget,
                  feature_set=None):
    """
    Return the best stump over all groups of a partition.

    Args:
        partition (FeaturePartition): The feature groups.
        dataset (Dataset): The training examples.
        weights (WeightVector): The round's weights.
        worker_budget (int): Maximum number of concurrent threads.
        feature_set (FeatureSet, optional): The enumeration in use.

    Returns:
        WeakClassifier: The minimum by (error, global index), identical
        to a sequential scan of the same features.

    Raises:
        HaarBoostError: The failure of the first failing group, by group
            order.
    """
    workers = max(1, min(worker_budget, len(partition.groups)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(boosting.best_over_range, group, dataset, weights,
                        feature_set)
            for group in partition.groups
        ]
        results = [future.result() for future in futures]
    return boosting.select_min(results)


class ParallelExecutor:

    """
    Keep per-group scanners and a thread pool for a whole training job.

    Groups are uploaded (evaluated and sorted) concurrently once; each
    round then scans all groups concurrently and merges the results after
    a barrier.

    Args:
        dataset (Dataset): The training examples.
        partition (FeaturePartition, optional): The groups; one group per
            feature type if the feature set is complete, otherwise
            `worker_budget` chunks.
        worker_budget (int, optional): Maximum number of threads.
        feature_set (FeatureSet, optional): The features to scan; the full
            enumeration by default.
    """

    def __init__(self, dataset, partition=None, worker_budget=None,
                 feature_set=None):
        full = features.enumerate_features(dataset.window)
        self.feature_set = feature_set or full
        self.worker_budget = worker_budget or config.WORKERS
        if partition is None:
            partition = default_partition(
                len(self.feature_set), self.worker_budget, dataset.window
            )
        self.partition = partition
        self.reduce_seconds = 0.0
        self._pool = ThreadPoolExecutor(
            max_workers=max(1, min(self.worker_budget,
                                   len(partition.groups))),
            thread_name_prefix="haarboost-scan",
        )
        start = time.perf_counter()
        try:
            futures = [
                self._pool.submit(boosting.StumpScanner, dataset,
                                  group.start, group.stop, self.feature_set)
                for group in partition.groups
            ]
            self.scanners = [future.result() for future in futures]
        except BaseException:
            self._pool.shutdown()
            raise
        self.upload_seconds = time.perf_counter() - start
        log.debug(
            "Uploaded {} groups {} on {} threads in {:.3f} s".format(
                len(partition.groups), partition.sizes(),
                self.worker_budget, self.upload_seconds,
            )
        )

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def select(self, weights):
        """
        Return the best stump over all groups for `weights`.

        Args:
            weights (WeightVector): The round's weights.

        Returns:
            WeakClassifier: The minimum by (error, global index).
        """
        futures = [self._pool.submit(scanner.best, weights)
                   for scanner in self.scanners]
        results = [future.result() for future in futures]
        start = time.perf_counter()
        best = boosting.select_min(results)
        self.reduce_seconds = time.perf_counter() - start
        return best

    def close(self):
        """Shut down the thread pool."""
        self._pool.shutdown()


def default_partition(total, worker_budget, window=config.WINDOW):
    """
    Return one group per type for the complete feature set, otherwise
    `worker_budget` balanced chunks.
    """
    if total == len(features.enumerate_features(window)):
        return partition(total, ByType(), window=window)
    return partition(total, ByChunk(min(worker_budget, total)))
