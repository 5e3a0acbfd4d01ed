import time

import psutil
import pytest

from haarboost import boosting
from haarboost import dataset
from haarboost import engine
from haarboost import error
from haarboost import features


def test_partition_by_type():
    partition = engine.partition(162336, engine.ByType())

    assert partition.sizes() == [27600, 27600, 43200, 43200, 20736]
    assert (partition.start, partition.stop) == (0, 162336)


@pytest.mark.parametrize("total, k, offset, sizes", [
    (43200, 5, 0, [8640] * 5),
    (10, 3, 0, [4, 3, 3]),
    (7, 7, 100, [1] * 7),
    (5, 1, 27600, [5]),
])
def test_partition_by_chunk(total, k, offset, sizes):
    partition = engine.partition(total, engine.ByChunk(k), offset=offset)

    assert partition.sizes() == sizes
    assert partition.start == offset
    assert partition.stop == offset + total
    for previous, current in zip(partition.groups, partition.groups[1:]):
        assert previous.stop == current.start


@pytest.mark.parametrize("total, scheme, offset", [
    (0, engine.ByChunk(1), 0),
    (10, engine.ByChunk(0), 0),
    (10, engine.ByChunk(11), 0),
    (10, engine.ByType(), 5),
    (162337, engine.ByType(), 0),
])
def test_invalid_partition(total, scheme, offset):
    with pytest.raises(error.PartitionError):
        engine.partition(total, scheme, offset=offset)


def test_default_partition():
    assert engine.default_partition(162336, 8).scheme == engine.ByType()
    assert engine.default_partition(1000, 8).sizes() == [125] * 8
    assert engine.default_partition(3, 8).sizes() == [1, 1, 1]


class TestParallelBest:

    @pytest.mark.parametrize("scheme", [
        engine.ByChunk(1), engine.ByChunk(4), engine.ByChunk(13),
    ])
    @pytest.mark.parametrize("budget", [1, 2, 8])
    def test_matches_sequential_scan(self, noise, scheme, budget):
        fset = features.enumerate_features(24).prefix(3000)
        weights = boosting.init_weights(noise.stats)
        expected = boosting.SequentialExecutor(noise, fset).select(weights)
        partition = engine.partition(3000, scheme)

        assert engine.parallel_best(partition, noise, weights, budget,
                                    fset) == expected

    def test_by_type_matches_sequential_scan(self, noise):
        fset = features.enumerate_features(24).prefix(60000)
        weights = boosting.init_weights(noise.stats)
        expected = boosting.SequentialExecutor(noise, fset).select(weights)
        partition = engine.partition(60000, engine.ByType())

        assert partition.sizes() == [27600, 27600, 4800]
        assert engine.parallel_best(partition, noise, weights, 3,
                                    fset) == expected


class TestParallelExecutor:

    @pytest.mark.parametrize("budget", [1, 2, 8])
    def test_model_equals_sequential(self, synth_medium, budget):
        fset = features.enumerate_features(24).prefix(10000)
        expected = boosting.train(
            synth_medium, 10, boosting.SequentialExecutor(synth_medium, fset)
        )
        with engine.ParallelExecutor(synth_medium, worker_budget=budget,
                                     feature_set=fset) as executor:
            model = boosting.train(synth_medium, 10, executor)

        assert model.to_dict() == expected.to_dict()

    def test_explicit_partition(self, noise):
        fset = features.enumerate_features(24).prefix(2000)
        partition = engine.partition(2000, engine.ByChunk(6))
        weights = boosting.init_weights(noise.stats)

        with engine.ParallelExecutor(noise, partition, 3, fset) as executor:
            assert len(executor.scanners) == 6
            assert executor.upload_seconds > 0
            assert executor.select(weights) == \
                boosting.SequentialExecutor(noise, fset).select(weights)


@pytest.mark.slow
@pytest.mark.skipif((psutil.cpu_count(logical=False) or 1) < 4,
                    reason="needs at least four physical cores")
def test_more_threads_shorten_the_round():
    data = dataset.synth(7, 200, 200)
    seconds = {}
    for budget in (1, 4):
        partition = engine.partition(162336, engine.ByChunk(budget))
        with engine.ParallelExecutor(data, partition, budget) as executor:
            weights = boosting.init_weights(data.stats)
            executor.select(weights)
            start = time.perf_counter()
            for _ in range(3):
                executor.select(weights)
            seconds[budget] = (time.perf_counter() - start) / 3

    assert seconds[1] >= 1.5 * seconds[4]
