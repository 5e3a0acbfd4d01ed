import itertools

import numpy as np
import pytest

from haarboost import error
from haarboost import features
from haarboost import imaging
from haarboost.features import FeatureType


EXPECTED_COUNTS = {
    FeatureType.THREE_RECT_HORIZONTAL: 27600,
    FeatureType.THREE_RECT_VERTICAL: 27600,
    FeatureType.TWO_RECT_HORIZONTAL: 43200,
    FeatureType.TWO_RECT_VERTICAL: 43200,
    FeatureType.FOUR_RECT: 20736,
}


def test_feature_census():
    fset = features.enumerate_features(24)

    assert len(fset) == 162336
    assert features.counts(24) == EXPECTED_COUNTS
    assert {t: len(r) for t, r in fset.type_ranges().items()} == \
        EXPECTED_COUNTS


def test_type_ranges_follow_canonical_order():
    ranges = list(features.enumerate_features(24).type_ranges().items())

    assert [t for t, _ in ranges] == list(features.TYPES)
    assert ranges[0][1].start == 0
    for (_, previous), (_, current) in zip(ranges, ranges[1:]):
        assert previous.stop == current.start


@pytest.mark.parametrize("window", [3, 4, 5, 8])
def test_enumeration_matches_nested_loops(window):
    fset = features.enumerate_features(window)
    expected = list(nested_loop_features(window))

    assert len(fset) == len(expected)
    assert sum(features.counts(window).values()) == len(expected)
    for feature, (ftype, x, y, w, h) in zip(fset, expected):
        assert feature.ftype is ftype
        assert feature.bounds == imaging.Rect(x, y, w, h)


def test_global_index_is_position():
    fset = features.enumerate_features(24)

    for index in (0, 1, 27599, 27600, 55200, 162335):
        assert fset[index].global_index == index
    assert fset[-1].global_index == 162335
    with pytest.raises(IndexError):
        fset[162336]


def test_features_fit_into_the_window():
    fset = features.enumerate_features(24)

    assert (fset.x >= 0).all() and (fset.y >= 0).all()
    assert (fset.x + fset.w <= 24).all()
    assert (fset.y + fset.h <= 24).all()


def test_prefix_keeps_global_indices():
    fset = features.enumerate_features(24)
    prefix = fset.prefix(30000)

    assert len(prefix) == 30000
    assert prefix[29999] == fset[29999]
    assert list(prefix.type_ranges().values()) == [
        range(0, 27600), range(27600, 30000)
    ]
    with pytest.raises(ValueError):
        fset.prefix(0)


def test_invalid_window():
    with pytest.raises(ValueError):
        features.enumerate_features(2)


class TestEvaluate:

    def test_matches_pixel_sums(self):
        rng = np.random.default_rng(2)
        pixels = rng.integers(0, 256, (24, 24))
        ii = imaging.integral_of(imaging.Image.from_array(pixels))
        fset = features.enumerate_features(24)

        for index in rng.integers(0, len(fset), 300):
            feature = fset[int(index)]
            assert features.evaluate(feature, ii) == \
                brute_value(pixels, feature)

    @pytest.mark.parametrize("ftype, dark", [
        (FeatureType.TWO_RECT_HORIZONTAL, (slice(0, 4), slice(2, 4))),
        (FeatureType.TWO_RECT_VERTICAL, (slice(2, 4), slice(0, 4))),
        (FeatureType.THREE_RECT_HORIZONTAL, (slice(0, 6), slice(2, 4))),
        (FeatureType.THREE_RECT_VERTICAL, (slice(2, 4), slice(0, 6))),
    ])
    def test_shading(self, ftype, dark):
        pixels = np.zeros((24, 24), dtype=np.uint8)
        pixels[dark] = 10
        ii = imaging.integral_of(imaging.Image(pixels))
        width = 6 if ftype is FeatureType.THREE_RECT_HORIZONTAL else 4
        height = 6 if ftype is FeatureType.THREE_RECT_VERTICAL else 4
        feature = features.HaarFeature(ftype, imaging.Rect(0, 0, width,
                                                           height), 0)

        assert features.evaluate(feature, ii) == 10 * 8

    def test_four_rect_shading(self):
        pixels = np.zeros((24, 24), dtype=np.uint8)
        pixels[:2, :2] = 10
        pixels[2:4, 2:4] = 10
        ii = imaging.integral_of(imaging.Image(pixels))
        feature = features.HaarFeature(FeatureType.FOUR_RECT,
                                       imaging.Rect(0, 0, 4, 4), 0)

        assert features.evaluate(feature, ii) == 80

    def test_feature_outside_image(self):
        ii = imaging.integral_of(imaging.Image(np.zeros((12, 12))))
        feature = features.enumerate_features(24)[-1]

        with pytest.raises(error.BoundsError):
            features.evaluate(feature, ii)

    def test_batch_matches_single_evaluation(self, synth_small):
        fset = features.enumerate_features(24)
        rng = np.random.default_rng(3)
        table = synth_small.table
        examples = synth_small.examples

        for start in rng.integers(0, len(fset) - 50, 5):
            start = int(start)
            corners, coeffs = features.corner_table(fset, start, start + 50)
            values = features.evaluate_batch(corners, coeffs, table)
            for index in range(start, start + 50, 7):
                offset = index - start
                expected = [features.evaluate(fset[index], ex.x)
                            for ex in examples[:10]]
                assert values[offset, :10].tolist() == expected


class TestDescriptor:

    def test_to_dict(self):
        feature = features.enumerate_features(24)[27600]

        assert feature.to_dict() == {
            "ftype": "ThreeRectVertical", "x": 0, "y": 0, "w": 1, "h": 3,
            "global_index": 27600,
        }
        assert features.HaarFeature.from_dict(feature.to_dict()) == feature

    def test_invalid_extent(self):
        with pytest.raises(ValueError):
            features.HaarFeature.from_dict({
                "ftype": "TwoRectHorizontal", "x": 0, "y": 0, "w": 3,
                "h": 2, "global_index": 0,
            })

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            FeatureType.from_label("FiveRect")


def nested_loop_features(window):
    """Enumerate features in canonical order with plain loops."""
    grids = [
        (FeatureType.THREE_RECT_HORIZONTAL, 3, 1),
        (FeatureType.THREE_RECT_VERTICAL, 1, 3),
        (FeatureType.TWO_RECT_HORIZONTAL, 2, 1),
        (FeatureType.TWO_RECT_VERTICAL, 1, 2),
        (FeatureType.FOUR_RECT, 2, 2),
    ]
    for ftype, cols, rows in grids:
        for h in range(1, window + 1):
            if h % rows:
                continue
            for w in range(1, window + 1):
                if w % cols:
                    continue
                for y, x in itertools.product(range(window - h + 1),
                                              range(window - w + 1)):
                    yield ftype, x, y, w, h


def brute_value(pixels, feature):
    """Dark-cell pixel sum minus white-cell pixel sum."""
    ftype, b = feature.ftype, feature.bounds
    cw, ch = b.w // ftype.cols, b.h // ftype.rows
    dark = {
        FeatureType.THREE_RECT_HORIZONTAL: lambda col, row: col == 1,
        FeatureType.THREE_RECT_VERTICAL: lambda col, row: row == 1,
        FeatureType.TWO_RECT_HORIZONTAL: lambda col, row: col == 1,
        FeatureType.TWO_RECT_VERTICAL: lambda col, row: row == 1,
        FeatureType.FOUR_RECT: lambda col, row: col == row,
    }[ftype]
    total = 0
    for y in range(b.y, b.y + b.h):
        for x in range(b.x, b.x + b.w):
            col, row = (x - b.x) // cw, (y - b.y) // ch
            sign = 1 if dark(col, row) else -1
            total += sign * int(pixels[y, x])
    return total
