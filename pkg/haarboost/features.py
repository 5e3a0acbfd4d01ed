"""
This module enumerates the five Haar rectangle feature types over a
square window and evaluates features on integral images.

Features are listed in one canonical order: by type (three rectangles
horizontal, three rectangles vertical, two rectangles horizontal, two
rectangles vertical, four rectangles), then by ascending (h, w, y, x) of
the feature extent. The position of a feature in that order is its
global index, which is the same in every process.
"""

import enum
import functools
from dataclasses import dataclass

import numpy as np

from . import config
from . import error
from . import imaging


class FeatureType(enum.Enum):

    """
    The five rectangle feature types.

    Each value is ``(name, cols, rows, signs)``: the feature extent is
    split into a grid of ``cols`` x ``rows`` equal cells, and ``signs``
    holds +1 for dark cells and -1 for white cells, row by row.
    """

    THREE_RECT_HORIZONTAL = ("ThreeRectHorizontal", 3, 1, ((-1, 1, -1),))
    THREE_RECT_VERTICAL = ("ThreeRectVertical", 1, 3, ((-1,), (1,), (-1,)))
    TWO_RECT_HORIZONTAL = ("TwoRectHorizontal", 2, 1, ((-1, 1),))
    TWO_RECT_VERTICAL = ("TwoRectVertical", 1, 2, ((-1,), (1,)))
    FOUR_RECT = ("FourRect", 2, 2, ((1, -1), (-1, 1)))

    def __init__(self, label, cols, rows, signs):
        self.label = label
        self.cols = cols
        self.rows = rows
        self.signs = signs

    @classmethod
    def from_label(cls, label):
        """Return the feature type with the given serialized name."""
        for ftype in cls:
            if ftype.label == label:
                return ftype
        raise ValueError("Unknown feature type {!r}".format(label))


#: Feature types in canonical enumeration order.
TYPES = tuple(FeatureType)


@dataclass(frozen=True)
class HaarFeature:

    """
    A typed rectangle feature at a fixed position and scale.

    Args:
        ftype (FeatureType): The feature type.
        bounds (Rect): The extent of the whole feature.
        global_index (int): Position in the canonical enumeration.
    """

    ftype: FeatureType
    bounds: imaging.Rect
    global_index: int

    def cells(self):
        """
        Return the cells of the feature.

        Returns:
            list: ``(Rect, sign)`` pairs, sign +1 for dark cells and -1
            for white cells.
        """
        ftype, b = self.ftype, self.bounds
        cw, ch = b.w // ftype.cols, b.h // ftype.rows
        return [
            (imaging.Rect(b.x + col * cw, b.y + row * ch, cw, ch), sign)
            for row, signs in enumerate(ftype.signs)
            for col, sign in enumerate(signs)
        ]

    def to_dict(self):
        """Return the feature descriptor as stored in model files."""
        b = self.bounds
        return {
            "ftype": self.ftype.label,
            "x": b.x,
            "y": b.y,
            "w": b.w,
            "h": b.h,
            "global_index": self.global_index,
        }

    @classmethod
    def from_dict(cls, data):
        """Create a feature from a descriptor written by :meth:`to_dict`."""
        ftype = FeatureType.from_label(data["ftype"])
        bounds = imaging.Rect(
            int(data["x"]), int(data["y"]), int(data["w"]), int(data["h"])
        )
        if bounds.w % ftype.cols or bounds.h % ftype.rows:
            raise ValueError(
                "Extent {}x{} is not a multiple of the {} cell grid"
                .format(bounds.w, bounds.h, ftype.label)
            )
        return cls(ftype, bounds, int(data["global_index"]))


class FeatureSet:

    """
    The canonical feature enumeration of a window, stored column-wise.

    Instances behave like an immutable sequence of :class:`HaarFeature`.
    Use :func:`enumerate_features` to obtain one.

    Args:
        window (int): The window side length.
        codes (numpy.ndarray): Index into :data:`TYPES` per feature.
        x, y, w, h (numpy.ndarray): Feature extents.
    """

    def __init__(self, window, codes, x, y, w, h):
        self.window = window
        self.codes = codes
        self.x = x
        self.y = y
        self.w = w
        self.h = h
        for array in (codes, x, y, w, h):
            array.setflags(write=False)

    def __len__(self):
        return len(self.codes)

    def __getitem__(self, index):
        if not -len(self) <= index < len(self):
            raise IndexError("feature index out of range")
        index %= len(self)
        bounds = imaging.Rect(
            int(self.x[index]), int(self.y[index]),
            int(self.w[index]), int(self.h[index]),
        )
        return HaarFeature(TYPES[self.codes[index]], bounds, index)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def prefix(self, count):
        """
        Return the first `count` features.

        Args:
            count (int): Number of leading features to keep.

        Returns:
            FeatureSet: The restricted set; global indices are unchanged.
        """
        if not 1 <= count <= len(self):
            raise ValueError(
                "Feature prefix must lie in 1..{}, got {}"
                .format(len(self), count)
            )
        return FeatureSet(
            self.window, self.codes[:count], self.x[:count],
            self.y[:count], self.w[:count], self.h[:count],
        )

    def type_ranges(self):
        """
        Return the contiguous global-index range of every feature type.

        Returns:
            dict: Maps each present :class:`FeatureType` to a ``range``,
            in canonical order.
        """
        ranges = {}
        for code, ftype in enumerate(TYPES):
            hits = np.flatnonzero(self.codes == code)
            if hits.size:
                ranges[ftype] = range(int(hits[0]), int(hits[-1]) + 1)
        return ranges


@functools.lru_cache(maxsize=None)
def enumerate_features(window=config.WINDOW):
    """
    Enumerate all features of a square window in canonical order.

    Args:
        window (int): The window side length, at least 3.

    Returns:
        FeatureSet: The features; the global index of each feature is its
        position in the set.
    """
    if window < 3:
        raise ValueError("Window must be at least 3 pixels, got {}"
                         .format(window))
    columns = {name: [] for name in ("codes", "x", "y", "w", "h")}
    for code, ftype in enumerate(TYPES):
        for h in range(ftype.rows, window + 1, ftype.rows):
            for w in range(ftype.cols, window + 1, ftype.cols):
                ys, xs = np.meshgrid(
                    np.arange(window - h + 1), np.arange(window - w + 1),
                    indexing="ij",
                )
                count = ys.size
                columns["codes"].append(np.full(count, code))
                columns["x"].append(xs.ravel())
                columns["y"].append(ys.ravel())
                columns["w"].append(np.full(count, w))
                columns["h"].append(np.full(count, h))
    arrays = {
        name: np.concatenate(parts).astype(np.int8 if name == "codes"
                                           else np.int32)
        for name, parts in columns.items()
    }
    return FeatureSet(window, **arrays)


def counts(window=config.WINDOW):
    """
    Return the number of features per type from the closed-form count.

    Args:
        window (int): The window side length.

    Returns:
        dict: Maps each :class:`FeatureType` to its feature count.
    """
    def positions(base):
        return sum(window - size + 1
                   for size in range(base, window + 1, base))

    return {ftype: positions(ftype.cols) * positions(ftype.rows)
            for ftype in TYPES}


def evaluate(feature, ii):
    """
    Evaluate a feature on an integral image.

    Args:
        feature (HaarFeature): The feature.
        ii (IntegralImage): The integral image.

    Returns:
        int: The dark-cell sum minus the white-cell sum.

    Raises:
        BoundsError: If the feature does not fit into the image.
    """
    feature.bounds.check(ii.width, ii.height)
    return sum(sign * imaging.rect_sum(ii, rect)
               for rect, sign in feature.cells())


def lookup_table(sums):
    """
    Stack integral images into the corner lookup table used by
    :func:`evaluate_batch`.

    Args:
        sums (numpy.ndarray): Integral images of shape (n, height, width).

    Returns:
        numpy.ndarray: Array of shape (height * width + 1, n) and dtype
        int64. Row ``y * width + x`` holds cell (x, y) of every image;
        the last row is zero and serves out-of-range corners.
    """
    n = sums.shape[0]
    table = np.zeros((sums.shape[1] * sums.shape[2] + 1, n), dtype=np.int64)
    table[:-1] = sums.reshape(n, -1).T
    return table


def corner_table(features, start=0, stop=None):
    """
    Express features as signed integral-image corner lookups.

    Every cell contributes its four corners D + A - B - C, multiplied by
    the cell sign. Features with fewer than four cells are padded with
    zero-coefficient lookups of the guard row.

    Args:
        features (FeatureSet): The feature enumeration.
        start (int, optional): First global index.
        stop (int, optional): One past the last global index.

    Returns:
        tuple: ``(corners, coeffs)``, both of shape (count, 16); corners
        index rows of a :func:`lookup_table`.
    """
    stop = len(features) if stop is None else stop
    window = features.window
    guard = window * window
    codes = features.codes[start:stop]
    x, y = features.x[start:stop], features.y[start:stop]
    w, h = features.w[start:stop], features.h[start:stop]

    count = stop - start
    corners = np.full((count, 16), guard, dtype=np.intp)
    coeffs = np.zeros((count, 16), dtype=np.int64)

    def flat(cx, cy):
        return np.where((cx < 0) | (cy < 0), guard, cy * window + cx)

    for code, ftype in enumerate(TYPES):
        mask = codes == code
        if not mask.any():
            continue
        cw, ch = w[mask] // ftype.cols, h[mask] // ftype.rows
        slot = 0
        for row, signs in enumerate(ftype.signs):
            for col, sign in enumerate(signs):
                x0 = x[mask] + col * cw
                y0 = y[mask] + row * ch
                x1, y1 = x0 + cw - 1, y0 + ch - 1
                lookups = (
                    (flat(x1, y1), sign),
                    (flat(x0 - 1, y0 - 1), sign),
                    (flat(x1, y0 - 1), -sign),
                    (flat(x0 - 1, y1), -sign),
                )
                for offset, (index, coeff) in enumerate(lookups):
                    corners[mask, 4 * slot + offset] = index
                    coeffs[mask, 4 * slot + offset] = coeff
                slot += 1
    return corners, coeffs


def evaluate_batch(corners, coeffs, table):
    """
    Evaluate many features on many integral images.

    Args:
        corners (numpy.ndarray): Lookup rows from :func:`corner_table`.
        coeffs (numpy.ndarray): Lookup signs from :func:`corner_table`.
        table (numpy.ndarray): Lookup table from :func:`lookup_table`.

    Returns:
        numpy.ndarray: Feature values of shape (features, images), dtype
        int64, identical to :func:`evaluate` per pair.
    """
    values = np.zeros((corners.shape[0], table.shape[1]), dtype=np.int64)
    for k in range(corners.shape[1]):
        values += coeffs[:, k, None] * table[corners[:, k]]
    return values
