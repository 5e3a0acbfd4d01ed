"""
This module provides grayscale images, integral images and constant-time
rectangle sums.

The integral image is inclusive: the cell at (x, y) holds the sum of all
pixels at (x', y') with x' <= x and y' <= y. Corner lookups at column or
row -1 read as zero through a guard, so the table keeps exactly the
width x height layout of its source image.
"""

from dataclasses import dataclass

import numpy as np

from . import error

#: Largest value representable by an integral-image cell.
SUMS_CAPACITY = np.iinfo(np.uint32).max


@dataclass(frozen=True)
class Rect:

    """
    An axis-aligned rectangle in pixel coordinates.

    Args:
        x (int): Column of the top-left pixel.
        y (int): Row of the top-left pixel.
        w (int): Width in pixels.
        h (int): Height in pixels.
    """

    x: int
    y: int
    w: int
    h: int

    def fits(self, width, height):
        """Return True if the rectangle lies inside a width x height image."""
        return (self.w >= 1 and self.h >= 1
                and self.x >= 0 and self.y >= 0
                and self.x + self.w <= width
                and self.y + self.h <= height)

    def check(self, width, height):
        """
        Validate that the rectangle lies inside a width x height image.

        Raises:
            BoundsError: If the rectangle is empty or leaves the image.
        """
        if not self.fits(width, height):
            raise error.BoundsError(
                "Rectangle {} does not fit into a {}x{} image"
                .format(self, width, height)
            )


@dataclass(frozen=True, eq=False)
class Image:

    """
    An 8-bit grayscale image.

    Args:
        pixels (numpy.ndarray): Array of shape (height, width) and dtype
            uint8; ``pixels[y, x]`` is the intensity at column x, row y.
    """

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.uint8, copy=True)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(
                "Expected a non-empty 2-D pixel array, got shape {}"
                .format(pixels.shape)
            )
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_array(cls, array):
        """Create an image from any array-like of intensities 0..255."""
        array = np.asarray(array)
        if array.size and (array.min() < 0 or array.max() > 255):
            raise ValueError("Pixel intensities must lie in 0..255")
        return cls(array.astype(np.uint8))

    @property
    def width(self):
        """int: The image width in pixels."""
        return self.pixels.shape[1]

    @property
    def height(self):
        """int: The image height in pixels."""
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class IntegralImage:

    """
    The summed-area table of an :class:`Image`.

    Args:
        sums (numpy.ndarray): Array of shape (height, width) and dtype
            uint32 holding the inclusive cumulative sums.
    """

    sums: np.ndarray

    def __post_init__(self):
        sums = np.array(self.sums, dtype=np.uint32, copy=True)
        if sums.ndim != 2:
            raise ValueError("Expected a 2-D sums array")
        sums.setflags(write=False)
        object.__setattr__(self, "sums", sums)

    @classmethod
    def from_image(cls, image):
        """Build the integral image of `image`, see :func:`integral_of`."""
        return integral_of(image)

    @property
    def width(self):
        """int: The image width in pixels."""
        return self.sums.shape[1]

    @property
    def height(self):
        """int: The image height in pixels."""
        return self.sums.shape[0]

    def rect_sum(self, rect):
        """Return the pixel sum inside `rect`, see :func:`rect_sum`."""
        return rect_sum(self, rect)

    def __eq__(self, other):
        if not isinstance(other, IntegralImage):
            return NotImplemented
        return np.array_equal(self.sums, other.sums)


def integral_of(image):
    """
    Compute the integral image of `image`.

    Args:
        image (Image): The source image.

    Returns:
        IntegralImage: The summed-area table with
        ``sums[y, x] == pixels[:y + 1, :x + 1].sum()``.
    """
    capacity = 255 * image.width * image.height
    assert capacity <= SUMS_CAPACITY, (
        "A {}x{} window overflows the integral image"
        .format(image.width, image.height)
    )
    sums = image.pixels.cumsum(axis=0, dtype=np.uint32)
    sums = sums.cumsum(axis=1, dtype=np.uint32)
    return IntegralImage(sums)


def _corner(sums, x, y):
    """Read the integral image at (x, y); row or column -1 reads as 0."""
    if x < 0 or y < 0:
        return 0
    return int(sums[y, x])


def rect_sum(ii, rect):
    """
    Return the sum of the pixels inside `rect` in four table lookups.

    With D the bottom-right cell of the rectangle, A the cell diagonally
    outside its top-left corner, B the cell above its top-right corner
    and C the cell left of its bottom-left corner, the sum is
    D + A - B - C.

    Args:
        ii (IntegralImage): The integral image.
        rect (Rect): The rectangle; must lie inside the image.

    Returns:
        int: The exact pixel sum.

    Raises:
        BoundsError: If `rect` does not fit into the image.
    """
    rect.check(ii.width, ii.height)
    x0, y0 = rect.x - 1, rect.y - 1
    x1, y1 = rect.x + rect.w - 1, rect.y + rect.h - 1
    sums = ii.sums
    return (_corner(sums, x1, y1) + _corner(sums, x0, y0)
            - _corner(sums, x1, y0) - _corner(sums, x0, y1))
