"""
This module loads labeled training windows, converts them to integral
images once, and generates deterministic synthetic datasets.

Examples are always ordered by label (positives first) and then by
name, so that index i of a weight vector denotes the same example on
every node of a cluster.
"""

import functools
import hashlib
import logging
import os
import time
from dataclasses import dataclass

import numpy as np
import PIL.Image

from . import config
from . import error
from . import features
from . import imaging

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

_PGM_MAGIC = b"P5"


@dataclass(frozen=True)
class TrainingExample:

    """
    One labeled training window.

    Args:
        x (IntegralImage): The integral image of the window.
        y (int): 1 for a positive (object) window, 0 otherwise.
    """

    x: imaging.IntegralImage
    y: int


@dataclass(frozen=True)
class DatasetStats:

    """
    Class counts of a dataset.

    Args:
        l (int): Number of positives.
        m (int): Number of negatives.
    """

    l: int  # noqa: E741
    m: int

    def __post_init__(self):
        if self.l < 1 or self.m < 1:
            side = "positive" if self.l < 1 else "negative"
            raise error.DatasetError(
                "The {} class has zero examples".format(side)
            )

    @property
    def n(self):
        """int: Total number of examples."""
        return self.l + self.m


@dataclass(frozen=True)
class DatasetRef:

    """
    A serializable recipe that every node resolves to the same dataset.

    Args:
        kind (str): ``"dirs"`` or ``"synth"``.
        pos (str, optional): Directory of positive PGM files (dirs).
        neg (str, optional): Directory of negative PGM files (dirs).
        seed (int, optional): Generator seed (synth).
        l (int, optional): Number of positives (synth).
        m (int, optional): Number of negatives (synth).
    """

    kind: str
    pos: str = None
    neg: str = None
    seed: int = None
    l: int = None  # noqa: E741
    m: int = None

    @classmethod
    def dirs(cls, pos, neg):
        return cls("dirs", pos=os.fspath(pos), neg=os.fspath(neg))

    @classmethod
    def synthetic(cls, seed, l, m):  # noqa: E741
        return cls("synth", seed=int(seed), l=int(l), m=int(m))

    def resolve(self):
        """
        Load or generate the referenced dataset.

        Returns:
            Dataset: The dataset.
        """
        if self.kind == "dirs":
            return load_dir(self.pos, self.neg)
        if self.kind == "synth":
            return synth(self.seed, self.l, self.m)
        raise error.DatasetError(
            "Unknown dataset reference kind {!r}".format(self.kind)
        )

    def to_dict(self):
        return {key: value for key, value in vars(self).items()
                if value is not None}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class Dataset:

    """
    An immutable set of labeled integral images.

    Args:
        sums (numpy.ndarray): Integral images, shape (n, height, width),
            dtype uint32, positives first.
        labels (numpy.ndarray): Labels 0 or 1, shape (n,).
        names (sequence): Example names (file names for loaded data).
        ref (DatasetRef, optional): How the dataset was obtained.
        upload_seconds (float, optional): Time spent loading and
            converting the examples.
    """

    def __init__(self, sums, labels, names, ref=None, upload_seconds=0.0):
        sums = np.ascontiguousarray(sums, dtype=np.uint32)
        labels = np.ascontiguousarray(labels, dtype=np.uint8)
        if sums.ndim != 3 or sums.shape[0] != labels.shape[0]:
            raise error.DatasetError(
                "Expected n integral images for n labels, got shapes {} "
                "and {}".format(sums.shape, labels.shape)
            )
        sums.setflags(write=False)
        labels.setflags(write=False)
        self.sums = sums
        self.labels = labels
        self.names = tuple(names)
        self.stats = DatasetStats(
            l=int(labels.sum()), m=int(labels.size - labels.sum())
        )
        self.ref = ref
        self.upload_seconds = upload_seconds

    def __len__(self):
        return self.labels.size

    @property
    def window(self):
        """int: The side length of the training windows."""
        return self.sums.shape[1]

    @property
    def positives(self):
        """numpy.ndarray: Boolean mask of the positive examples."""
        return self.labels == 1

    @property
    def examples(self):
        """list: The examples as :class:`TrainingExample` objects."""
        return [TrainingExample(imaging.IntegralImage(s), int(y))
                for s, y in zip(self.sums, self.labels)]

    @functools.cached_property
    def table(self):
        """numpy.ndarray: Corner lookup table, see features.lookup_table."""
        return features.lookup_table(self.sums)

    @functools.cached_property
    def content_hash(self):
        """str: SHA-256 over window size, labels and integral images."""
        digest = hashlib.sha256()
        digest.update(np.int64(self.window).tobytes())
        digest.update(self.labels.tobytes())
        digest.update(self.sums.astype("<u4").tobytes())
        return digest.hexdigest()

    def feature_values(self, feature):
        """
        Evaluate one feature on every example.

        Args:
            feature (HaarFeature): The feature.

        Returns:
            numpy.ndarray: The int64 feature values, one per example.
        """
        fset = features.enumerate_features(self.window)
        index = feature.global_index
        corners, coeffs = features.corner_table(fset, index, index + 1)
        return features.evaluate_batch(corners, coeffs, self.table)[0]

    def pixels(self):
        """
        Recover the source windows from the integral images.

        Returns:
            numpy.ndarray: uint8 pixels, shape (n, height, width).
        """
        sums = self.sums.astype(np.int64)
        pixels = np.diff(sums, axis=1, prepend=0)
        pixels = np.diff(pixels, axis=2, prepend=0)
        return pixels.astype(np.uint8)

    def manifest(self):
        """Return a text summary of the dataset for reports."""
        lines = [
            "positives: {}".format(self.stats.l),
            "negatives: {}".format(self.stats.m),
            "total: {}".format(self.stats.n),
            "window: {0}x{0}".format(self.window),
        ]
        if self.ref is not None:
            for key, value in self.ref.to_dict().items():
                lines.append("{}: {}".format(key, value))
        lines.append("sha256: {}".format(self.content_hash))
        return "\n".join(lines)


def read_pgm(filepath, window=config.WINDOW):
    """
    Read a binary PGM (P5) training window.

    Samples of a file with maxval below 255 are scaled to 0..255, so a
    sample equal to maxval reads as 255.

    Args:
        filepath (str): Path to the PGM file.
        window (int, optional): Expected side length; None accepts any
            size.

    Returns:
        Image: The grayscale image.

    Raises:
        DatasetError: If the file is not a binary PGM with maxval <= 255.
        ImageSizeError: If the image is not window x window.
    """
    try:
        with open(filepath, "rb") as f:
            magic = f.read(2)
        if magic != _PGM_MAGIC:
            raise error.DatasetError(
                "{!r} is not a binary PGM (P5) file".format(filepath)
            )
        with PIL.Image.open(filepath) as img:
            if img.mode != "L":
                raise error.DatasetError(
                    "{!r} is not an 8-bit PGM (mode {})"
                    .format(filepath, img.mode)
                )
            pixels = np.asarray(img, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as e:
        raise error.DatasetError(
            "Couldn't read {!r}: {}".format(filepath, e)
        )
    if window is not None and pixels.shape != (window, window):
        raise error.ImageSizeError(
            "{!r}: expected {}x{}, got {}x{}".format(
                filepath, window, window, pixels.shape[1], pixels.shape[0]
            )
        )
    return imaging.Image(pixels)


def write_pgm(filepath, image):
    """
    Write an image as a binary PGM (P5) file.

    Args:
        filepath (str): Destination path.
        image (Image): The image to write.
    """
    pixels = np.ascontiguousarray(image.pixels, dtype=np.uint8)
    PIL.Image.fromarray(pixels).save(filepath, format="PPM")


def _list_dir(dirpath):
    """Return the regular files of `dirpath` in lexicographic order."""
    try:
        names = sorted(os.listdir(dirpath))
    except OSError as e:
        raise error.DatasetError(
            "Couldn't list directory {!r}: {}".format(dirpath, e)
        )
    return [os.path.join(dirpath, name) for name in names
            if os.path.isfile(os.path.join(dirpath, name))]


def load_dir(positives_dir, negatives_dir, window=config.WINDOW):
    """
    Load a labeled corpus of PGM windows.

    Integral images are computed right away and the raw pixels are not
    kept. Loading is atomic: any bad file fails the whole call.

    Args:
        positives_dir (str): Directory of positive windows.
        negatives_dir (str): Directory of negative windows.
        window (int, optional): Side length every image must have.

    Returns:
        Dataset: Positives first, each class in file-name order.

    Raises:
        DatasetError: If a file is not a usable PGM, has the wrong size,
            or a class has zero examples.
    """
    start = time.perf_counter()
    sums, labels, names = [], [], []
    for label, dirpath in ((1, positives_dir), (0, negatives_dir)):
        filepaths = _list_dir(dirpath)
        if not filepaths:
            raise error.DatasetError(
                "The {} class has zero examples in {!r}".format(
                    "positive" if label else "negative", dirpath
                )
            )
        for filepath in filepaths:
            image = read_pgm(filepath, window)
            sums.append(imaging.integral_of(image).sums)
            labels.append(label)
            names.append(os.path.basename(filepath))
    elapsed = time.perf_counter() - start
    dataset = Dataset(
        np.stack(sums), np.array(labels), names,
        ref=DatasetRef.dirs(positives_dir, negatives_dir),
        upload_seconds=elapsed,
    )
    log.debug(
        "Loaded {} positives and {} negatives in {:.3f} s"
        .format(dataset.stats.l, dataset.stats.m, elapsed)
    )
    return dataset


def synth(seed, l, m, window=config.WINDOW):  # noqa: E741
    """
    Generate a deterministic synthetic dataset.

    Positives are dark windows with a bright centered block, negatives are
    uniform noise. A centered Haar feature separates both classes with
    high probability.

    Args:
        seed (int): Seed of the pseudorandom generator.
        l (int): Number of positives.
        m (int): Number of negatives.
        window (int, optional): Side length of the windows.

    Returns:
        Dataset: The generated dataset, positives first.
    """
    if l < 1 or m < 1:
        raise error.DatasetError(
            "Both classes need at least one example, got l={}, m={}"
            .format(l, m)
        )
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    block = window // 2
    offset = (window - block) // 2

    pixels = np.empty((l + m, window, window), dtype=np.uint8)
    for i in range(l):
        pixels[i] = rng.integers(0, 64, (window, window))
        pixels[i, offset:offset + block, offset:offset + block] = (
            rng.integers(160, 256, (block, block))
        )
    for i in range(l, l + m):
        pixels[i] = rng.integers(0, 256, (window, window))

    sums = np.stack([imaging.integral_of(imaging.Image(p)).sums
                     for p in pixels])
    names = (["synth-pos-{:05d}".format(i) for i in range(l)]
             + ["synth-neg-{:05d}".format(i) for i in range(m)])
    labels = np.r_[np.ones(l, np.uint8), np.zeros(m, np.uint8)]
    return Dataset(
        sums, labels, names, ref=DatasetRef.synthetic(seed, l, m),
        upload_seconds=time.perf_counter() - start,
    )


def export_dir(dataset, root):
    """
    Write a dataset as a PGM corpus with ``pos`` and ``neg`` folders.

    Args:
        dataset (Dataset): The dataset to export.
        root (str): Destination directory, created if missing.

    Returns:
        tuple: Paths of the positives and negatives directories.
    """
    dirs = {1: os.path.join(root, "pos"), 0: os.path.join(root, "neg")}
    for dirpath in dirs.values():
        os.makedirs(dirpath, exist_ok=True)
    for name, label, pixels in zip(dataset.names, dataset.labels,
                                   dataset.pixels()):
        filepath = os.path.join(dirs[int(label)], name + ".pgm")
        write_pgm(filepath, imaging.Image(pixels))
    return dirs[1], dirs[0]
