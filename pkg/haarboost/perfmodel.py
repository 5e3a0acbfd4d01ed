"""
This module predicts the round time of the two-level cluster, fits the
prediction to measurements and computes speedup reports.

A round on a sub-master with `n` workers and `m` features is predicted
to take ``coeff_comm * n + coeff_compute * m / n`` seconds: every
additional worker costs a fixed communication overhead and shortens the
scan of the sub-master's range.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import config
from . import error

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

#: Features of the largest type range of a 24x24 window, the range a
#: sub-master handles when the types are spread over five sub-masters.
SUBMASTER_FEATURES = 43200

#: Fan-outs listed by :func:`round_time_table`.
FANOUTS = tuple(range(1, 11))

CSV_COLUMNS = ("label", "upload_s", "round_s", "speedup")
MEASUREMENT_COLUMNS = ("n", "m", "seconds")


@dataclass(frozen=True)
class PredictiveModelInput:

    """
    Parameters of the round-time prediction.

    Args:
        n (int): Workers attached to one sub-master.
        m (int): Most features allocated to one sub-master.
        coeff_comm (float): Seconds per worker.
        coeff_compute (float): Seconds per feature.
    """

    n: int = 1
    m: int = SUBMASTER_FEATURES
    coeff_comm: float = field(default_factory=lambda: config.COEFF_COMM)
    coeff_compute: float = field(
        default_factory=lambda: config.COEFF_COMPUTE
    )

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(
                "Need n >= 1 and m >= 1, got n={}, m={}".format(self.n,
                                                                self.m)
            )
        if not (self.coeff_comm > 0 and self.coeff_compute > 0):
            raise ValueError("Coefficients must be positive")


def predict_round_time(model):
    """
    Return the predicted seconds per round.

    Args:
        model (PredictiveModelInput): The parameters.

    Returns:
        float: ``coeff_comm * n + coeff_compute * m / n``.
    """
    return model.coeff_comm * model.n + model.coeff_compute * (model.m
                                                               / model.n)


def optimal_fanout(m, coeff_comm=None, coeff_compute=None):
    """
    Return the fan-out that minimizes the predicted round time.

    Args:
        m (int): Most features allocated to one sub-master.
        coeff_comm (float, optional): Seconds per worker.
        coeff_compute (float, optional): Seconds per feature.

    Returns:
        tuple: ``(n_star, n_int)``, the stationary point
        ``sqrt(coeff_compute * m / coeff_comm)`` and the best integer
        fan-out >= 1 (ties go to the smaller one).
    """
    base = PredictiveModelInput(
        1, m,
        config.COEFF_COMM if coeff_comm is None else coeff_comm,
        config.COEFF_COMPUTE if coeff_compute is None else coeff_compute,
    )
    n_star = math.sqrt(base.coeff_compute * m / base.coeff_comm)
    # convex in n: the best integer is a neighbour of the stationary point
    candidates = {max(1, math.floor(n_star)), max(1, math.ceil(n_star))}
    n_int = min(candidates,
                key=lambda n: (predict_round_time(replace(base, n=n)), n))
    return n_star, n_int


def marginal_gains(m, n_max=10, coeff_comm=None, coeff_compute=None):
    """
    Return the predicted saving of every additional worker.

    Returns:
        list: ``(n, seconds)`` pairs for n = 2 .. `n_max`, the predicted
        time at n - 1 minus the time at n. Negative values mean the
        extra worker slows the round down.
    """
    base = PredictiveModelInput(
        1, m,
        config.COEFF_COMM if coeff_comm is None else coeff_comm,
        config.COEFF_COMPUTE if coeff_compute is None else coeff_compute,
    )
    times = {n: predict_round_time(replace(base, n=n))
             for n in range(1, n_max + 1)}
    return [(n, times[n - 1] - times[n]) for n in range(2, n_max + 1)]


def round_time_table(m=SUBMASTER_FEATURES, fanouts=FANOUTS):
    """
    Return the predicted round time per fan-out with the default
    coefficients.

    Returns:
        list: ``(n, seconds)`` pairs.
    """
    return [(n, predict_round_time(PredictiveModelInput(n, m)))
            for n in fanouts]


def fit_coefficients(measurements):
    """
    Fit both coefficients to measured round times by least squares.

    Args:
        measurements (iterable): ``(n, m, seconds)`` triples.

    Returns:
        PredictiveModelInput: The fitted coefficients, with n = 1 and the
        largest measured m.

    Raises:
        FitError: If the measurements don't determine both coefficients
            or the fit is not positive.
    """
    measurements = [(int(n), int(m), float(s)) for n, m, s in measurements]
    if len(measurements) < 2:
        raise error.FitError(
            "insufficiently varied measurements: need at least two, got {}"
            .format(len(measurements))
        )
    design = np.array([[n, m / n] for n, m, _ in measurements])
    seconds = np.array([s for _, _, s in measurements])
    if np.linalg.matrix_rank(design) < 2:
        raise error.FitError(
            "insufficiently varied measurements: (n, m/n) must take at "
            "least two independent values"
        )
    (comm, compute), residuals, _, _ = np.linalg.lstsq(design, seconds,
                                                       rcond=None)
    log.debug("Fitted coeff_comm={!r}, coeff_compute={!r}, residuals={}"
              .format(comm, compute, residuals))
    if not (comm > 0 and compute > 0):
        raise error.FitError(
            "fitted coefficients must be positive, got {:.6g} and {:.6g}"
            .format(comm, compute)
        )
    return PredictiveModelInput(1, max(m for _, m, _ in measurements),
                                float(comm), float(compute))


@dataclass(frozen=True)
class SpeedupRecord:

    """
    One row of a speedup report.

    Args:
        label (str): The configuration.
        upload_s (float): One-time load and upload seconds.
        round_s (float): Average seconds per round.
        speedup (float): Baseline round time divided by `round_s`.
    """

    label: str
    upload_s: float
    round_s: float
    speedup: float


def _average(value):
    if isinstance(value, (int, float)):
        return float(value)
    values = list(value)
    if not values:
        raise error.ReportError("No round times given")
    return math.fsum(values) / len(values)


def speedup_report(timings, baseline):
    """
    Compute the speedup of every configuration over a baseline.

    Args:
        timings (dict): Maps a label to ``(upload_s, round_s)``; round_s
            is an average or a sequence of per-round times.
        baseline (str): The label of the reference configuration.

    Returns:
        list: :class:`SpeedupRecord` objects in the order of `timings`.

    Raises:
        ReportError: If the baseline is missing or a round time is not
            positive.
    """
    if baseline not in timings:
        raise error.ReportError(
            "Baseline {!r} is missing from the timings".format(baseline)
        )
    averages = {label: (float(upload), _average(rounds))
                for label, (upload, rounds) in timings.items()}
    for label, (_, round_s) in averages.items():
        if not round_s > 0:
            raise error.ReportError(
                "Round time of {!r} must be positive, got {!r}"
                .format(label, round_s)
            )
    reference = averages[baseline][1]
    return [SpeedupRecord(label, upload, round_s, reference / round_s)
            for label, (upload, round_s) in averages.items()]


def format_rows(headers, rows):
    """
    Render rows of strings as an aligned plain-text table.

    The first column is left-aligned, all others right-aligned.
    """
    widths = [max(len(str(cell)) for cell in column)
              for column in zip(headers, *rows)]

    def line(cells):
        parts = [str(cells[0]).ljust(widths[0])]
        parts += [str(c).rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join(parts).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(headers), rule] + [line(r) for r in rows])


def render_table(records, baseline=None):
    """
    Render a speedup report with upload time, round time and speedup.

    The baseline row shows ``----`` instead of its speedup.
    """
    rows = [
        (r.label, "{:.1f}".format(r.upload_s), "{:.1f}".format(r.round_s),
         "----" if r.label == baseline else "{:.1f}".format(r.speedup))
        for r in records
    ]
    return format_rows(
        ("configuration", "upload (s)", "round (s)", "speedup"), rows
    )


def write_csv(records, filepath):
    """Write speedup records with the columns of :data:`CSV_COLUMNS`."""
    with open(filepath, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow((r.label, repr(r.upload_s), repr(r.round_s),
                             repr(r.speedup)))


def _read_rows(filepath, columns):
    try:
        with open(filepath, newline="") as f:
            reader = csv.DictReader(f)
            missing = set(columns) - set(reader.fieldnames or ())
            if missing:
                raise error.ReportError(
                    "{!r} lacks the columns {}".format(filepath,
                                                       sorted(missing))
                )
            return list(reader)
    except OSError as e:
        raise error.ReportError("Couldn't read {!r}: {}".format(filepath, e))


def read_csv(filepath):
    """Read speedup records written by :func:`write_csv`."""
    try:
        return [
            SpeedupRecord(row["label"], float(row["upload_s"]),
                          float(row["round_s"]), float(row["speedup"]))
            for row in _read_rows(filepath, CSV_COLUMNS)
        ]
    except (TypeError, ValueError) as e:
        raise error.ReportError("Invalid CSV {!r}: {}".format(filepath, e))


def read_measurements(filepath):
    """
    Read ``(n, m, seconds)`` measurements from a CSV file with the
    columns of :data:`MEASUREMENT_COLUMNS`.
    """
    try:
        return [
            (int(row["n"]), int(row["m"]), float(row["seconds"]))
            for row in _read_rows(filepath, MEASUREMENT_COLUMNS)
        ]
    except (TypeError, ValueError) as e:
        raise error.ReportError("Invalid CSV {!r}: {}".format(filepath, e))


def write_measurements(measurements, filepath):
    """Write measurements in the format of :func:`read_measurements`."""
    with open(filepath, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MEASUREMENT_COLUMNS)
        for n, m, seconds in measurements:
            writer.writerow((n, m, repr(float(seconds))))
