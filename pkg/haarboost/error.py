"""
This module contains the haarboost exception classes.
"""


class HaarBoostError(Exception):
    """
    Base class for all haarboost exceptions.
    """


class BoundsError(HaarBoostError, ValueError):
    """
    Raised when a rectangle or feature does not fit into the image it is
    applied to.
    """


class DatasetError(HaarBoostError):
    """
    Raised when a training image can't be loaded or a dataset violates
    its invariants (e.g. one class has zero examples).
    """


class ImageSizeError(DatasetError):
    """
    Raised when an image does not have the expected window size.
    """


class TrainingError(HaarBoostError):

    """
    Base class for failures during the boosting rounds.

    Args:
        message (str): The error description.
        round_ (int, optional): The boosting round in which the failure
            happened.
    """

    def __init__(self, message, round_=None):
        super().__init__(message)
        self.round = round_

    def __str__(self):
        message = super().__str__()
        if self.round is None:
            return message
        return "round {}: {}".format(self.round, message)


class WeightCollapseError(TrainingError):
    """
    Raised when the total example weight underflows to zero.
    """


class WeakLearnerError(TrainingError):
    """
    Raised when the best weak classifier is no better than chance.
    """


class PartitionError(HaarBoostError, ValueError):
    """
    Raised when a feature partition can't be built.
    """


class ClusterError(HaarBoostError):

    """
    Base class for failures of the distributed roles.

    Args:
        message (str): The error description.
        node_id (str, optional): The node that detected the failure. The
            string representation is tagged with it.
    """

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id

    def __str__(self):
        message = super().__str__()
        if self.node_id is None:
            return message
        return "[{}] {}".format(self.node_id, message)


class ConnectionError(ClusterError):
    """
    Raised when a connection attempt failed or a peer disconnected.
    """


class TimeoutError(ConnectionError):
    """
    Raised when a peer did not connect or answer in time.
    """


class ProtocolError(ClusterError):
    """
    Raised when a message is malformed or arrives out of order.
    """


class RoundMismatchError(ProtocolError):
    """
    Raised when a WEIGHTS or BEST message belongs to another round.
    """


class DatasetMismatchError(ClusterError):
    """
    Raised when a node's local dataset differs from the master's.
    """


class JobAbortedError(ClusterError):
    """
    Raised when a peer reported an ERROR and the job was aborted.
    """


class ModelFormatError(HaarBoostError):
    """
    Raised when a model file can't be parsed.
    """


class FitError(HaarBoostError):
    """
    Raised when performance-model coefficients can't be fitted.
    """


class ReportError(HaarBoostError):
    """
    Raised when a speedup report can't be built.
    """
