"""Exception types shared across the pipeline."""


class GensegError(Exception):
    """Base class for all errors raised by genseg."""


class InvalidInputError(GensegError, ValueError):
    """Arguments violate an operation's preconditions."""


class NoPathError(GensegError):
    """No valid state or unit path fits the observed frames.

    Attributes
    ----------
    n_frames : int or None
        Number of frames that were available.
    min_frames : int or None
        Smallest number of frames any admissible path would need.
    """

    def __init__(self, message, n_frames=None, min_frames=None):
        super().__init__(message)
        self.n_frames = n_frames
        self.min_frames = min_frames


class OOVError(GensegError, KeyError):
    """A label is not part of a sequence model's vocabulary."""

    def __init__(self, label):
        super().__init__(label)
        self.label = label

    def __str__(self):
        return f"label {self.label!r} is out of vocabulary"


class DataError(GensegError):
    """A file on disk is malformed."""

    def __init__(self, path, offset, reason):
        super().__init__(f"{path}: byte {offset}: {reason}")
        self.path = str(path)
        self.offset = offset
        self.reason = reason
