"""Exception types shared across the package."""

from __future__ import annotations


class BeaconsegError(Exception):
    """Base class for all beaconseg errors."""


class EmptyHistory(BeaconsegError):
    """A user history with no events was given where events are required."""


class NoKnownBeacons(BeaconsegError):
    """None of the history's beacons carry any cluster information."""


class UnknownUser(BeaconsegError):
    """A pLSA model was asked about a user it was not trained on."""


class InvalidModel(BeaconsegError):
    """A model file or table violates its stochasticity invariants."""


class MalformedRecord(BeaconsegError):
    """An input line could not be parsed as an event record."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class FilterTooAggressive(BeaconsegError):
    """Beacon filtering left an empty vocabulary or an empty corpus."""


class EmptyCorpus(BeaconsegError):
    """An operation requires a non-empty corpus."""


class InitInfeasible(BeaconsegError):
    """Requested more clusters than there are users to seed them."""


class NumericalFailure(BeaconsegError):
    """A non-finite value appeared during training."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ZeroVector(BeaconsegError):
    """Cosine similarity is undefined for an all-zero vector."""


class UserSetMismatch(BeaconsegError):
    """Two assignment files cover different user sets."""


class MalformedTrace(BeaconsegError):
    """An objective-trace CSV does not match the expected layout."""
