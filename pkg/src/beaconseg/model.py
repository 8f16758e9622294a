"""Probability tables, the model file format, and run-time cluster assignment.

The trained artifact is a :class:`ClusterModel`: cluster priors, per-cluster
beacon distributions, and the derived beacon-to-cluster table.  Only that
last table is needed to score a user at run time:

    score(cluster i | user) = sum_b  p(cluster i | beacon b) * share(b | user)

where ``share(b | user)`` is the fraction of the user's events that are
beacon ``b``.  Because the table is keyed by beacon, any user with at least
one known beacon can be scored, including users never seen in training.

A :class:`ClusterModel` is immutable after construction and safe to share
across threads for concurrent read-only scoring.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from beaconseg.errors import EmptyHistory, InvalidModel, NoKnownBeacons

STOCHASTIC_ATOL = 1e-9

MODEL_FORMAT = "beacon-cluster-model"


@dataclass(frozen=True)
class UserHistory:
    """Sparse beacon-count vector for one user.

    ``counts`` maps beacon id to the number of times the user fired it;
    ``total`` is the total event count.  An empty history (no events) is
    representable so scoring can reject it explicitly, but corpora never
    contain one.
    """

    user: str
    counts: Mapping[str, int]
    total: int

    def __post_init__(self):
        if not self.user:
            raise ValueError("user id must be non-empty")
        for beacon, count in self.counts.items():
            if not beacon:
                raise ValueError(f"user {self.user!r}: empty beacon id")
            if count < 1:
                raise ValueError(f"user {self.user!r}: count for {beacon!r} must be >= 1")
        if self.total != sum(self.counts.values()):
            raise ValueError(f"user {self.user!r}: total does not equal the sum of counts")

    @classmethod
    def from_counts(cls, user: str, counts: Mapping[str, int]) -> "UserHistory":
        return cls(user=user, counts=dict(counts), total=sum(counts.values()))

    def shares(self) -> dict[str, float]:
        """Per-beacon share of this user's events, share(b|u) = n(u,b)/n(u)."""
        if not self.counts:
            raise EmptyHistory(f"user {self.user!r} has no events")
        return {b: c / self.total for b, c in self.counts.items()}


@dataclass(frozen=True)
class Assignment:
    """Result of assigning one user to a cluster.

    ``posterior`` holds the full renormalized score vector; ``cluster`` is
    its argmax (ties broken toward the lowest index).
    """

    user: str
    cluster: int
    posterior: np.ndarray | None = None


def derive_cluster_given_beacon(priors: np.ndarray, beacon_given_cluster: np.ndarray) -> np.ndarray:
    """Beacon-to-cluster table consistent with the model's own marginals.

    Row b of the result is priors * beacon_given_cluster[:, b], normalized to
    sum to 1.  Beacons with zero probability under every cluster get an
    all-zero row and are omitted when the model is serialized.
    """
    joint = beacon_given_cluster.T * priors[np.newaxis, :]
    marginal = joint.sum(axis=1)
    table = np.zeros_like(joint)
    populated = marginal > 0.0
    table[populated] = joint[populated] / marginal[populated, np.newaxis]
    return table


@dataclass
class ClusterModel:
    """Trained clustering parameters.

    ``beacon_given_cluster`` rows and the populated rows of
    ``cluster_given_beacon`` are probability distributions; ``priors`` is the
    distribution over clusters.  ``flagged_clusters`` lists clusters that
    ended training empty (uniform beacon row, zero prior).
    """

    k: int
    vocabulary: list[str]
    priors: np.ndarray
    beacon_given_cluster: np.ndarray
    cluster_given_beacon: np.ndarray
    flagged_clusters: tuple[int, ...] = ()
    _beacon_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._beacon_index = {b: i for i, b in enumerate(self.vocabulary)}

    @classmethod
    def from_parameters(
        cls,
        priors: np.ndarray,
        beacon_given_cluster: np.ndarray,
        vocabulary: list[str],
        flagged_clusters: tuple[int, ...] = (),
    ) -> "ClusterModel":
        """Build a model from trained tables, deriving the beacon-to-cluster map."""
        model = cls(
            k=len(priors),
            vocabulary=list(vocabulary),
            priors=np.asarray(priors, dtype=np.float64),
            beacon_given_cluster=np.asarray(beacon_given_cluster, dtype=np.float64),
            cluster_given_beacon=derive_cluster_given_beacon(
                np.asarray(priors, dtype=np.float64),
                np.asarray(beacon_given_cluster, dtype=np.float64),
            ),
            flagged_clusters=tuple(flagged_clusters),
        )
        model.validate()
        return model

    @property
    def n_beacons(self) -> int:
        return len(self.vocabulary)

    def beacon_index(self, beacon: str) -> int | None:
        return self._beacon_index.get(beacon)

    def validate(self, atol: float = STOCHASTIC_ATOL) -> None:
        """Check every stochasticity invariant; raise InvalidModel on failure."""
        if self.k < 1:
            raise InvalidModel("k must be >= 1")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise InvalidModel("vocabulary contains duplicate beacons")
        if any(not b for b in self.vocabulary):
            raise InvalidModel("vocabulary contains an empty beacon id")
        if self.priors.shape != (self.k,):
            raise InvalidModel("priors shape does not match k")
        if self.beacon_given_cluster.shape != (self.k, self.n_beacons):
            raise InvalidModel("beacon_given_cluster shape mismatch")
        if self.cluster_given_beacon.shape != (self.n_beacons, self.k):
            raise InvalidModel("cluster_given_beacon shape mismatch")
        for name, table in (
            ("priors", self.priors),
            ("beacon_given_cluster", self.beacon_given_cluster),
            ("cluster_given_beacon", self.cluster_given_beacon),
        ):
            if not np.all(np.isfinite(table)):
                raise InvalidModel(f"{name} contains a non-finite value")
            if np.any(table < 0.0):
                raise InvalidModel(f"{name} contains a negative probability")
        if not math.isclose(float(self.priors.sum()), 1.0, abs_tol=atol):
            raise InvalidModel(f"cluster priors sum to {self.priors.sum()!r}, expected 1")
        row_sums = self.beacon_given_cluster.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > atol):
            bad = int(np.argmax(np.abs(row_sums - 1.0)))
            raise InvalidModel(f"beacon distribution of cluster {bad} sums to {row_sums[bad]!r}")
        beacon_sums = self.cluster_given_beacon.sum(axis=1)
        populated = beacon_sums > 0.0
        if np.any(np.abs(beacon_sums[populated] - 1.0) > atol):
            raise InvalidModel("a beacon's cluster distribution does not sum to 1")


def score_user(model: ClusterModel, history: UserHistory) -> np.ndarray:
    """Posterior over clusters for one user, from the beacon-to-cluster table.

    Beacons absent from the model vocabulary contribute zero.  The scores
    are renormalized to sum to 1, which leaves the argmax unchanged.

    Raises EmptyHistory for a history with no events and NoKnownBeacons when
    the history is disjoint from the vocabulary (or every known beacon has an
    all-zero table row).
    """
    if not history.counts:
        raise EmptyHistory(f"user {history.user!r} has no events")
    rows = []
    shares = []
    for beacon, count in history.counts.items():
        idx = model.beacon_index(beacon)
        if idx is not None:
            rows.append(idx)
            shares.append(count / history.total)
    if not rows:
        raise NoKnownBeacons(f"user {history.user!r}: no beacon overlaps the model vocabulary")
    raw = model.cluster_given_beacon[rows].T @ np.asarray(shares, dtype=np.float64)
    mass = raw.sum()
    if mass <= 0.0:
        raise NoKnownBeacons(
            f"user {history.user!r}: every known beacon carries zero cluster information"
        )
    return raw / mass


def assign_user(model: ClusterModel, history: UserHistory) -> Assignment:
    """Assign a user to the highest-scoring cluster (ties: lowest index)."""
    posterior = score_user(model, history)
    return Assignment(user=history.user, cluster=int(np.argmax(posterior)), posterior=posterior)


def _sparse_row(vocabulary: list[str], probabilities: np.ndarray) -> dict[str, float]:
    return {b: float(p) for b, p in zip(vocabulary, probabilities) if p != 0.0}


def write_model(model: ClusterModel, path) -> None:
    """Serialize a model to its JSON document.

    Probabilities are written as shortest round-trip decimals, so reading the
    file back reproduces every table bit-exactly.  Zero entries are omitted
    from the sparse tables.
    """
    model.validate()
    beacon_sums = model.cluster_given_beacon.sum(axis=1)
    document = {
        "format": MODEL_FORMAT,
        "k": model.k,
        "vocabulary": model.vocabulary,
        "priors": [float(p) for p in model.priors],
        "beacon_given_cluster": [
            _sparse_row(model.vocabulary, row) for row in model.beacon_given_cluster
        ],
        "cluster_given_beacon": {
            beacon: [float(p) for p in model.cluster_given_beacon[i]]
            for i, beacon in enumerate(model.vocabulary)
            if beacon_sums[i] > 0.0
        },
        "flagged_clusters": list(model.flagged_clusters),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(document, handle, indent=1)
        handle.write("\n")


def read_model(path) -> ClusterModel:
    """Load and validate a model document written by :func:`write_model`."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            document = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InvalidModel(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(document, dict) or document.get("format") != MODEL_FORMAT:
        raise InvalidModel(f"{path}: not a {MODEL_FORMAT} document")
    try:
        k = int(document["k"])
        vocabulary = [str(b) for b in document["vocabulary"]]
        priors = np.asarray(document["priors"], dtype=np.float64)
        sparse_rows = document["beacon_given_cluster"]
        sparse_table = document["cluster_given_beacon"]
        flagged = tuple(int(c) for c in document.get("flagged_clusters", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidModel(f"{path}: malformed field: {exc}") from exc

    index = {b: i for i, b in enumerate(vocabulary)}
    beacon_given_cluster = np.zeros((k, len(vocabulary)), dtype=np.float64)
    if not isinstance(sparse_rows, list) or len(sparse_rows) != k:
        raise InvalidModel(f"{path}: beacon_given_cluster must hold one row per cluster")
    for i, row in enumerate(sparse_rows):
        for beacon, probability in row.items():
            if beacon not in index:
                raise InvalidModel(f"{path}: beacon {beacon!r} not in vocabulary")
            beacon_given_cluster[i, index[beacon]] = probability
    cluster_given_beacon = np.zeros((len(vocabulary), k), dtype=np.float64)
    for beacon, column in sparse_table.items():
        if beacon not in index:
            raise InvalidModel(f"{path}: beacon {beacon!r} not in vocabulary")
        if len(column) != k:
            raise InvalidModel(f"{path}: cluster distribution for {beacon!r} has wrong length")
        cluster_given_beacon[index[beacon]] = column

    model = ClusterModel(
        k=k,
        vocabulary=vocabulary,
        priors=priors,
        beacon_given_cluster=beacon_given_cluster,
        cluster_given_beacon=cluster_given_beacon,
        flagged_clusters=flagged,
    )
    model.validate()
    return model
