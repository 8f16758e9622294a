"""Event-log ingestion: windowed per-user counts, beacon filtering, marginals.

Input is a line-oriented TSV of ``timestamp<TAB>user_id<TAB>beacon_id``
records.  Ingestion keeps only events inside a lookback window, aggregates
them into per-user beacon counts, and precomputes the user and beacon
marginals the trainer consumes.  The result is canonical: users and
vocabulary are sorted, so permuting the input events yields an identical
corpus, and the output never depends on how the input was sharded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np
from scipy.sparse import csr_array

from beaconseg.errors import EmptyCorpus, FilterTooAggressive, MalformedRecord
from beaconseg.model import UserHistory

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400

# Characters with structural meaning in the TSV formats; ids containing them
# cannot round-trip and are rejected at parse/write time.
_FORBIDDEN_IN_IDS = ("\t", "\n", ":", ",")


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One beacon firing: who did what, when (seconds since epoch)."""

    timestamp: int
    user: str
    beacon: str

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if not self.user or not self.beacon:
            raise ValueError("user and beacon ids must be non-empty")


def parse_events(lines: Iterable[str], strict: bool = True) -> Iterator[EventRecord]:
    """Parse TSV event lines, reporting malformed ones with their line number.

    With ``strict`` a malformed line raises :class:`MalformedRecord`;
    otherwise it is logged and skipped.  Blank lines are always skipped.
    """
    for line_number, line in enumerate(lines, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        reason = None
        if len(parts) != 3:
            reason = f"expected 3 tab-separated fields, got {len(parts)}"
        else:
            raw_ts, user, beacon = parts
            try:
                timestamp = int(raw_ts)
            except ValueError:
                reason = f"timestamp {raw_ts!r} is not an integer"
            else:
                if timestamp < 0:
                    reason = "timestamp is negative"
                elif not user or not beacon:
                    reason = "empty user or beacon id"
                elif any(ch in user or ch in beacon for ch in (":", ",")):
                    reason = "ids may not contain ':' or ','"
        if reason is not None:
            if strict:
                raise MalformedRecord(line_number, reason)
            logger.warning("skipping malformed event record at line %d: %s", line_number, reason)
            continue
        yield EventRecord(timestamp=timestamp, user=user, beacon=beacon)


@dataclass(eq=False)
class Corpus:
    """Preprocessed training set: count matrix, marginals, vocabulary.

    ``counts[j, k]`` is how often user ``users[j]`` fired ``vocabulary[k]``.
    ``user_marginals[j]`` is the user's share of all events and
    ``beacon_marginals[k]`` the beacon's share; both sum to 1.
    """

    users: list[str]
    vocabulary: list[str]
    counts: csr_array
    totals: np.ndarray
    user_marginals: np.ndarray = field(init=False)
    beacon_marginals: np.ndarray = field(init=False)

    def __post_init__(self):
        grand_total = float(self.totals.sum())
        if self.n_users and grand_total <= 0:
            raise ValueError("corpus users must have positive event totals")
        if self.n_users:
            self.user_marginals = self.totals / grand_total
            self.beacon_marginals = np.asarray(self.counts.sum(axis=0)).ravel() / grand_total
            if np.any(self.beacon_marginals <= 0.0):
                raise ValueError("every vocabulary beacon must occur in some history")
        else:
            self.user_marginals = np.zeros(0, dtype=np.float64)
            self.beacon_marginals = np.zeros(0, dtype=np.float64)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_beacons(self) -> int:
        return len(self.vocabulary)

    @cached_property
    def beacon_shares(self) -> csr_array:
        """Row-normalized counts: entry (j, k) is share(beacon k | user j)."""
        shares = self.counts.copy()
        row_lengths = np.diff(shares.indptr)
        shares.data = shares.data / np.repeat(self.totals, row_lengths)
        return shares

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: j for j, u in enumerate(self.users)}

    def distinct_user_counts(self) -> np.ndarray:
        """Number of distinct users that fired each beacon."""
        presence = self.counts.copy()
        presence.data = np.ones_like(presence.data)
        return np.asarray(presence.sum(axis=0)).ravel().astype(np.int64)

    def histories(self) -> list[UserHistory]:
        indptr = self.counts.indptr
        out = []
        for j, user in enumerate(self.users):
            cols = self.counts.indices[indptr[j] : indptr[j + 1]]
            vals = self.counts.data[indptr[j] : indptr[j + 1]]
            counts = {self.vocabulary[k]: int(v) for k, v in zip(cols, vals)}
            out.append(UserHistory(user=user, counts=counts, total=int(self.totals[j])))
        return out

    @classmethod
    def from_histories(cls, histories: Iterable[UserHistory]) -> "Corpus":
        """Build a canonical corpus: users and vocabulary sorted, counts exact."""
        by_user: dict[str, UserHistory] = {}
        beacons: set[str] = set()
        for history in histories:
            if history.user in by_user:
                raise ValueError(f"duplicate user id {history.user!r}")
            if not history.counts:
                raise ValueError(f"user {history.user!r} has an empty history")
            by_user[history.user] = history
            beacons.update(history.counts)
        users = sorted(by_user)
        vocabulary = sorted(beacons)
        beacon_index = {b: k for k, b in enumerate(vocabulary)}
        data: list[float] = []
        indices: list[int] = []
        indptr = [0]
        totals = np.zeros(len(users), dtype=np.int64)
        for j, user in enumerate(users):
            history = by_user[user]
            for beacon in sorted(history.counts):
                indices.append(beacon_index[beacon])
                data.append(float(history.counts[beacon]))
            indptr.append(len(indices))
            totals[j] = history.total
        counts = csr_array(
            (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
            shape=(len(users), len(vocabulary)),
        )
        return cls(users=users, vocabulary=vocabulary, counts=counts, totals=totals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.users == other.users
            and self.vocabulary == other.vocabulary
            and np.array_equal(self.totals, other.totals)
            and self.counts.shape == other.counts.shape
            and np.array_equal(self.counts.toarray(), other.counts.toarray())
        )


def build_corpus(events: Iterable[EventRecord], window_days: int, now: int) -> Corpus:
    """Aggregate in-window events into a corpus.

    Only events with ``now - window_days*86400 <= timestamp <= now`` count.
    ``now`` is always supplied by the caller, never read from the clock.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    horizon = now - window_days * SECONDS_PER_DAY
    aggregated: dict[str, dict[str, int]] = {}
    for event in events:
        if event.timestamp < horizon or event.timestamp > now:
            continue
        user_counts = aggregated.setdefault(event.user, {})
        user_counts[event.beacon] = user_counts.get(event.beacon, 0) + 1
    histories = [UserHistory.from_counts(user, counts) for user, counts in aggregated.items()]
    return Corpus.from_histories(histories)


def filter_beacons(
    corpus: Corpus,
    min_users: int = 3,
    max_user_fraction: float = 0.2,
    sample_size: int | None = None,
    seed: int = 0,
) -> Corpus:
    """Drop head and tail beacons, optionally sample the survivors.

    A beacon seen by fewer than ``min_users`` distinct users is too uncommon
    to keep; one seen by more than ``max_user_fraction`` of users separates
    nothing.  When ``sample_size`` is given and fewer than the survivor
    count, a seeded uniform sample (without replacement) is kept.  Users left
    with empty histories are dropped and all marginals recomputed.
    """
    if min_users < 1:
        raise ValueError("min_users must be >= 1")
    if not 0.0 < max_user_fraction <= 1.0:
        raise ValueError("max_user_fraction must be in (0, 1]")
    if corpus.n_users == 0:
        raise EmptyCorpus("cannot filter an empty corpus")
    distinct = corpus.distinct_user_counts()
    keep = (distinct >= min_users) & (distinct <= max_user_fraction * corpus.n_users)
    survivors = np.flatnonzero(keep)
    if sample_size is not None and sample_size < len(survivors):
        rng = np.random.Generator(np.random.PCG64(seed))
        chosen = rng.choice(len(survivors), size=sample_size, replace=False)
        survivors = survivors[np.sort(chosen)]
    if len(survivors) == 0:
        raise FilterTooAggressive("no beacon survived filtering")

    projected = corpus.counts[:, survivors]
    new_totals = np.asarray(projected.sum(axis=1)).ravel()
    alive = np.flatnonzero(new_totals > 0)
    if len(alive) == 0:
        raise FilterTooAggressive("every user history became empty after filtering")
    projected = projected[alive]
    projected.eliminate_zeros()
    return Corpus(
        users=[corpus.users[j] for j in alive],
        vocabulary=[corpus.vocabulary[k] for k in survivors],
        counts=csr_array(projected),
        totals=new_totals[alive].astype(np.int64),
    )


def write_corpus(corpus: Corpus, path) -> None:
    """Write per-user sparse count rows: ``user<TAB>total<TAB>b:c,b:c,...``."""
    for token in corpus.users + corpus.vocabulary:
        if any(ch in token for ch in _FORBIDDEN_IN_IDS):
            raise ValueError(f"id {token!r} cannot be represented in the corpus format")
    indptr = corpus.counts.indptr
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for j, user in enumerate(corpus.users):
            cols = corpus.counts.indices[indptr[j] : indptr[j + 1]]
            vals = corpus.counts.data[indptr[j] : indptr[j + 1]]
            cells = ",".join(f"{corpus.vocabulary[k]}:{int(v)}" for k, v in zip(cols, vals))
            handle.write(f"{user}\t{int(corpus.totals[j])}\t{cells}\n")


def read_histories(path) -> list[UserHistory]:
    """Read corpus-format rows as user histories, preserving file order."""
    out = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedRecord(line_number, "expected user<TAB>total<TAB>counts")
            user, raw_total, cells = parts
            counts: dict[str, int] = {}
            try:
                for cell in cells.split(","):
                    beacon, _, raw_count = cell.rpartition(":")
                    counts[beacon] = int(raw_count)
                total = int(raw_total)
            except ValueError as exc:
                raise MalformedRecord(line_number, str(exc)) from exc
            try:
                out.append(UserHistory(user=user, counts=counts, total=total))
            except ValueError as exc:
                raise MalformedRecord(line_number, str(exc)) from exc
    return out


def read_corpus(path) -> Corpus:
    """Load a corpus file back into canonical form (marginals recomputed)."""
    return Corpus.from_histories(read_histories(path))
