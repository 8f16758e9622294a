"""Synthetic event logs with planted clusters, for recovery benchmarks.

Every user gets a true cluster drawn from uniform priors; their events are
i.i.d. beacon draws from that cluster's planted beacon distribution, with
timestamps spread uniformly over the 60 days ending at ``now``.  Two
overlap regimes:

``disjoint``
    The vocabulary is split into contiguous per-cluster blocks and each
    cluster is uniform over its own block.  Supports never overlap, so the
    planted partition is recoverable exactly.

``dirichlet``
    Each cluster's distribution is a Dirichlet(α) draw over the full
    vocabulary.  Small α (default 0.1) gives peaked, specialized clusters
    that still overlap — a harder, more lifelike target.

Generation is single-threaded and consumes one seeded PCG64 stream in a
fixed call order, so a given seed always yields a byte-identical log.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from beaconseg.ingest import SECONDS_PER_DAY, EventRecord

DEFAULT_NOW = 1_700_000_000
WINDOW_DAYS = 60


@dataclass(frozen=True)
class PlantedTruth:
    """The generating model: the oracle that recovery runs are scored against."""

    k_true: int
    true_priors: np.ndarray
    true_beacon_given_cluster: np.ndarray
    user_labels: Mapping[str, int]
    vocabulary: tuple[str, ...]


def _planted_distributions(
    k_true: int, n_beacons: int, overlap: str, alpha: float, rng: np.random.Generator
) -> np.ndarray:
    if overlap == "disjoint":
        rows = np.zeros((k_true, n_beacons), dtype=np.float64)
        for cluster, block in enumerate(np.array_split(np.arange(n_beacons), k_true)):
            rows[cluster, block] = 1.0 / len(block)
        return rows
    return rng.dirichlet(np.full(n_beacons, alpha), size=k_true)


def generate(
    k_true: int,
    n_users: int,
    n_beacons: int,
    events_per_user_range: tuple[int, int],
    overlap: str = "disjoint",
    alpha: float = 0.1,
    seed: int = 0,
    now: int = DEFAULT_NOW,
) -> tuple[list[EventRecord], PlantedTruth]:
    """Sample an event log plus the truth that generated it."""
    low, high = events_per_user_range
    if k_true < 1:
        raise ValueError("k_true must be >= 1")
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if n_beacons < k_true:
        raise ValueError("need at least one beacon per cluster")
    if low < 1 or high < low:
        raise ValueError("events_per_user_range must satisfy 1 <= low <= high")
    if overlap not in ("disjoint", "dirichlet"):
        raise ValueError(f"overlap must be 'disjoint' or 'dirichlet', got {overlap!r}")
    if alpha <= 0.0:
        raise ValueError("alpha must be > 0")
    if now < WINDOW_DAYS * SECONDS_PER_DAY:
        raise ValueError("now is too early to hold a 60-day window")

    # Key the stream so a pipeline reusing one --seed for both gen and train
    # cannot hand the trainer an init correlated with the planted labels.
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))
    distributions = _planted_distributions(k_true, n_beacons, overlap, alpha, rng)
    cumulative = np.cumsum(distributions, axis=1)

    user_width = len(str(n_users - 1))
    beacon_width = len(str(n_beacons - 1))
    vocabulary = tuple(f"b{i:0{beacon_width}d}" for i in range(n_beacons))

    labels = rng.integers(0, k_true, size=n_users)
    event_counts = rng.integers(low, high + 1, size=n_users)
    window_start = now - WINDOW_DAYS * SECONDS_PER_DAY

    events: list[EventRecord] = []
    user_labels: dict[str, int] = {}
    for j in range(n_users):
        user = f"u{j:0{user_width}d}"
        user_labels[user] = int(labels[j])
        m = int(event_counts[j])
        draws = rng.random(m)
        beacon_idx = np.searchsorted(cumulative[labels[j]], draws, side="right")
        beacon_idx = np.minimum(beacon_idx, n_beacons - 1)
        timestamps = rng.integers(window_start, now + 1, size=m)
        for t in range(m):
            events.append(
                EventRecord(
                    timestamp=int(timestamps[t]),
                    user=user,
                    beacon=vocabulary[beacon_idx[t]],
                )
            )
    truth = PlantedTruth(
        k_true=k_true,
        true_priors=np.full(k_true, 1.0 / k_true),
        true_beacon_given_cluster=distributions,
        user_labels=user_labels,
        vocabulary=vocabulary,
    )
    return events, truth


def write_events(events: list[EventRecord], path) -> None:
    """Event log TSV: ``timestamp<TAB>user<TAB>beacon``, one event per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for event in events:
            handle.write(f"{event.timestamp}\t{event.user}\t{event.beacon}\n")


def write_truth(truth: PlantedTruth, path) -> None:
    """Planted labels TSV: ``user<TAB>true_cluster``, sorted by user."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for user in sorted(truth.user_labels):
            handle.write(f"{user}\t{truth.user_labels[user]}\n")
