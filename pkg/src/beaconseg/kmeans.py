"""Weighted-cosine k-means over binary beacon vectors, with centroid merging.

The prior-generation baseline the beacon-cluster model is measured
against.  Users are binary beacon-incidence vectors; each beacon carries a
weight proportional to how many distinct users emitted it, and both the
dot product and the norms honor those weights:

    sim(a, b) = sum_i w_i a_i b_i / (||a||_w ||b||_w),  ||x||_w = sqrt(sum_i w_i x_i^2)

Uniformly scaling the weights cancels out of the ratio, so only the
beacon-popularity *profile* matters.

Clustering starts from one centroid per vocabulary beacon and alternates:
assign every user to the most similar centroid (ties toward the lowest
index), move each centroid to the mean of its members' binary vectors,
drop empty centroids, then greedily merge the most similar centroid pair
while any pair reaches ``merge_threshold`` (merged vectors are averaged
weighted by member count).  The loop ends when a round changes nothing,
or at ``max_rounds``.  The whole procedure is deterministic; ``seed`` is
accepted for interface symmetry with the stochastic trainers but never
consulted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.sparse import csr_array

from beaconseg.errors import EmptyCorpus, ZeroVector
from beaconseg.ingest import Corpus


@dataclass(frozen=True)
class Centroid:
    """A cluster center: sparse beacon weights plus its member headcount."""

    vector: Mapping[str, float]
    member_count: int


def compute_beacon_weights(corpus: Corpus) -> np.ndarray:
    """Per-beacon weight: the number of distinct users who emitted it."""
    return corpus.distinct_user_counts().astype(np.float64)


def weighted_cosine(
    a: Mapping[str, float], b: Mapping[str, float], weights: Mapping[str, float]
) -> float:
    """Cosine similarity between sparse vectors under per-beacon weights.

    Raises :class:`ZeroVector` when either vector has zero weighted norm,
    and ``ValueError`` when a touched beacon has no weight.
    """
    try:
        dot = sum(weights[key] * value * b[key] for key, value in a.items() if key in b)
        norm_a = math.sqrt(sum(weights[key] * value * value for key, value in a.items()))
        norm_b = math.sqrt(sum(weights[key] * value * value for key, value in b.items()))
    except KeyError as exc:
        raise ValueError(f"no weight for beacon {exc.args[0]!r}") from None
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("weighted cosine needs two non-zero vectors")
    return min(dot / (norm_a * norm_b), 1.0)


def _binary_incidence(counts: csr_array) -> csr_array:
    binary = counts.copy()
    binary.data = np.ones_like(binary.data)
    return binary


def _similarity_matrix(
    rows: csr_array | np.ndarray, centroids: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Weighted cosine of every row against every centroid, zeros kept at 0."""
    numerator = rows @ (centroids * weights[np.newaxis, :]).T
    if isinstance(rows, np.ndarray):
        row_norms = np.sqrt((rows * rows) @ weights)
    else:
        row_norms = np.sqrt((rows.multiply(rows)) @ weights)
    centroid_norms = np.sqrt((centroids * centroids) @ weights)
    scale = row_norms[:, np.newaxis] * centroid_norms[np.newaxis, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0.0, np.asarray(numerator) / scale, 0.0)


def _merge_once(
    centroids: np.ndarray,
    member_counts: np.ndarray,
    weights: np.ndarray,
    merge_threshold: float,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Fuse the single most similar centroid pair if it reaches threshold.

    The merged vector is the member-count-weighted average of the pair;
    similarity ties break toward the lowest (i, j) in row-major order.
    """
    if centroids.shape[0] < 2:
        return centroids, member_counts, False
    similarity = _similarity_matrix(centroids, centroids, weights)
    np.fill_diagonal(similarity, -1.0)
    flat = int(np.argmax(similarity))
    i, j = divmod(flat, similarity.shape[1])
    if i > j:
        i, j = j, i
    if similarity[i, j] < merge_threshold:
        return centroids, member_counts, False
    total = member_counts[i] + member_counts[j]
    centroids[i] = (
        member_counts[i] * centroids[i] + member_counts[j] * centroids[j]
    ) / total
    member_counts[i] = total
    keep = np.arange(centroids.shape[0]) != j
    return centroids[keep], member_counts[keep], True


def _merge_pass(
    centroids: np.ndarray,
    member_counts: np.ndarray,
    weights: np.ndarray,
    merge_threshold: float,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Repeatedly fuse the most similar centroid pair at or above threshold."""
    merged_any = False
    while True:
        centroids, member_counts, merged = _merge_once(
            centroids, member_counts, weights, merge_threshold
        )
        if not merged:
            return centroids, member_counts, merged_any
        merged_any = True


def kmeans_cluster(
    corpus: Corpus,
    merge_threshold: float = 0.9,
    max_rounds: int = 50,
    seed: int = 0,
    force_k: int | None = None,
) -> tuple[list[Centroid], np.ndarray]:
    """Cluster users; returns (centroids, per-user centroid indices).

    Assignments align with ``corpus.users``.  With ``force_k`` set, the
    closest centroid pairs keep merging past the threshold until at most
    that many remain, and users are reassigned once at the end.
    """
    del seed  # deterministic procedure; accepted for interface symmetry
    if corpus.n_users == 0:
        raise EmptyCorpus("cannot cluster an empty corpus")
    if not 0.0 < merge_threshold < 1.0:
        raise ValueError("merge_threshold must be strictly between 0 and 1")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    if force_k is not None and force_k < 1:
        raise ValueError("force_k must be >= 1 when given")

    weights = compute_beacon_weights(corpus)
    incidence = _binary_incidence(corpus.counts)
    centroids = np.eye(corpus.n_beacons, dtype=np.float64)
    member_counts = np.zeros(corpus.n_beacons, dtype=np.int64)
    assignments = np.full(corpus.n_users, -1, dtype=np.int64)

    for _ in range(max_rounds):
        similarity = _similarity_matrix(incidence, centroids, weights)
        new_assignments = np.argmax(similarity, axis=1)

        sizes = np.bincount(new_assignments, minlength=centroids.shape[0])
        membership = csr_array(
            (
                np.ones(corpus.n_users, dtype=np.float64),
                (new_assignments, np.arange(corpus.n_users)),
            ),
            shape=(centroids.shape[0], corpus.n_users),
        )
        sums = (membership @ incidence).toarray()
        populated = sizes > 0
        centroids = sums[populated] / sizes[populated, np.newaxis]
        member_counts = sizes[populated]
        relabel = np.cumsum(populated) - 1
        new_assignments = relabel[new_assignments]

        centroids, member_counts, merged = _merge_pass(
            centroids, member_counts, weights, merge_threshold
        )
        if merged:
            refreshed = _similarity_matrix(incidence, centroids, weights)
            new_assignments = np.argmax(refreshed, axis=1)

        stable = np.array_equal(new_assignments, assignments) and not merged
        assignments = new_assignments
        if stable:
            break

    if force_k is not None and centroids.shape[0] > force_k:
        while centroids.shape[0] > force_k:
            centroids, member_counts, merged = _merge_once(
                centroids, member_counts, weights, merge_threshold=-np.inf
            )
            if not merged:
                break
        assignments = np.argmax(_similarity_matrix(incidence, centroids, weights), axis=1)

    vocabulary = corpus.vocabulary
    packed = []
    for row, count in zip(centroids, member_counts):
        support = np.flatnonzero(row > 0.0)
        packed.append(
            Centroid(
                vector={vocabulary[k]: float(row[k]) for k in support},
                member_count=int(count),
            )
        )
    return packed, assignments
