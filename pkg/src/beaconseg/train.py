"""EM training of the beacon-cluster model, hard or soft, deterministically.

The model assumes cluster and user are independent given a beacon, so the
expectation step scores users straight from the beacon tables:

    resp(c | u)  ∝  sum_b  prior(c) * p(b | c) / marginal(b) * share(b | u)

with ``marginal(b)`` the corpus-wide empirical beacon share.  Soft mode
keeps the renormalized vector; hard mode collapses it to one-hot at the
argmax.  The maximization step then rebuilds the tables:

    prior(c)   = sum_u  weight(u) * resp(c | u)
    p(b | c)   = sum_u  share(b | u) * resp(c | u) * weight(u) / prior(c)

with ``weight(u)`` the user's share of all events.

Determinism contract: the expectation step is row-independent, and the
maximization step always reduces per-user partial sums over a fixed
64-block structure (a function of corpus size alone), combined in block
order.  Training output is therefore bit-identical for any thread count
and any work-shard count; those knobs only change speed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from beaconseg.errors import EmptyCorpus, InitInfeasible, NumericalFailure
from beaconseg.ingest import Corpus
from beaconseg.model import ClusterModel

REDUCE_BLOCKS = 64

IterationCallback = Callable[[int, np.ndarray, np.ndarray], None]


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs.  ``(corpus, config)`` fully determine the output."""

    k: int
    mode: str = "hard"
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    shards: int = 64
    smoothing: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"mode must be 'hard' or 'soft', got {self.mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be > 0")
        if self.shards < 1:
            raise ValueError("shards must be >= 1")
        if self.smoothing < 0.0:
            raise ValueError("smoothing must be >= 0")


@dataclass
class TraceRow:
    iteration: int
    log_objective: float
    max_param_delta: float


@dataclass
class TrainState:
    """Mutable snapshot of an EM run after some iteration."""

    priors: np.ndarray
    beacon_given_cluster: np.ndarray
    responsibilities: np.ndarray
    iteration: int = 0
    objective_trace: list[TraceRow] = field(default_factory=list)
    flagged_clusters: tuple[int, ...] = ()


@dataclass
class TrainResult:
    model: ClusterModel
    trace: list[TraceRow]
    flagged_clusters: tuple[int, ...]
    iterations: int
    converged: bool


def _reduce_blocks(n_rows: int) -> list[tuple[int, int]]:
    """Fixed reduction structure: depends on the corpus size only."""
    n_blocks = min(REDUCE_BLOCKS, n_rows)
    base, extra = divmod(n_rows, n_blocks)
    bounds = []
    lo = 0
    for i in range(n_blocks):
        hi = lo + base + (1 if i < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def _run_tasks(work: Sequence, shards: int, threads: int, fn: Callable):
    """Apply ``fn`` to groups of work items; results come back in input order.

    ``shards`` sets the task granularity and ``threads`` the concurrency;
    neither can change the values computed, only when they are computed.
    """
    n_tasks = max(1, min(shards, len(work)))
    boundaries = np.linspace(0, len(work), n_tasks + 1).astype(int)
    tasks = [work[boundaries[t] : boundaries[t + 1]] for t in range(n_tasks)]
    tasks = [t for t in tasks if t]
    if threads <= 1:
        grouped = [[fn(item) for item in task] for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grouped = list(pool.map(lambda task: [fn(item) for item in task], tasks))
    return [result for group in grouped for result in group]


def _ordered_sum(parts: list[np.ndarray]) -> np.ndarray:
    total = parts[0].copy()
    for part in parts[1:]:
        total += part
    return total


def _cluster_posteriors(
    priors: np.ndarray,
    beacon_given_cluster: np.ndarray,
    corpus: Corpus,
    shards: int,
    threads: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw per-user cluster scores and their per-user normalization."""
    weight_matrix = (beacon_given_cluster / corpus.beacon_marginals[np.newaxis, :]).T
    shares = corpus.beacon_shares
    blocks = _reduce_blocks(corpus.n_users)

    def score_block(bounds: tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        return (shares[lo:hi] @ weight_matrix) * priors[np.newaxis, :]

    raw = np.vstack(_run_tasks(blocks, shards, threads, score_block))
    mass = raw.sum(axis=1)
    if np.any(mass <= 0.0) or not np.all(np.isfinite(mass)):
        raise NumericalFailure("a user received no positive cluster score")
    return raw, raw / mass[:, np.newaxis]


def _harden(raw_scores: np.ndarray) -> np.ndarray:
    winners = np.argmax(raw_scores, axis=1)
    one_hot = np.zeros_like(raw_scores)
    one_hot[np.arange(raw_scores.shape[0]), winners] = 1.0
    return one_hot


def _log_objective(posteriors: np.ndarray) -> float:
    positive = posteriors[posteriors > 0.0]
    return float(np.log(positive).sum())


def init_random(corpus: Corpus, config: TrainConfig) -> TrainState:
    """Seeded uniform assignment of users to clusters, plus one maximization.

    Clusters that receive no user keep a zero prior (no resampling, so the
    run stays deterministic); they are flagged and their beacon row is
    uniform.
    """
    if corpus.n_users == 0:
        raise EmptyCorpus("cannot initialize on an empty corpus")
    if config.k > corpus.n_users:
        raise InitInfeasible(f"k={config.k} exceeds the {corpus.n_users} available users")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    assignment = rng.integers(0, config.k, size=corpus.n_users)
    responsibilities = np.zeros((corpus.n_users, config.k), dtype=np.float64)
    responsibilities[np.arange(corpus.n_users), assignment] = 1.0
    priors, beacon_given_cluster = maximization_step(
        responsibilities, corpus, smoothing=config.smoothing
    )
    return TrainState(
        priors=priors,
        beacon_given_cluster=beacon_given_cluster,
        responsibilities=responsibilities,
        flagged_clusters=empty_clusters(priors),
    )


def expectation_step(
    state: TrainState, corpus: Corpus, config: TrainConfig, threads: int = 1
) -> np.ndarray:
    """Per-user cluster responsibilities under the current parameters.

    Soft mode returns rows normalized to 1; hard mode returns one-hot rows
    at the argmax (ties toward the lowest cluster index).
    """
    raw, posteriors = _cluster_posteriors(
        state.priors, state.beacon_given_cluster, corpus, config.shards, threads
    )
    if config.mode == "hard":
        return _harden(raw)
    return posteriors


def maximization_step(
    responsibilities: np.ndarray,
    corpus: Corpus,
    threads: int = 1,
    smoothing: float = 0.0,
    shards: int = REDUCE_BLOCKS,
) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild cluster priors and per-cluster beacon distributions.

    Empty clusters (zero prior) get a uniform beacon row; detect them with
    :func:`empty_clusters`.  With ``smoothing`` > 0, every beacon row is
    mixed with that much additive mass per beacon and renormalized.
    """
    n_users, k = responsibilities.shape
    if n_users != corpus.n_users:
        raise ValueError("responsibilities row count does not match the corpus")
    shares = corpus.beacon_shares
    weighted = responsibilities * corpus.user_marginals[:, np.newaxis]
    blocks = _reduce_blocks(n_users)

    def partial(bounds: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = bounds
        chunk = weighted[lo:hi]
        return chunk.sum(axis=0), shares[lo:hi].T @ chunk

    parts = _run_tasks(blocks, shards, threads, partial)
    priors = _ordered_sum([p for p, _ in parts])
    beacon_mass = _ordered_sum([m for _, m in parts])

    n_beacons = corpus.n_beacons
    beacon_given_cluster = np.empty((k, n_beacons), dtype=np.float64)
    populated = priors > 0.0
    beacon_given_cluster[populated] = beacon_mass.T[populated] / priors[populated, np.newaxis]
    beacon_given_cluster[~populated] = 1.0 / n_beacons
    if smoothing > 0.0:
        beacon_given_cluster = (beacon_given_cluster + smoothing) / (1.0 + smoothing * n_beacons)
    return priors, beacon_given_cluster


def empty_clusters(priors: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(priors == 0.0))


def _check_finite(priors: np.ndarray, beacon_given_cluster: np.ndarray, iteration: int) -> None:
    if not (np.all(np.isfinite(priors)) and np.all(np.isfinite(beacon_given_cluster))):
        raise NumericalFailure("non-finite parameter value", iteration=iteration)


def train(
    corpus: Corpus,
    config: TrainConfig,
    threads: int = 1,
    on_iteration: IterationCallback | None = None,
) -> TrainResult:
    """Alternate expectation and maximization until parameters settle.

    Stops when the largest absolute change across all priors and all beacon
    probabilities drops below ``config.tol``, or after ``max_iters``.  The
    per-iteration trace records the log of the product of positive
    normalized cluster scores over all users (taken before hard assignment,
    so it stays informative in hard mode), plus the parameter delta.
    ``on_iteration(iteration, priors, beacon_given_cluster)`` fires after
    every maximization.
    """
    state = init_random(corpus, config)
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iters + 1):
        raw, posteriors = _cluster_posteriors(
            state.priors, state.beacon_given_cluster, corpus, config.shards, threads
        )
        responsibilities = _harden(raw) if config.mode == "hard" else posteriors
        priors, beacon_given_cluster = maximization_step(
            responsibilities, corpus, threads=threads,
            smoothing=config.smoothing, shards=config.shards,
        )
        _check_finite(priors, beacon_given_cluster, iteration)
        delta = max(
            float(np.max(np.abs(priors - state.priors))),
            float(np.max(np.abs(beacon_given_cluster - state.beacon_given_cluster))),
        )
        state.priors = priors
        state.beacon_given_cluster = beacon_given_cluster
        state.responsibilities = responsibilities
        state.iteration = iteration
        state.objective_trace.append(TraceRow(iteration, _log_objective(posteriors), delta))
        if on_iteration is not None:
            on_iteration(iteration, priors, beacon_given_cluster)
        if delta < config.tol:
            converged = True
            break
    state.flagged_clusters = empty_clusters(state.priors)
    model = ClusterModel.from_parameters(
        state.priors,
        state.beacon_given_cluster,
        corpus.vocabulary,
        flagged_clusters=state.flagged_clusters,
    )
    return TrainResult(
        model=model,
        trace=state.objective_trace,
        flagged_clusters=state.flagged_clusters,
        iterations=iteration,
        converged=converged,
    )


def write_trace(rows: list[TraceRow], path) -> None:
    """Objective trace CSV: ``iter,log_objective,max_param_delta``."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("iter,log_objective,max_param_delta\n")
        for row in rows:
            handle.write(f"{row.iteration},{row.log_objective!r},{row.max_param_delta!r}\n")


def write_flagged_report(flagged: tuple[int, ...], path) -> None:
    """One line per cluster that ended training empty."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        if not flagged:
            handle.write("# no flagged clusters\n")
        for cluster in flagged:
            handle.write(f"{cluster}\tempty cluster: zero prior, uniform beacon row\n")
