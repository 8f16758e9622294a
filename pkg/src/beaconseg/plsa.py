"""Classic pLSA over user/beacon counts, for comparison runs.

This is the standard aspect model: documents are users, words are beacons,
and each document carries its own cluster mixture p(c | d).  That mixture
is a trained parameter, so the model can only ever describe the users it
was fitted on — scoring anyone else raises :class:`UnknownUser`.  (The
beacon-cluster model in :mod:`beaconseg.train` exists precisely to drop
that restriction.)

Expectation:

    q(c | d, w) = p(w | c) p(c | d) / sum_c' p(w | c') p(c' | d)

Maximization:

    p(w | c) ∝ sum_d n(d, w) q(c | d, w)
    p(c | d) = sum_w n(d, w) q(c | d, w) / n(d)

Both updates are applied simultaneously from the same posterior, which
gives the usual EM guarantee: the data log-likelihood

    L = sum_{d,w} n(d, w) log sum_c p(w | c) p(c | d)

never decreases across iterations.  The training loop evaluates the
updates in a fused sparse form that touches only observed (d, w) pairs;
``plsa_e_step``/``plsa_m_step`` spell out the same updates densely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.sparse import coo_array, csr_array

from beaconseg.errors import (
    EmptyCorpus,
    InitInfeasible,
    InvalidModel,
    NumericalFailure,
    UnknownUser,
)
from beaconseg.ingest import Corpus
from beaconseg.model import STOCHASTIC_ATOL

PLSA_FORMAT = "plsa-model"


@dataclass(frozen=True)
class PlsaConfig:
    k: int
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0.0:
            raise ValueError("tol must be >= 0 (0 disables early stopping)")


@dataclass
class PlsaModel:
    """Fitted aspect model: per-cluster word rows and per-user mixtures."""

    k: int
    vocabulary: tuple[str, ...]
    users: tuple[str, ...]
    word_given_cluster: np.ndarray
    cluster_given_doc: np.ndarray
    _user_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._user_index = {user: j for j, user in enumerate(self.users)}

    def score_user(self, user: str) -> np.ndarray:
        """The trained cluster mixture for ``user``; unseen users have none."""
        try:
            row = self._user_index[user]
        except KeyError:
            raise UnknownUser(
                f"user {user!r} was not in the training corpus; "
                "classic pLSA cannot score new users"
            ) from None
        return self.cluster_given_doc[row].copy()

    def assign_user(self, user: str) -> int:
        return int(np.argmax(self.score_user(user)))

    def validate(self, atol: float = STOCHASTIC_ATOL) -> None:
        for name, table in (
            ("word_given_cluster", self.word_given_cluster),
            ("cluster_given_doc", self.cluster_given_doc),
        ):
            if not np.all(np.isfinite(table)):
                raise InvalidModel(f"{name} contains non-finite values")
            if np.any(table < 0.0):
                raise InvalidModel(f"{name} contains negative probabilities")
            sums = table.sum(axis=1)
            if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
                raise InvalidModel(f"{name} rows do not sum to 1")


@dataclass
class PlsaTraceRow:
    iteration: int
    log_likelihood: float


@dataclass
class PlsaResult:
    model: PlsaModel
    trace: list[PlsaTraceRow]
    iterations: int
    converged: bool


def plsa_e_step(word_given_cluster: np.ndarray, cluster_given_doc: np.ndarray) -> np.ndarray:
    """Posterior q(c | d, w) as a dense (docs, clusters, words) tensor.

    Pairs with zero probability under every cluster get posterior 0; they
    carry no count mass in any corpus this step is used on.
    """
    word_given_cluster = np.asarray(word_given_cluster, dtype=np.float64)
    cluster_given_doc = np.asarray(cluster_given_doc, dtype=np.float64)
    joint = cluster_given_doc[:, :, np.newaxis] * word_given_cluster[np.newaxis, :, :]
    denominator = joint.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        posterior = np.where(denominator > 0.0, joint / denominator, 0.0)
    return posterior


def plsa_m_step(counts: np.ndarray, posteriors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Re-estimate (word_given_cluster, cluster_given_doc) from posteriors.

    ``counts`` is the dense (docs, words) event matrix; every document must
    have at least one event.  A cluster with no posterior mass anywhere
    falls back to a uniform word row.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n_docs, n_words = counts.shape
    doc_totals = counts.sum(axis=1)
    if np.any(doc_totals <= 0.0):
        raise ValueError("every document needs at least one event")
    weighted = counts[:, np.newaxis, :] * posteriors
    word_mass = weighted.sum(axis=0)
    cluster_totals = word_mass.sum(axis=1)
    word_given_cluster = np.full_like(word_mass, 1.0 / n_words)
    populated = cluster_totals > 0.0
    word_given_cluster[populated] = word_mass[populated] / cluster_totals[populated, np.newaxis]
    cluster_given_doc = weighted.sum(axis=2) / doc_totals[:, np.newaxis]
    return word_given_cluster, cluster_given_doc


def _init_parameters(
    n_docs: int, n_words: int, k: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Strictly positive random rows, normalized — no cluster starts dead."""
    rng = np.random.Generator(np.random.PCG64(seed))
    word_given_cluster = rng.random((k, n_words)) + 0.1
    word_given_cluster /= word_given_cluster.sum(axis=1, keepdims=True)
    cluster_given_doc = rng.random((n_docs, k)) + 0.1
    cluster_given_doc /= cluster_given_doc.sum(axis=1, keepdims=True)
    return word_given_cluster, cluster_given_doc


def log_likelihood(
    counts: csr_array, word_given_cluster: np.ndarray, cluster_given_doc: np.ndarray
) -> float:
    """Sum of n(d, w) log p(w | d) over observed pairs."""
    nonzero = coo_array(counts)
    mixture = cluster_given_doc @ word_given_cluster
    observed = mixture[nonzero.row, nonzero.col]
    if np.any(observed <= 0.0):
        raise NumericalFailure("an observed pair has zero probability")
    return float(np.sum(nonzero.data * np.log(observed)))


def plsa_train(corpus: Corpus, config: PlsaConfig) -> PlsaResult:
    """Fit classic pLSA to a corpus with EM.

    The trace logs the likelihood of the parameters entering each
    iteration, so row 1 scores the random initialization.  Training stops
    when the largest parameter change drops below ``config.tol`` or at
    ``max_iters``.
    """
    if corpus.n_users == 0:
        raise EmptyCorpus("cannot fit pLSA to an empty corpus")
    if config.k > corpus.n_users:
        raise InitInfeasible(f"k={config.k} exceeds the {corpus.n_users} available users")
    counts = corpus.counts
    nonzero = coo_array(counts)
    doc_totals = corpus.totals.astype(np.float64)
    word_given_cluster, cluster_given_doc = _init_parameters(
        corpus.n_users, corpus.n_beacons, config.k, config.seed
    )
    trace: list[PlsaTraceRow] = []
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iters + 1):
        mixture = cluster_given_doc @ word_given_cluster
        observed = mixture[nonzero.row, nonzero.col]
        if np.any(observed <= 0.0) or not np.all(np.isfinite(observed)):
            raise NumericalFailure("an observed pair has zero probability", iteration=iteration)
        trace.append(
            PlsaTraceRow(iteration, float(np.sum(nonzero.data * np.log(observed))))
        )
        # Fused update: scale counts by 1 / p(w | d) on observed pairs, then
        # both sums over q(c | d, w) collapse to sparse products.
        ratio = csr_array(
            (nonzero.data / observed, (nonzero.row, nonzero.col)), shape=counts.shape
        )
        word_mass = word_given_cluster * (ratio.T @ cluster_given_doc).T
        cluster_totals = word_mass.sum(axis=1)
        new_word = np.full_like(word_mass, 1.0 / corpus.n_beacons)
        populated = cluster_totals > 0.0
        new_word[populated] = word_mass[populated] / cluster_totals[populated, np.newaxis]
        new_doc = cluster_given_doc * (ratio @ word_given_cluster.T)
        new_doc /= doc_totals[:, np.newaxis]
        if not (np.all(np.isfinite(new_word)) and np.all(np.isfinite(new_doc))):
            raise NumericalFailure("non-finite parameter value", iteration=iteration)
        delta = max(
            float(np.max(np.abs(new_word - word_given_cluster))),
            float(np.max(np.abs(new_doc - cluster_given_doc))),
        )
        word_given_cluster, cluster_given_doc = new_word, new_doc
        if config.tol > 0.0 and delta < config.tol:
            converged = True
            break
    model = PlsaModel(
        k=config.k,
        vocabulary=corpus.vocabulary,
        users=corpus.users,
        word_given_cluster=word_given_cluster,
        cluster_given_doc=cluster_given_doc,
    )
    model.validate()
    return PlsaResult(model=model, trace=trace, iterations=iteration, converged=converged)


def write_plsa_model(model: PlsaModel, path) -> None:
    payload = {
        "format": PLSA_FORMAT,
        "k": model.k,
        "vocabulary": list(model.vocabulary),
        "users": list(model.users),
        "word_given_cluster": [[float(v) for v in row] for row in model.word_given_cluster],
        "cluster_given_doc": [[float(v) for v in row] for row in model.cluster_given_doc],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=1)
        handle.write("\n")


def read_plsa_model(path) -> PlsaModel:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidModel(f"cannot read pLSA model file: {exc}") from exc
    if not isinstance(payload, Mapping) or payload.get("format") != PLSA_FORMAT:
        raise InvalidModel(f"not a {PLSA_FORMAT} file")
    try:
        model = PlsaModel(
            k=int(payload["k"]),
            vocabulary=tuple(payload["vocabulary"]),
            users=tuple(payload["users"]),
            word_given_cluster=np.asarray(payload["word_given_cluster"], dtype=np.float64),
            cluster_given_doc=np.asarray(payload["cluster_given_doc"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidModel(f"malformed pLSA model payload: {exc}") from exc
    if model.word_given_cluster.shape != (model.k, len(model.vocabulary)):
        raise InvalidModel("word_given_cluster shape does not match k and vocabulary")
    if model.cluster_given_doc.shape != (len(model.users), model.k):
        raise InvalidModel("cluster_given_doc shape does not match users and k")
    model.validate()
    return model


def write_plsa_trace(rows: list[PlsaTraceRow], path) -> None:
    """Likelihood trace CSV: ``iter,log_likelihood``."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("iter,log_likelihood\n")
        for row in rows:
            handle.write(f"{row.iteration},{row.log_likelihood!r}\n")
