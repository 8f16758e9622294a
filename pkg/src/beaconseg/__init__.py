"""User segmentation from beacon (event) histories.

A "beacon" is a tracked user event identified by an opaque string id.
This package clusters users by their beacon histories with a topic model
whose beacon-to-cluster table alone suffices to assign any user (seen or
unseen) to a cluster at run time.  Classic pLSA and a weighted-cosine
k-means clusterer are included as comparison baselines, together with a
synthetic planted-cluster generator and recovery metrics.
"""

from beaconseg.errors import (
    BeaconsegError,
    EmptyCorpus,
    EmptyHistory,
    FilterTooAggressive,
    InitInfeasible,
    InvalidModel,
    MalformedRecord,
    MalformedTrace,
    NoKnownBeacons,
    NumericalFailure,
    UnknownUser,
    UserSetMismatch,
    ZeroVector,
)
from beaconseg.model import (
    Assignment,
    ClusterModel,
    assign_user,
    read_model,
    score_user,
    write_model,
)
from beaconseg.ingest import Corpus, EventRecord, UserHistory, build_corpus, filter_beacons
from beaconseg.train import TrainConfig, TrainResult, TrainState, train
from beaconseg.plsa import PlsaConfig, PlsaModel, plsa_train

__all__ = [
    "Assignment",
    "BeaconsegError",
    "ClusterModel",
    "Corpus",
    "EmptyCorpus",
    "EmptyHistory",
    "EventRecord",
    "FilterTooAggressive",
    "InitInfeasible",
    "InvalidModel",
    "MalformedRecord",
    "MalformedTrace",
    "NoKnownBeacons",
    "NumericalFailure",
    "PlsaConfig",
    "PlsaModel",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "UnknownUser",
    "UserHistory",
    "UserSetMismatch",
    "ZeroVector",
    "assign_user",
    "build_corpus",
    "filter_beacons",
    "plsa_train",
    "read_model",
    "score_user",
    "train",
    "write_model",
]
