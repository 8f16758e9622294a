"""Command-line pipelines over the library: generate → ingest → train → score.

Every subcommand reads and writes only the documented file formats, so any
pipeline rerun with the same flags and inputs reproduces its outputs byte
for byte.  Stochastic subcommands require an explicit ``--seed``; nothing
is read from environment variables.  Failures print a one-line diagnostic
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from beaconseg.errors import BeaconsegError, EmptyCorpus
from beaconseg.evaluate import (
    format_report,
    objective_report,
    read_assignments,
    read_trace,
    recovery_metrics,
    write_assignments,
)
from beaconseg.ingest import build_corpus, filter_beacons, parse_events, read_corpus, read_histories, write_corpus
from beaconseg.kmeans import kmeans_cluster
from beaconseg.model import assign_user, read_model
from beaconseg.plsa import PLSA_FORMAT, PlsaConfig, plsa_train, read_plsa_model, write_plsa_model, write_plsa_trace
from beaconseg.synthgen import DEFAULT_NOW, generate, write_events, write_truth
from beaconseg.train import TrainConfig, train, write_flagged_report, write_trace

from beaconseg import model as model_io


def cmd_gen(args: argparse.Namespace) -> int:
    events, truth = generate(
        k_true=args.k,
        n_users=args.users,
        n_beacons=args.beacons,
        events_per_user_range=(args.events_min, args.events_max),
        overlap=args.overlap,
        alpha=args.alpha,
        seed=args.seed,
        now=args.now,
    )
    write_events(events, args.out)
    write_truth(truth, args.truth)
    print(f"wrote {len(events)} events to {args.out}, truth to {args.truth}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    if args.sample_beacons is not None and args.seed is None:
        raise ValueError("--seed is required when --sample-beacons is used")
    with open(args.events, "r", encoding="utf-8") as handle:
        events = list(parse_events(handle, strict=not args.lenient))
    if not events:
        raise EmptyCorpus("no events parsed from input")
    now = args.now if args.now is not None else max(e.timestamp for e in events)
    corpus = build_corpus(events, window_days=args.window_days, now=now)
    if args.filter:
        corpus = filter_beacons(
            corpus,
            min_users=args.min_users,
            max_user_fraction=args.max_user_fraction,
            sample_size=args.sample_beacons,
            seed=args.seed if args.seed is not None else 0,
        )
    write_corpus(corpus, args.out)
    print(f"wrote corpus: {corpus.n_users} users, {corpus.n_beacons} beacons -> {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    config = TrainConfig(
        k=args.k,
        mode=args.mode,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
        shards=args.shards,
        smoothing=args.smoothing,
    )
    result = train(corpus, config, threads=args.threads)
    model_io.write_model(result.model, args.out)
    if args.trace:
        write_trace(result.trace, args.trace)
    if args.flagged:
        write_flagged_report(result.flagged_clusters, args.flagged)
    print(
        f"wrote model to {args.out}: iterations={result.iterations} "
        f"converged={result.converged} flagged={len(result.flagged_clusters)}"
    )
    return 0


def cmd_plsa_train(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    config = PlsaConfig(k=args.k, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    result = plsa_train(corpus, config)
    write_plsa_model(result.model, args.out)
    if args.trace:
        write_plsa_trace(result.trace, args.trace)
    print(
        f"wrote pLSA model to {args.out}: iterations={result.iterations} "
        f"converged={result.converged}"
    )
    return 0


def cmd_kmeans(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    centroids, labels = kmeans_cluster(
        corpus,
        merge_threshold=args.merge_threshold,
        max_rounds=args.max_rounds,
        seed=args.seed,
        force_k=args.force_k,
    )
    assignments = {user: int(labels[j]) for j, user in enumerate(corpus.users)}
    write_assignments(assignments, args.out)
    print(f"wrote {len(assignments)} assignments over {len(centroids)} clusters to {args.out}")
    return 0


def cmd_assign(args: argparse.Namespace) -> int:
    try:
        with open(args.model, "r", encoding="utf-8") as handle:
            model_format = json.load(handle).get("format")
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read model file: {exc}") from exc
    histories = read_histories(args.input)
    assignments: dict[str, int] = {}
    if model_format == PLSA_FORMAT:
        model = read_plsa_model(args.model)
        for history in histories:
            assignments[history.user] = model.assign_user(history.user)
    else:
        model = read_model(args.model)
        for history in histories:
            assignments[history.user] = assign_user(model, history).cluster
    write_assignments(assignments, args.out)
    print(f"wrote {len(assignments)} assignments to {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = recovery_metrics(
        read_assignments(args.predicted), read_assignments(args.truth)
    )
    text = "metric,value\n" + "".join(
        f"{name},{metrics[name]!r}\n" for name in ("ari", "purity", "nmi")
    )
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    traces = {}
    for entry in args.trace:
        label, sep, path = entry.partition("=")
        if not sep:
            label, path = Path(entry).stem, entry
        if label in traces:
            raise ValueError(f"duplicate trace label {label!r}")
        traces[label] = read_trace(path)
    header, table = objective_report(traces)
    text = format_report(header, table)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beaconseg",
        description="Cluster users by beacon histories and score new users at run time.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate a synthetic event log with planted clusters")
    gen.add_argument("--k", type=int, required=True, help="number of planted clusters")
    gen.add_argument("--users", type=int, required=True)
    gen.add_argument("--beacons", type=int, required=True)
    gen.add_argument("--events-min", type=int, default=20)
    gen.add_argument("--events-max", type=int, default=60)
    gen.add_argument("--overlap", choices=("disjoint", "dirichlet"), default="disjoint")
    gen.add_argument("--alpha", type=float, default=0.1, help="dirichlet concentration")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--now", type=int, default=DEFAULT_NOW)
    gen.add_argument("--out", default="events.tsv")
    gen.add_argument("--truth", default="truth.tsv")
    gen.set_defaults(func=cmd_gen)

    ingest = commands.add_parser("ingest", help="aggregate an event log into a corpus")
    ingest.add_argument("--events", required=True)
    ingest.add_argument("--out", required=True)
    ingest.add_argument("--window-days", type=int, default=60)
    ingest.add_argument("--now", type=int, default=None,
                        help="window end (default: latest event timestamp)")
    ingest.add_argument("--lenient", action="store_true",
                        help="skip malformed lines instead of failing")
    ingest.add_argument("--filter", action="store_true",
                        help="drop too-rare and too-common beacons")
    ingest.add_argument("--min-users", type=int, default=3)
    ingest.add_argument("--max-user-fraction", type=float, default=0.2)
    ingest.add_argument("--sample-beacons", type=int, default=None,
                        help="after filtering, keep a uniform sample of this many beacons")
    ingest.add_argument("--seed", type=int, default=None)
    ingest.set_defaults(func=cmd_ingest)

    train_cmd = commands.add_parser("train", help="fit the beacon-cluster model with EM")
    train_cmd.add_argument("--corpus", required=True)
    train_cmd.add_argument("--out", required=True)
    train_cmd.add_argument("--k", type=int, default=600)
    train_cmd.add_argument("--mode", choices=("hard", "soft"), default="hard")
    train_cmd.add_argument("--max-iters", type=int, default=100)
    train_cmd.add_argument("--tol", type=float, default=1e-6)
    train_cmd.add_argument("--seed", type=int, required=True)
    train_cmd.add_argument("--threads", type=int, default=1,
                           help="worker threads (affects speed only, never results)")
    train_cmd.add_argument("--shards", type=int, default=64,
                           help="work-shard granularity (affects speed only, never results)")
    train_cmd.add_argument("--smoothing", type=float, default=0.0)
    train_cmd.add_argument("--trace", default=None, help="write objective trace CSV here")
    train_cmd.add_argument("--flagged", default=None, help="write flagged-cluster report here")
    train_cmd.set_defaults(func=cmd_train)

    plsa_cmd = commands.add_parser("plsa-train", help="fit classic pLSA for comparison")
    plsa_cmd.add_argument("--corpus", required=True)
    plsa_cmd.add_argument("--out", required=True)
    plsa_cmd.add_argument("--k", type=int, default=600)
    plsa_cmd.add_argument("--max-iters", type=int, default=100)
    plsa_cmd.add_argument("--tol", type=float, default=1e-6)
    plsa_cmd.add_argument("--seed", type=int, required=True)
    plsa_cmd.add_argument("--trace", default=None, help="write likelihood trace CSV here")
    plsa_cmd.set_defaults(func=cmd_plsa_train)

    kmeans_cmd = commands.add_parser("kmeans", help="weighted-cosine k-means baseline")
    kmeans_cmd.add_argument("--corpus", required=True)
    kmeans_cmd.add_argument("--out", required=True)
    kmeans_cmd.add_argument("--merge-threshold", type=float, default=0.9)
    kmeans_cmd.add_argument("--max-rounds", type=int, default=50)
    kmeans_cmd.add_argument("--force-k", type=int, default=None,
                            help="keep merging closest centroids down to this many")
    kmeans_cmd.add_argument("--seed", type=int, required=True)
    kmeans_cmd.set_defaults(func=cmd_kmeans)

    assign = commands.add_parser("assign", help="assign users from a saved model")
    assign.add_argument("--model", required=True)
    assign.add_argument("--input", required=True, help="histories TSV (corpus files work)")
    assign.add_argument("--out", required=True)
    assign.set_defaults(func=cmd_assign)

    eval_cmd = commands.add_parser("eval", help="score assignments against reference labels")
    eval_cmd.add_argument("--predicted", required=True)
    eval_cmd.add_argument("--truth", required=True)
    eval_cmd.add_argument("--out", default=None, help="also write the metrics CSV here")
    eval_cmd.set_defaults(func=cmd_eval)

    report = commands.add_parser("report", help="merge objective traces side by side")
    report.add_argument("--trace", action="append", required=True,
                        metavar="LABEL=PATH", help="repeatable; bare PATH uses the file stem")
    report.add_argument("--out", default=None)
    report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BeaconsegError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
