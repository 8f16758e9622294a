"""Clustering-quality metrics, advertising-cost metrics, and trace reports.

Recovery metrics compare a predicted user→cluster assignment against a
reference labeling: adjusted Rand index and normalized mutual information
come from scikit-learn, purity is computed directly (each predicted
cluster claims its best-represented true label).  All three ignore label
names, so any renumbering of clusters scores identically.

Cost metrics follow the standard media definitions — effective cost per
action ``cost / actions`` and per click ``cost / clicks`` — and report an
absent value (``None``) when the denominator is zero rather than failing.

Trace tooling merges per-iteration objective CSVs from different trainers
into one side-by-side table with a recomputed non-decreasing flag per
column, padding shorter traces with blanks.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from typing import Mapping, Sequence

from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from beaconseg.errors import MalformedRecord, MalformedTrace, UserSetMismatch

MONOTONE_SLACK = 1e-9


def recovery_metrics(
    predicted: Mapping[str, object], truth: Mapping[str, object]
) -> dict[str, float]:
    """ARI, purity, and NMI of a predicted labeling against the truth.

    Both arguments map user id → cluster label (labels of any hashable
    type; only equality matters).  The user sets must match exactly.
    """
    if not predicted or not truth:
        raise UserSetMismatch("cannot score empty assignments")
    if predicted.keys() != truth.keys():
        only_predicted = len(predicted.keys() - truth.keys())
        only_truth = len(truth.keys() - predicted.keys())
        raise UserSetMismatch(
            f"user sets differ: {only_predicted} only in predicted, "
            f"{only_truth} only in truth"
        )
    users = sorted(predicted)
    predicted_labels = [predicted[user] for user in users]
    true_labels = [truth[user] for user in users]

    joint = Counter(zip(predicted_labels, true_labels))
    best_per_cluster: dict[object, int] = {}
    for (cluster, _), count in joint.items():
        if count > best_per_cluster.get(cluster, 0):
            best_per_cluster[cluster] = count
    purity = sum(best_per_cluster.values()) / len(users)

    return {
        "ari": float(adjusted_rand_score(true_labels, predicted_labels)),
        "purity": float(purity),
        "nmi": float(normalized_mutual_info_score(true_labels, predicted_labels)),
    }


def ecpa(cost: float, actions: int) -> float | None:
    """Effective cost per action; ``None`` when there are no actions."""
    if cost < 0.0:
        raise ValueError("cost must be >= 0")
    if actions < 0:
        raise ValueError("actions must be >= 0")
    if actions == 0:
        return None
    return cost / actions


def ecpc(cost: float, clicks: int) -> float | None:
    """Effective cost per click; ``None`` when there are no clicks."""
    if cost < 0.0:
        raise ValueError("cost must be >= 0")
    if clicks < 0:
        raise ValueError("clicks must be >= 0")
    if clicks == 0:
        return None
    return cost / clicks


def read_trace(path) -> list[tuple[int, float]]:
    """Load an objective trace CSV: header, then ``iter,<value>[,...]`` rows."""
    rows: list[tuple[int, float]] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedTrace(f"{path}: empty trace file") from None
        if len(header) < 2 or header[0] != "iter":
            raise MalformedTrace(f"{path}: expected an 'iter,<objective>' header")
        for line_no, record in enumerate(reader, start=2):
            if len(record) < 2:
                raise MalformedTrace(f"{path}:{line_no}: expected at least 2 columns")
            try:
                iteration = int(record[0])
                value = float(record[1])
            except ValueError as exc:
                raise MalformedTrace(f"{path}:{line_no}: {exc}") from None
            if not math.isfinite(value):
                raise MalformedTrace(f"{path}:{line_no}: non-finite objective value")
            rows.append((iteration, value))
    if not rows:
        raise MalformedTrace(f"{path}: trace has a header but no rows")
    return rows


def objective_report(
    traces: Mapping[str, Sequence[tuple[int, float]]],
) -> tuple[list[str], list[list[str]]]:
    """Merge traces into one table: per trace, a value and a monotone flag.

    Rows align by position; shorter traces pad with blanks.  The
    ``<label>_nondecreasing`` column is recomputed from adjacent values
    (within a slack of 1e-9) rather than trusted from anywhere.
    """
    if not traces:
        raise ValueError("need at least one trace to report on")
    header = ["iter"]
    for label in traces:
        header.extend([label, f"{label}_nondecreasing"])
    depth = max(len(rows) for rows in traces.values())
    table: list[list[str]] = []
    for position in range(depth):
        row = [str(position + 1)]
        for rows in traces.values():
            if position < len(rows):
                value = rows[position][1]
                if position == 0:
                    flag = "true"
                else:
                    flag = "true" if value >= rows[position - 1][1] - MONOTONE_SLACK else "false"
                row.extend([repr(value), flag])
            else:
                row.extend(["", ""])
        table.append(row)
    return header, table


def format_report(header: list[str], table: list[list[str]]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in table)
    return "\n".join(lines) + "\n"


def write_assignments(assignments: Mapping[str, object], path) -> None:
    """Assignments TSV: ``user<TAB>cluster``, sorted by user."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for user in sorted(assignments):
            handle.write(f"{user}\t{assignments[user]}\n")


def read_assignments(path) -> dict[str, str]:
    """Load an assignments (or truth) TSV into user → label."""
    assignments: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise MalformedRecord(line_no, "expected 'user<TAB>cluster'")
            user, label = parts
            if user in assignments:
                raise MalformedRecord(line_no, f"duplicate user {user!r}")
            assignments[user] = label
    return assignments
