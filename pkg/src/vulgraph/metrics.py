"""Binary-classification metrics, node-count-bucketed accuracy, and
embedding export for external 2-D projection tools.

Zero-denominator cases (no predicted positives, no true positives, ...)
report the affected metric as 0.0 and set a degenerate flag instead of
raising: small imbalanced runs hit these legitimately and evaluation must
finish.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import InputError

DEFAULT_BUCKET_EDGES = (25, 50, 100, 200, 300)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds: Sequence[float], labels: Sequence[int],
              threshold: float = 0.5) -> ConfusionCounts:
    if len(preds) != len(labels):
        raise InputError(f"{len(preds)} predictions vs {len(labels)} labels")
    tp = fp = tn = fn = 0
    for i, (p, y) in enumerate(zip(preds, labels)):
        if y not in (0, 1):
            raise InputError(f"label {i}: must be 0 or 1, got {y!r}")
        hard = int(p >= threshold)
        if hard == 1 and y == 1:
            tp += 1
        elif hard == 1 and y == 0:
            fp += 1
        elif hard == 0 and y == 0:
            tn += 1
        else:
            fn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def compute_metrics(preds: Sequence[float], labels: Sequence[int],
                    threshold: float = 0.5) -> dict:
    """Accuracy, precision, recall, F1 over probability predictions.

    precision = TP/(TP+FP), recall = TP/(TP+FN), F1 = 2PR/(P+R); any metric
    whose denominator is zero comes back 0.0 with its degenerate flag set.
    """
    if len(preds) == 0:
        raise InputError("cannot compute metrics on an empty set")
    c = confusion(preds, labels, threshold)
    degenerate = {
        "precision": c.tp + c.fp == 0,
        "recall": c.tp + c.fn == 0,
        "f1": False,
    }
    precision = 0.0 if degenerate["precision"] else c.tp / (c.tp + c.fp)
    recall = 0.0 if degenerate["recall"] else c.tp / (c.tp + c.fn)
    if precision + recall == 0.0:
        degenerate["f1"] = True
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "counts": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
        "degenerate": degenerate,
    }


@dataclass(frozen=True)
class Bucket:
    """One half-open node-count interval (lo, hi], hi=None meaning infinity."""

    lo: int
    hi: Optional[int]
    count: int
    correct: int

    @property
    def accuracy(self) -> Optional[float]:
        return None if self.count == 0 else self.correct / self.count

    @property
    def label(self) -> str:
        return f"({self.lo}, {self.hi}]" if self.hi is not None else f"({self.lo}, inf)"


@dataclass(frozen=True)
class BucketedReport:
    buckets: tuple[Bucket, ...]

    @property
    def total(self) -> int:
        return sum(b.count for b in self.buckets)

    @property
    def weighted_accuracy(self) -> float:
        return sum(b.correct for b in self.buckets) / self.total

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["range", "lo", "hi", "count", "accuracy"])
            for b in self.buckets:
                acc = "" if b.accuracy is None else repr(b.accuracy)
                hi = "" if b.hi is None else b.hi
                w.writerow([b.label, b.lo, hi, b.count, acc])


def bucketed_accuracy(preds: Sequence[float], labels: Sequence[int],
                      node_counts: Sequence[int],
                      edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
                      threshold: float = 0.5) -> BucketedReport:
    """Per-bucket accuracy, sample assignment by pre-refinement node count.

    A count lands in (edges[i-1], edges[i]] — upper-inclusive — with an extra
    unbounded bucket above the last edge.
    """
    if not (len(preds) == len(labels) == len(node_counts)):
        raise InputError("preds, labels and node_counts must have equal length")
    if any(b <= a for a, b in zip(edges, edges[1:])) or (edges and edges[0] <= 0):
        raise InputError(f"bucket edges must be strictly increasing and positive, got {edges!r}")
    bounds = [0, *edges]
    counts = [0] * (len(edges) + 1)
    correct = [0] * (len(edges) + 1)
    for p, y, n in zip(preds, labels, node_counts):
        i = len(edges)
        for j, hi in enumerate(edges):
            if n <= hi:
                i = j
                break
        counts[i] += 1
        correct[i] += int(int(p >= threshold) == y)
    buckets = tuple(
        Bucket(lo=bounds[i], hi=(edges[i] if i < len(edges) else None),
               count=counts[i], correct=correct[i])
        for i in range(len(edges) + 1))
    return BucketedReport(buckets=buckets)


def export_embeddings(predictions: Sequence, labels: Sequence[int], path) -> None:
    """Tab-separated embedding dump: name, label, one column per dimension.

    Row order follows the input order so external projections stay aligned
    with the evaluation set.
    """
    if len(predictions) != len(labels):
        raise InputError(f"{len(predictions)} predictions vs {len(labels)} labels")
    dim = len(predictions[0].embedding) if predictions else 0
    with open(path, "w") as fh:
        header = ["name", "label", *(f"e{i}" for i in range(dim))]
        fh.write("\t".join(header) + "\n")
        for pred, y in zip(predictions, labels):
            row = [pred.name, str(int(y)), *(repr(v) for v in pred.embedding)]
            fh.write("\t".join(row) + "\n")
