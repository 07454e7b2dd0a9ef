"""Partition agreement: Rand index, adjusted Rand index, cross-tabulation."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "CrossTab",
    "DegeneratePartitionWarning",
    "adjusted_rand_index",
    "contingency",
    "cross_tab",
    "rand_index",
]


class DegeneratePartitionWarning(UserWarning):
    """Both partitions are trivial, so chance-corrected agreement is undefined."""


def _check(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("partitions must be 1-D label vectors")
    if a.shape != b.shape:
        raise ValueError(f"partition lengths differ: {a.size} != {b.size}")
    if a.size < 1:
        raise ValueError("partitions must be non-empty")
    return a, b


def _first_appearance(labels) -> list:
    seen: dict = {}
    for lab in labels.tolist():
        seen.setdefault(lab, len(seen))
    return list(seen)


def contingency(a, b) -> np.ndarray:
    """Counts ``n_ij``; rows and columns follow sorted label order."""
    a, b = _check(a, b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _comb2(v) -> int:
    return sum(int(k) * (int(k) - 1) // 2 for k in np.asarray(v).ravel())


def _pair_counts(a, b):
    table = contingency(a, b)
    n = int(table.sum())
    both = _comb2(table)
    rows = _comb2(table.sum(axis=1))
    cols = _comb2(table.sum(axis=0))
    return n, both, rows, cols


def rand_index(a: Sequence, b: Sequence) -> float:
    """Fraction of item pairs on which two partitions agree.

    A single item has no pairs; the index is then 1 by convention.
    """
    n, both, rows, cols = _pair_counts(a, b)
    total = n * (n - 1) // 2
    if total == 0:
        return 1.0
    agree = total + 2 * both - rows - cols
    return agree / total


def adjusted_rand_index(a: Sequence, b: Sequence) -> float:
    """Hubert-Arabie adjusted Rand index, computed in exact integer and
    rational arithmetic.

    When the expected and maximum index coincide (both partitions trivial)
    the ratio is undefined; 0 is returned and a
    :class:`DegeneratePartitionWarning` is emitted.
    """
    n, both, rows, cols = _pair_counts(a, b)
    total = n * (n - 1) // 2
    if total == 0:
        expected = Fraction(0)
    else:
        expected = Fraction(rows * cols, total)
    maximum = Fraction(rows + cols, 2)
    if maximum == expected:
        warnings.warn("adjusted Rand index undefined; returning 0", DegeneratePartitionWarning)
        return 0.0
    return float((both - expected) / (maximum - expected))


@dataclass(frozen=True)
class CrossTab:
    """A labelled contingency table of truth (rows) against predictions."""

    row_labels: tuple
    col_labels: tuple
    counts: np.ndarray

    def to_text(self) -> str:
        head = [""] + [str(c) for c in self.col_labels]
        body = [[str(r)] + [str(int(v)) for v in row] for r, row in zip(self.row_labels, self.counts)]
        widths = [max(len(line[j]) for line in [head] + body) for j in range(len(head))]
        fmt = lambda line: "  ".join(s.rjust(w) for s, w in zip(line, widths))  # noqa: E731
        return "\n".join(fmt(line) for line in [head] + body)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth"] + list(self.col_labels))
        for r, row in zip(self.row_labels, self.counts):
            w.writerow([r] + [int(v) for v in row])
        return buf.getvalue()


def cross_tab(truth: Sequence, pred: Sequence) -> CrossTab:
    """Cross-tabulate true labels against predicted labels.

    Rows follow the first appearance of each true label; columns are the
    sorted predicted labels.
    """
    truth, pred = _check(truth, pred)
    rows = _first_appearance(truth)
    cols = sorted(set(pred.tolist()))
    ri = {lab: k for k, lab in enumerate(rows)}
    ci = {lab: k for k, lab in enumerate(cols)}
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for t, p in zip(truth.tolist(), pred.tolist()):
        counts[ri[t], ci[p]] += 1
    return CrossTab(tuple(rows), tuple(cols), counts)
