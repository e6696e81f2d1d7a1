"""Counting-based information measures over categorical label vectors.

All measures use empirical proportions with ``0 log 0 = 0``. ``log_base`` is
``"natural"`` (default) or ``"two"``; the normalized measures
(:func:`directed_nce`, :func:`mutual_ce`) do not depend on it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InfoflowError, LengthMismatch

LOG_BASES = ("natural", "two")


def _log(p, log_base):
    if log_base == "natural":
        return np.log(p)
    if log_base == "two":
        return np.log2(p)
    raise ValueError(f"log_base must be one of {LOG_BASES}, got {log_base!r}")


def factorize(labels) -> np.ndarray:
    """Map arbitrary hashable labels to integer ids 0..K-1 (first-seen order)."""
    arr = labels if isinstance(labels, np.ndarray) else list(labels)
    if len(arr) == 0:
        raise InfoflowError("label vector is empty")
    ids: dict = {}
    return np.fromiter((ids.setdefault(v, len(ids)) for v in arr), dtype=np.intp, count=len(arr))


def entropy_from_counts(counts, log_base="natural") -> float:
    """Entropy of the distribution given by nonnegative ``counts``.

    Counts are sorted first so that equal multisets always give bit-identical
    results, which the permutation tests rely on when counting ties.
    """
    c = np.sort(np.asarray(counts, dtype=float).ravel())
    c = c[c > 0]
    total = c.sum()
    if total == 0 or c.size <= 1:
        return 0.0
    p = c / total
    return float(max(0.0, -np.sum(p * _log(p, log_base))))


def contingency(y, x) -> np.ndarray:
    """Joint count table with rows indexed by the categories of ``x`` and columns by ``y``."""
    yi, xi = factorize(y), factorize(x)
    if yi.size != xi.size:
        raise LengthMismatch(f"label vectors differ in length: {yi.size} vs {xi.size}")
    table = np.zeros((xi.max() + 1, yi.max() + 1), dtype=np.int64)
    np.add.at(table, (xi, yi), 1)
    return table


def shannon_entropy(x, log_base="natural") -> float:
    return entropy_from_counts(np.bincount(factorize(x)), log_base)


def _cond_from_table(table: np.ndarray, log_base) -> float:
    n = table.sum()
    return float(sum(row.sum() / n * entropy_from_counts(row, log_base) for row in table))


def conditional_entropy(y, x, log_base="natural") -> float:
    """H(Y|X) = sum_k p_k H(Y | X = k)."""
    return _cond_from_table(contingency(y, x), log_base)


def information_gain(y, x, log_base="natural") -> float:
    """H(Y) - H(Y|X): information about ``y`` conveyed by ``x``."""
    table = contingency(y, x)
    h_y = entropy_from_counts(table.sum(axis=0), log_base)
    return max(0.0, h_y - _cond_from_table(table, log_base))


def directed_nce(y, x, log_base="natural") -> float:
    """Fraction of the uncertainty of ``y`` left after knowing ``x``: H(Y|X) / H(Y).

    Returns 0 when ``y`` is constant.
    """
    table = contingency(y, x)
    return _directed_from_table(table, log_base)


def _directed_from_table(table, log_base) -> float:
    h_y = entropy_from_counts(table.sum(axis=0), log_base)
    if h_y == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, _cond_from_table(table, log_base) / h_y)))


def mutual_ce(y, x, log_base="natural") -> float:
    """Symmetric mutual conditional entropy, the mean of both directed ratios."""
    table = contingency(y, x)
    return 0.5 * (_directed_from_table(table, log_base) + _directed_from_table(table.T, log_base))


@dataclass(frozen=True)
class EntropyMatrix:
    values: np.ndarray
    feature_names: tuple[str, ...]
    log_base: str = "natural"

    @property
    def m(self) -> int:
        return len(self.feature_names)

    def __getitem__(self, pair) -> float:
        a, b = pair
        i = self.feature_names.index(a) if isinstance(a, str) else a
        j = self.feature_names.index(b) if isinstance(b, str) else b
        return float(self.values[i, j])

    def subset(self, names: Sequence[str]) -> "EntropyMatrix":
        idx = [self.feature_names.index(n) for n in names]
        return EntropyMatrix(self.values[np.ix_(idx, idx)].copy(), tuple(names), self.log_base)

    def to_csv(self, path) -> None:
        """Write the matrix as CSV and its log base to ``<path>.meta.json``."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", *self.feature_names])
            for name, row in zip(self.feature_names, self.values):
                w.writerow([name, *(f"{v:.12g}" for v in row)])
        meta = {"log_base": self.log_base, "m": self.m, "measure": "mutual_conditional_entropy"}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "EntropyMatrix":
        path = Path(path)
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        names = tuple(rows[0][1:])
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        meta_path = Path(str(path) + ".meta.json")
        log_base = "natural"
        if meta_path.exists():
            log_base = json.loads(meta_path.read_text(encoding="utf-8"))["log_base"]
        return cls(values, names, log_base)


def entropy_matrix(mat, feature_subset=None, log_base="natural") -> EntropyMatrix:
    """Pairwise :func:`mutual_ce` over columns of a coded matrix.

    ``mat`` is a :class:`~infoflow.renorm.DigitalCodedMatrix` (or anything with
    ``feature_names`` and ``codes(name)``); ``feature_subset`` defaults to all
    features.
    """
    names = list(mat.feature_names if feature_subset is None else feature_subset)
    if not names:
        raise InfoflowError("feature subset is empty")
    cols = [mat.codes(name) for name in names]
    m = len(names)
    values = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            values[i, j] = values[j, i] = mutual_ce(cols[i], cols[j], log_base)
    return EntropyMatrix(values, tuple(names), log_base)
