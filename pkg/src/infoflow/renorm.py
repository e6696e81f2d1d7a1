"""Re-normalization of mixed-type feature columns into small digital codes.

Continuous and discrete columns are binned with a possibly-gapped histogram
and coded by bin index. Binary and categorical columns are coded through an
explicit map, an ordinal hint, the binary default, or an anchor column.
"""
from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .entropy import mutual_ce
from .errors import EmptyInput, NoCodingSource, RenormError, UnmappedLabel, ValueOutsideBins
from .ingest import FeatureSpec, RawTable

DEFAULT_MAX_BINS = 10
DEFAULT_GAP_FACTOR = 4.0
MAX_CODE = 9
BINARY_DEFAULT_CODES = (0, 5)

# decisions are taken on min-max normalized values rounded to this many
# decimals, so that affine rescaling cannot flip a tie
_DECIMALS = 12


@dataclass(frozen=True)
class Bin:
    lo: float
    hi: float
    count: int


@dataclass(frozen=True)
class PossiblyGappedHistogram:
    """Ordered bins plus the empty gaps between some consecutive bins.

    Each bin spans the smallest and largest value it holds, so a bin with a
    single distinct value has ``lo == hi``. Consecutive bins are separated by
    an empty interval; it is listed in ``gaps`` when wide enough to count as a
    hole in the support. A value falling inside a non-gap separation belongs
    to the nearer bin, the right one on an exact midpoint (half-open bins).
    """

    bins: tuple[Bin, ...]
    gaps: tuple[tuple[float, float], ...]
    source_n: int

    @property
    def k(self) -> int:
        return len(self.bins)

    @property
    def counts(self) -> np.ndarray:
        return np.array([b.count for b in self.bins])

    def locate(self, value: float) -> int:
        i = bisect_right([b.lo for b in self.bins], value) - 1
        if i < 0:
            raise ValueOutsideBins(f"value {value!r} lies below the first bin")
        if value <= self.bins[i].hi:
            return i
        if i + 1 == len(self.bins) or self._is_gap(i):
            raise ValueOutsideBins(f"value {value!r} lies outside every bin")
        mid = (self.bins[i].hi + self.bins[i + 1].lo) / 2
        return i + 1 if value >= mid else i

    def _is_gap(self, i: int) -> bool:
        return (self.bins[i].hi, self.bins[i + 1].lo) in self.gaps

    def cdf(self, t: float) -> float:
        """Piecewise-uniform distribution function implied by the bins."""
        total = 0.0
        for b in self.bins:
            if t < b.lo:
                break
            if t >= b.hi:
                total += b.count
            else:
                total += b.count * (t - b.lo) / (b.hi - b.lo)
        return total / self.source_n

    def to_dict(self) -> dict:
        return {
            "source_n": self.source_n,
            "bins": [{"lo": b.lo, "hi": b.hi, "count": b.count} for b in self.bins],
            "gaps": [{"lo": lo, "hi": hi} for lo, hi in self.gaps],
        }

    @classmethod
    def from_dict(cls, d) -> "PossiblyGappedHistogram":
        return cls(
            bins=tuple(Bin(float(b["lo"]), float(b["hi"]), int(b["count"])) for b in d["bins"]),
            gaps=tuple((float(g["lo"]), float(g["hi"])) for g in d["gaps"]),
            source_n=int(d["source_n"]),
        )


def _widest_gap_partitions(spacing: np.ndarray, max_k: int) -> dict[int, tuple[int, ...]]:
    # cut positions are indices e meaning "between unique value e and e+1"
    order = sorted(range(spacing.size), key=lambda e: (-spacing[e], e))
    return {k: tuple(sorted(order[: k - 1])) for k in range(1, max_k + 1)}


def _ward_partitions(z: np.ndarray, counts: np.ndarray, max_k: int) -> dict[int, tuple[int, ...]]:
    """Adjacent-only Ward agglomeration of the sorted unique values."""
    # each segment: [first_idx, last_idx, weight, weighted_sum]
    segs = [[i, i, float(c), float(c) * zi] for i, (zi, c) in enumerate(zip(z, counts))]
    out = {}
    if len(segs) <= max_k:
        out[len(segs)] = tuple(range(len(segs) - 1))
    while len(segs) > 1:
        best, best_cost = 0, math.inf
        for i in range(len(segs) - 1):
            a, b = segs[i], segs[i + 1]
            d = a[3] / a[2] - b[3] / b[2]
            cost = round(a[2] * b[2] / (a[2] + b[2]) * d * d, _DECIMALS)
            if cost < best_cost:
                best, best_cost = i, cost
        a, b = segs[best], segs[best + 1]
        segs[best : best + 2] = [[a[0], b[1], a[2] + b[2], a[3] + b[3]]]
        if len(segs) <= max_k:
            out[len(segs)] = tuple(s[1] for s in segs[:-1])
    return out


def _sup_cdf_error(z, counts, cuts) -> float:
    """Sup-norm distance between the empirical CDF and the binned piecewise-uniform CDF."""
    n = counts.sum()
    edges = _bin_edges(z, cuts)
    cum = np.concatenate([[0], np.cumsum(_bin_counts(counts, cuts))]) / n
    cz = np.concatenate([[0], np.cumsum(counts)]) / n
    # F and G are monotone, F is flat between data points and G is linear or
    # flat between bin edges (which are data points), so the sup is attained
    # at a data point, approached from the left or the right
    f_right = cz[1:]
    f_left = cz[:-1]
    g_right = np.empty(z.size)
    g_left = np.empty(z.size)
    for i, (lo, hi) in enumerate(edges):
        sel = (z >= lo) & (z <= hi)
        if hi == lo:
            g_left[sel], g_right[sel] = cum[i], cum[i + 1]
        else:
            g = cum[i] + (cum[i + 1] - cum[i]) * (z[sel] - lo) / (hi - lo)
            g_left[sel] = g_right[sel] = g
    return float(max(np.max(np.abs(f_right - g_right)), np.max(np.abs(f_left - g_left))))


def _bin_counts(counts, cuts) -> np.ndarray:
    bounds = [0, *(c + 1 for c in cuts), counts.size]
    return np.array([counts[bounds[i] : bounds[i + 1]].sum() for i in range(len(bounds) - 1)])


def _bin_edges(u, cuts) -> list[tuple[float, float]]:
    bounds = [0, *(c + 1 for c in cuts), len(u)]
    return [(u[bounds[i]], u[bounds[i + 1] - 1]) for i in range(len(bounds) - 1)]


def build_gapped_histogram(values, max_bins: int = DEFAULT_MAX_BINS, gap_factor: float = DEFAULT_GAP_FACTOR) -> PossiblyGappedHistogram:
    """Fit a possibly-gapped histogram to a 1-D sample.

    Candidate partitions for every bin count ``k <= max_bins`` come from two
    merge trees over the sorted distinct values: cutting the ``k - 1`` widest
    empty intervals, and adjacent-only Ward agglomeration. Each bin spans the
    data it holds and carries a uniform density (a bin with one distinct value
    is a point mass). The chosen ``k`` is the smallest whose sup-norm CDF error
    is within ``1 / sqrt(n)``, the sampling noise of the empirical CDF; if no
    candidate gets there, the most accurate one (fewest bins on ties) is used.
    A cut becomes a gap when its empty interval is wider than ``gap_factor``
    times the median spacing between distinct values.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("cannot build a histogram from an empty vector")
    if not np.all(np.isfinite(x)):
        raise RenormError("histogram input contains non-finite values")
    if max_bins < 1:
        raise ValueError("max_bins must be >= 1")
    if not gap_factor > 0:
        raise ValueError("gap_factor must be > 0")
    n = x.size
    u, counts = np.unique(x, return_counts=True)
    if u.size == 1:
        return PossiblyGappedHistogram((Bin(float(u[0]), float(u[0]), n),), (), n)

    z = np.round((u - u[0]) / (u[-1] - u[0]), _DECIMALS)
    spacing = np.round(np.diff(z), _DECIMALS)
    gap_flags = spacing > round(gap_factor * float(np.median(spacing)), _DECIMALS)
    max_k = min(max_bins, u.size)
    tolerance = round(1.0 / math.sqrt(n), _DECIMALS)

    candidates = []
    for family, parts in enumerate((_widest_gap_partitions(spacing, max_k), _ward_partitions(z, counts, max_k))):
        for k, cuts in parts.items():
            err = round(_sup_cdf_error(z, counts, cuts), _DECIMALS)
            candidates.append((k, err, family, cuts))
    adequate = [c for c in candidates if c[1] <= tolerance]
    if adequate:
        chosen = min(adequate, key=lambda c: (c[0], c[1], c[2]))
    else:
        chosen = min(candidates, key=lambda c: (c[1], c[0], c[2]))
    cuts = chosen[3]
    bin_counts = _bin_counts(counts, cuts)
    bins = tuple(Bin(float(lo), float(hi), int(c)) for (lo, hi), c in zip(_bin_edges(u, cuts), bin_counts))
    gaps = tuple((float(u[c]), float(u[c + 1])) for c in cuts if gap_flags[c])
    return PossiblyGappedHistogram(bins, gaps, n)


@dataclass
class DigitalColumn:
    codes: np.ndarray
    code_meaning: dict
    source_feature: str
    method: str = ""
    histogram: PossiblyGappedHistogram | None = None

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)

    def to_dict(self) -> dict:
        meaning = {}
        for code, m in self.code_meaning.items():
            meaning[str(code)] = list(m)
        out = {"feature": self.source_feature, "method": self.method, "code_meaning": meaning}
        if self.histogram is not None:
            out["histogram"] = self.histogram.to_dict()
        return out


def code_continuous(values, hist: PossiblyGappedHistogram, source_feature: str = "") -> DigitalColumn:
    """Code each value by the 0-based index of its bin."""
    codes = np.array([hist.locate(float(v)) for v in np.asarray(values, dtype=float).ravel()], dtype=np.int64)
    meaning = {i: (b.lo, b.hi) for i, b in enumerate(hist.bins)}
    return DigitalColumn(codes, meaning, source_feature, "histogram", hist)


def _label_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def sorted_labels(labels) -> list[str]:
    return sorted(set(labels), key=_label_sort_key)


def ordinal_codes(n_levels: int) -> list[int]:
    """Evenly spaced codes over 0..9 (round half up)."""
    if n_levels == 1:
        return [0]
    return [int(math.floor(MAX_CODE * i / (n_levels - 1) + 0.5)) for i in range(n_levels)]


def code_categorical(values, spec: FeatureSpec, anchor: DigitalColumn | None = None) -> DigitalColumn:
    """Digitally code a binary or categorical column.

    Sources, in order of precedence: ``spec.coding_map``; ``spec.ordinal_hint``
    (evenly spaced codes over 0..9); for binary features the default map
    (lower label -> 0, higher -> 5); finally ``anchor``, where each category
    gets the rounded mean anchor code of its subjects.
    """
    labels = [str(v) for v in values]
    if spec.dtype not in ("binary", "categorical"):
        raise RenormError(f"feature {spec.name!r} is {spec.dtype}, not binary/categorical")
    observed = sorted_labels(labels)

    if spec.coding_map is not None:
        missing = [lab for lab in observed if lab not in spec.coding_map]
        if missing:
            raise UnmappedLabel(f"feature {spec.name!r}: labels {missing} not in coding_map")
        mapping, method = dict(spec.coding_map), "coding_map"
    elif spec.ordinal_hint is not None:
        missing = [lab for lab in observed if lab not in spec.ordinal_hint]
        if missing:
            raise UnmappedLabel(f"feature {spec.name!r}: labels {missing} not in ordinal_hint")
        mapping = dict(zip(spec.ordinal_hint, ordinal_codes(len(spec.ordinal_hint))))
        method = "ordinal_hint"
    elif spec.dtype == "binary" and len(observed) <= 2:
        mapping = dict(zip(observed, BINARY_DEFAULT_CODES))
        method = "binary_default"
    elif anchor is not None:
        a = np.asarray(anchor.codes)
        if a.size != len(labels):
            raise RenormError(f"feature {spec.name!r}: anchor length {a.size} != {len(labels)}")
        lab_arr = np.array(labels, dtype=object)
        mapping = {lab: int(math.floor(float(a[lab_arr == lab].mean()) + 0.5)) for lab in observed}
        method = f"anchor:{anchor.source_feature}"
    else:
        raise NoCodingSource(f"feature {spec.name!r}: no coding_map, ordinal_hint or anchor")

    codes = np.array([mapping[lab] for lab in labels], dtype=np.int64)
    meaning: dict = {}
    for lab in sorted_labels(mapping):
        if lab in observed:
            meaning.setdefault(mapping[lab], []).append(lab)
    meaning = {c: tuple(v) for c, v in sorted(meaning.items())}
    return DigitalColumn(codes, meaning, spec.name, method)


@dataclass
class DigitalCodedMatrix:
    subjects: tuple
    columns: list[DigitalColumn]
    manifest: tuple[FeatureSpec, ...]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.subjects = tuple(self.subjects)
        self.manifest = tuple(self.manifest)
        if len(self.columns) != len(self.manifest):
            raise RenormError("coded matrix needs one column per manifest entry")
        for col in self.columns:
            if col.codes.size != len(self.subjects):
                raise RenormError(f"column {col.source_feature!r} has wrong length")
        self._index = {c.source_feature: i for i, c in enumerate(self.columns)}

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def m(self) -> int:
        return len(self.columns)

    @property
    def feature_names(self) -> list[str]:
        return [c.source_feature for c in self.columns]

    def names_with_role(self, role: str) -> list[str]:
        return [f.name for f in self.manifest if f.role == role]

    def column(self, name: str) -> DigitalColumn:
        return self.columns[self._index[name]]

    def codes(self, name: str) -> np.ndarray:
        return self.column(name).codes

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.feature_names if names is None else list(names)
        return np.column_stack([self.codes(nm) for nm in names]).astype(np.int64)

    def to_csv(self, path) -> None:
        """Codes as CSV (first column ``subject``) plus ``<path>.coding.json``."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", *self.feature_names])
            for i, sid in enumerate(self.subjects):
                w.writerow([sid, *(int(c.codes[i]) for c in self.columns)])
        doc = {
            "manifest": [f.to_dict() for f in self.manifest],
            "columns": [c.to_dict() for c in self.columns],
        }
        Path(str(path) + ".coding.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "DigitalCodedMatrix":
        path = Path(path)
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0][1:]
        subjects = []
        for r in rows[1:]:
            try:
                subjects.append(int(r[0]))
            except ValueError:
                subjects.append(r[0])
        codes = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64).reshape(len(subjects), len(names))
        side = Path(str(path) + ".coding.json")
        if side.exists():
            doc = json.loads(side.read_text(encoding="utf-8"))
            manifest = [FeatureSpec.from_dict(d) for d in doc["manifest"]]
            info = {c["feature"]: c for c in doc["columns"]}
        else:
            manifest = [FeatureSpec(nm, "covariate", "discrete") for nm in names]
            info = {}
        cols = []
        for j, nm in enumerate(names):
            meta = info.get(nm, {})
            hist = PossiblyGappedHistogram.from_dict(meta["histogram"]) if "histogram" in meta else None
            meaning = {int(k): tuple(v) for k, v in meta.get("code_meaning", {}).items()}
            cols.append(DigitalColumn(codes[:, j], meaning, nm, meta.get("method", ""), hist))
        by_name = {f.name: f for f in manifest}
        return cls(tuple(subjects), cols, tuple(by_name[nm] for nm in names))


def _annotate(exc: RenormError, name: str) -> RenormError:
    return type(exc)(f"feature {name!r}: {exc}")


def renormalize_matrix(table: RawTable, max_bins: int = DEFAULT_MAX_BINS, gap_factor: float = DEFAULT_GAP_FACTOR, log_base: str = "natural") -> DigitalCodedMatrix:
    """Code every column of ``table``.

    Numeric and self-coding columns are handled first; categorical columns that
    need an anchor are coded afterwards against the already-coded column with
    the lowest mutual conditional entropy.
    """
    coded: dict[str, DigitalColumn] = {}
    deferred = []
    for spec, values in zip(table.manifest, table.columns):
        try:
            if spec.is_numeric:
                hist = build_gapped_histogram(values, max_bins, gap_factor)
                coded[spec.name] = code_continuous(values, hist, spec.name)
            elif spec.coding_map is None and spec.ordinal_hint is None and spec.dtype == "categorical":
                deferred.append((spec, values))
            else:
                coded[spec.name] = code_categorical(values, spec)
        except RenormError as exc:
            raise _annotate(exc, spec.name) from exc

    anchors = [name for name in table.feature_names if name in coded]
    for spec, values in deferred:
        if not anchors:
            raise NoCodingSource(f"feature {spec.name!r}: no non-categorical column available as anchor")
        labels = [str(v) for v in values]
        scores = [(mutual_ce(labels, coded[a].codes, log_base), i) for i, a in enumerate(anchors)]
        best = anchors[min(scores)[1]]
        try:
            coded[spec.name] = code_categorical(values, spec, anchor=coded[best])
        except RenormError as exc:
            raise _annotate(exc, spec.name) from exc

    columns = [coded[name] for name in table.feature_names]
    return DigitalCodedMatrix(table.subjects, columns, table.manifest)
