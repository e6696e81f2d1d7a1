"""Loading raw response/covariate tables together with a feature manifest.

A manifest is a YAML document::

    id_column: subject          # optional
    features:
      - name: gender
        role: response          # response | covariate
        dtype: binary           # continuous | discrete | binary | categorical
        coding_map: {"1": 0, "2": 5}   # optional, binary/categorical only
      - name: head_size
        role: covariate
        dtype: continuous

Columns come back in manifest order, whatever order the CSV uses.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .errors import (
    DatasetUnavailable,
    DuplicateFeature,
    EmptyTable,
    ManifestError,
    MissingColumn,
    MissingValue,
    TypeParseError,
    UnknownDataset,
)

ROLES = ("response", "covariate")
DTYPES = ("continuous", "discrete", "binary", "categorical")
NUMERIC_DTYPES = ("continuous", "discrete")
LABEL_DTYPES = ("binary", "categorical")

BUILTIN_DATASETS = ("brain", "electricity", "andes", "stature", "heart")
DATA_DIR_ENV = "INFOFLOW_DATA_DIR"

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    role: str
    dtype: str
    coding_map: Mapping[str, int] | None = None
    ordinal_hint: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name:
            raise ManifestError("feature name must be non-empty")
        if self.role not in ROLES:
            raise ManifestError(f"feature {self.name!r}: role must be one of {ROLES}, got {self.role!r}")
        if self.dtype not in DTYPES:
            raise ManifestError(f"feature {self.name!r}: dtype must be one of {DTYPES}, got {self.dtype!r}")
        if self.coding_map is not None:
            if self.dtype not in LABEL_DTYPES:
                raise ManifestError(f"feature {self.name!r}: coding_map only allowed for binary/categorical")
            cmap = {str(k): int(v) for k, v in self.coding_map.items()}
            if any(v < 0 for v in cmap.values()):
                raise ManifestError(f"feature {self.name!r}: codes must be nonnegative")
            object.__setattr__(self, "coding_map", cmap)
        if self.ordinal_hint is not None:
            if self.dtype not in LABEL_DTYPES:
                raise ManifestError(f"feature {self.name!r}: ordinal_hint only allowed for binary/categorical")
            hint = tuple(str(h) for h in self.ordinal_hint)
            if len(set(hint)) != len(hint):
                raise ManifestError(f"feature {self.name!r}: ordinal_hint has repeated labels")
            object.__setattr__(self, "ordinal_hint", hint)

    @property
    def is_numeric(self) -> bool:
        return self.dtype in NUMERIC_DTYPES

    def to_dict(self) -> dict:
        out = {"name": self.name, "role": self.role, "dtype": self.dtype}
        if self.coding_map is not None:
            out["coding_map"] = dict(self.coding_map)
        if self.ordinal_hint is not None:
            out["ordinal_hint"] = list(self.ordinal_hint)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSpec":
        unknown = set(d) - {"name", "role", "dtype", "coding_map", "ordinal_hint"}
        if unknown:
            raise ManifestError(f"unknown manifest keys {sorted(unknown)} in entry {d.get('name')!r}")
        try:
            return cls(
                name=str(d["name"]),
                role=str(d["role"]),
                dtype=str(d["dtype"]),
                coding_map=d.get("coding_map"),
                ordinal_hint=d.get("ordinal_hint"),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest entry missing key {exc.args[0]!r}: {dict(d)}") from None


@dataclass(frozen=True)
class RawTable:
    """Subjects x features table; numeric columns hold floats, label columns hold strings."""

    subjects: tuple
    columns: tuple
    manifest: tuple[FeatureSpec, ...]
    id_column: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "columns", tuple(tuple(c) for c in self.columns))
        object.__setattr__(self, "manifest", tuple(self.manifest))
        _check_unique([f.name for f in self.manifest])
        if len(self.columns) != len(self.manifest):
            raise ManifestError("every column needs exactly one FeatureSpec")
        n = len(self.subjects)
        if n == 0:
            raise EmptyTable("table has no subjects")
        for spec, col in zip(self.manifest, self.columns):
            if len(col) != n:
                raise ManifestError(f"column {spec.name!r} has {len(col)} values, expected {n}")
            if spec.ordinal_hint is not None and set(spec.ordinal_hint) != set(col):
                raise ManifestError(
                    f"feature {spec.name!r}: ordinal_hint {list(spec.ordinal_hint)} does not match "
                    f"observed categories {sorted(set(col))}"
                )

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def m(self) -> int:
        return len(self.manifest)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.manifest]

    def spec(self, name: str) -> FeatureSpec:
        for f in self.manifest:
            if f.name == name:
                return f
        raise KeyError(name)

    def column(self, name: str) -> tuple:
        return self.columns[self.feature_names.index(name)]

    def names_with_role(self, role: str) -> list[str]:
        return [f.name for f in self.manifest if f.role == role]


def _check_unique(names: Sequence[str]) -> None:
    seen = set()
    for name in names:
        if name in seen:
            raise DuplicateFeature(f"feature {name!r} declared more than once")
        seen.add(name)


def read_manifest(path) -> tuple[list[FeatureSpec], str | None]:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return parse_manifest(doc)


def parse_manifest(doc) -> tuple[list[FeatureSpec], str | None]:
    if isinstance(doc, list):
        entries, id_column = doc, None
    elif isinstance(doc, dict) and "features" in doc:
        entries, id_column = doc["features"], doc.get("id_column")
    else:
        raise ManifestError("manifest must be a list of features or a mapping with a 'features' list")
    if not entries:
        raise ManifestError("manifest declares no features")
    specs = [FeatureSpec.from_dict(e) for e in entries]
    _check_unique([s.name for s in specs])
    return specs, id_column


def load_table(path, manifest_path) -> RawTable:
    """Read a CSV file and type its columns according to a manifest.

    Raises
    ------
    MissingColumn
        The manifest names a column that the CSV header lacks.
    TypeParseError
        A continuous/discrete cell is not a number; the 1-based data row is reported.
    DuplicateFeature
        A feature (or CSV header field) appears twice.
    EmptyTable
        The CSV has a header but no data rows.
    """
    specs, id_column = read_manifest(manifest_path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyTable(f"{path}: file is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    return table_from_rows(header, rows, specs, id_column, source=str(path))


def table_from_rows(header, rows, specs, id_column=None, source="<table>") -> RawTable:
    _check_unique(header)
    if not rows:
        raise EmptyTable(f"{source}: no data rows")
    index = {h: i for i, h in enumerate(header)}
    for spec in specs:
        if spec.name not in index:
            raise MissingColumn(f"{source}: manifest feature {spec.name!r} not in CSV header")
    if id_column is not None and id_column not in index:
        raise MissingColumn(f"{source}: id column {id_column!r} not in CSV header")
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ManifestError(f"{source}: data row {r} has {len(row)} fields, header has {len(header)}")

    if id_column is None:
        subjects = tuple(range(1, len(rows) + 1))
    else:
        subjects = tuple(_parse_id(row[index[id_column]].strip()) for row in rows)
        if len(set(subjects)) != len(subjects):
            raise ManifestError(f"{source}: subject ids in {id_column!r} are not unique")

    columns = []
    for spec in specs:
        j = index[spec.name]
        col = []
        for r, row in enumerate(rows, start=1):
            cell = row[j].strip()
            if cell.lower() in _MISSING_TOKENS:
                raise MissingValue(f"{source}: feature {spec.name!r} has a missing value in data row {r}")
            if spec.is_numeric:
                try:
                    val = float(cell)
                except ValueError:
                    raise TypeParseError(spec.name, r, cell) from None
                if not math.isfinite(val):
                    raise TypeParseError(spec.name, r, cell)
                col.append(val)
            else:
                col.append(cell)
        columns.append(col)
    return RawTable(subjects=subjects, columns=columns, manifest=specs, id_column=id_column)


def _parse_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(table: RawTable, path, manifest_path) -> None:
    """Write ``table`` as CSV plus YAML manifest; ``load_table`` reproduces it exactly."""
    id_column = table.id_column or "subject"
    while id_column in table.feature_names:
        id_column = "_" + id_column
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([id_column] + table.feature_names)
        for i, sid in enumerate(table.subjects):
            writer.writerow([sid] + [_format_cell(col[i]) for col in table.columns])
    doc = {"id_column": id_column, "features": [f.to_dict() for f in table.manifest]}
    with open(manifest_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def _builtin_file(name: str, suffix: str):
    return resources.files("infoflow").joinpath(f"data/{name}{suffix}")


def builtin_manifest_path(name: str):
    if name not in BUILTIN_DATASETS:
        raise UnknownDataset(f"unknown dataset {name!r}; choose from {', '.join(BUILTIN_DATASETS)}")
    return _builtin_file(name, ".manifest.yaml")


def builtin_csv_path(name: str) -> Path:
    """Locate the CSV for a built-in dataset.

    ``$INFOFLOW_DATA_DIR/<name>.csv`` takes precedence over the copy shipped in
    the package, so datasets that cannot be redistributed can be dropped in.
    """
    if name not in BUILTIN_DATASETS:
        raise UnknownDataset(f"unknown dataset {name!r}; choose from {', '.join(BUILTIN_DATASETS)}")
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        candidate = Path(override) / f"{name}.csv"
        if candidate.is_file():
            return candidate
    shipped = _builtin_file(name, ".csv")
    if shipped.is_file():
        return Path(str(shipped))
    raise DatasetUnavailable(
        f"dataset {name!r} is not bundled with this installation (see data/PROVENANCE.md); "
        f"place {name}.csv in ${DATA_DIR_ENV} to enable it"
    )


def builtin_dataset(name: str) -> RawTable:
    manifest = builtin_manifest_path(name)
    return load_table(builtin_csv_path(name), manifest)


def available_datasets() -> list[str]:
    out = []
    for name in BUILTIN_DATASETS:
        try:
            builtin_csv_path(name)
        except DatasetUnavailable:
            continue
        out.append(name)
    return out
