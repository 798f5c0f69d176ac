"""CSV loading, schema handling, encoding and bank-marketing preparation.

Schema files map each CSV column to a role, one column per line::

    # comments and blank lines are ignored
    age: numeric
    job: categorical
    housing: sensitive positive=yes
    duration: stratum_source bins=10
    y: label positive=yes
    contact: drop

Roles are ``numeric``, ``categorical``, ``label``, ``sensitive``,
``stratum_source`` and ``drop``.  ``positive=<level>`` names the level mapped
to 1 for ``label`` and ``sensitive`` columns.  ``bins=<n>`` turns a numeric
``stratum_source`` into ``n`` equal-frequency bins; without it the raw values
are used as stratum labels.  Sensitive columns are binarised for the fairness
constraint and, unless disabled, also enter the design as categoricals.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data_model import DataError, Dataset, FitConfig, build_dataset

logger = logging.getLogger(__name__)

ROLES = ("numeric", "categorical", "label", "sensitive", "stratum_source", "drop")
MISSING_TOKENS = ("", "unknown")


@dataclass
class ColumnSpec:
    name: str
    role: str
    positive: str | None = None
    bins: int | None = None
    levels: list[str] = field(default_factory=list)
    mean: float | None = None
    std: float | None = None
    edges: list[float] = field(default_factory=list)
    dropped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ColumnSpec:
        return cls(**d)


def parse_schema(text: str) -> list[ColumnSpec]:
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise DataError(f"schema line {lineno}: expected 'name: role'")
        name, rest = (part.strip() for part in line.split(":", 1))
        tokens = rest.split()
        if not name or not tokens or tokens[0] not in ROLES:
            raise DataError(f"schema line {lineno}: role must be one of {', '.join(ROLES)}")
        spec = ColumnSpec(name=name, role=tokens[0])
        for opt in tokens[1:]:
            key, _, value = opt.partition("=")
            if key == "positive" and value:
                spec.positive = value
            elif key == "bins" and value.isdigit():
                spec.bins = int(value)
            else:
                raise DataError(f"schema line {lineno}: bad option {opt!r}")
        specs.append(spec)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DataError("schema lists a column more than once")
    if sum(s.role == "label" for s in specs) != 1:
        raise DataError("schema needs exactly one label column")
    if sum(s.role == "stratum_source" for s in specs) > 1:
        raise DataError("schema allows at most one stratum_source column")
    return specs


def load_schema(path) -> list[ColumnSpec]:
    return parse_schema(Path(path).read_text())


@dataclass
class RawTable:
    """Typed columns: float arrays for numerics, string arrays otherwise."""

    columns: dict[str, np.ndarray]
    missing: dict[str, np.ndarray]
    n_rows: int

    def take(self, rows) -> RawTable:
        rows = np.asarray(rows)
        return RawTable(
            {k: v[rows] for k, v in self.columns.items()},
            {k: v[rows] for k, v in self.missing.items()},
            int(rows.shape[0]),
        )


def detect_delimiter(header: str) -> str:
    return ";" if header.count(";") > header.count(",") else ","


def load_csv(path, schema: Sequence[ColumnSpec]) -> RawTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open() as fh:
        header = fh.readline()
    frame = pd.read_csv(
        path, sep=detect_delimiter(header), dtype=str, keep_default_na=False, skipinitialspace=True
    )
    known = {s.name for s in schema}
    extra = [c for c in frame.columns if c not in known]
    absent = [s.name for s in schema if s.name not in frame.columns]
    if extra:
        raise DataError(f"columns not in schema: {', '.join(extra)}")
    if absent:
        raise DataError(f"schema columns missing from file: {', '.join(absent)}")

    columns, missing = {}, {}
    for spec in schema:
        raw = frame[spec.name].str.strip()
        missing[spec.name] = raw.isin(MISSING_TOKENS).to_numpy()
        if spec.role == "numeric" or (spec.role == "stratum_source" and spec.bins):
            values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
            bad = np.flatnonzero(np.isnan(values) & ~missing[spec.name])
            if bad.size:
                i = int(bad[0])
                raise DataError(f"column {spec.name!r}, row {i}: cannot parse {raw.iloc[i]!r} as a number")
            columns[spec.name] = values
        else:
            columns[spec.name] = raw.to_numpy(dtype=str)
    return RawTable(columns, missing, len(frame))


def assign_strata_by_quantile(values, n_bins: int) -> np.ndarray:
    """Equal-frequency bins ``1..n_bins`` by stable sort and slice.

    Ties are broken by row order.  With fewer distinct values than bins the
    bin count drops to the number of distinct values.
    """
    values = np.asarray(values, dtype=float)
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    distinct = np.unique(values).shape[0]
    if distinct < n_bins:
        logger.warning("only %d distinct values for %d bins; merging bins", distinct, n_bins)
        n_bins = distinct
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.shape[0], dtype=int)
    for k, chunk in enumerate(np.array_split(order, n_bins), start=1):
        labels[chunk] = k
    return labels


def _bin_edges(values: np.ndarray, labels: np.ndarray) -> list[float]:
    """Upper value of each bin but the last, used to bin unseen data."""
    return [float(values[labels == k].max()) for k in range(1, labels.max())]


def _apply_edges(values: np.ndarray, edges: list[float]) -> np.ndarray:
    return np.searchsorted(np.asarray(edges), values, side="left") + 1


def _binary(spec: ColumnSpec, values: np.ndarray) -> np.ndarray:
    if spec.positive is not None:
        return (values == spec.positive).astype(float)
    lowered = np.char.lower(values.astype(str))
    for pos, neg in (("yes", "no"), ("1", "0"), ("true", "false")):
        if np.all((lowered == pos) | (lowered == neg)):
            return (lowered == pos).astype(float)
    raise DataError(f"column {spec.name!r} is not binary; set positive=<level> in the schema")


def _one_hot(spec: ColumnSpec, values: np.ndarray) -> tuple[np.ndarray, list[str]]:
    ref, rest = spec.levels[0], spec.levels[1:]
    unseen = ~np.isin(values, spec.levels)
    if np.any(unseen):
        logger.warning(
            "column %r: %d rows with unseen levels mapped to reference %r",
            spec.name, int(unseen.sum()), ref,
        )
    block = np.column_stack([(values == lvl).astype(float) for lvl in rest]) if rest else np.zeros((len(values), 0))
    return block, [f"{spec.name}={lvl}" for lvl in rest]


def encode(
    table: RawTable,
    schema: Sequence[ColumnSpec],
    fit_stats: Sequence[ColumnSpec] | None = None,
    *,
    strata=None,
    sensitive_as_covariate: bool = True,
) -> tuple[Dataset, list[ColumnSpec]]:
    """Encode a raw table; ``fit_stats`` from a previous call freezes the encoding.

    Without ``fit_stats`` the levels, means, standard deviations and stratum
    bin edges are learnt from ``table``.  ``strata`` overrides the stratum
    source column.
    """
    fitting = fit_stats is None
    specs = [replace(s) for s in (schema if fitting else fit_stats)]
    blocks, names = [], []
    labels = sensitive = None
    sensitive_columns = {}
    source = None
    for spec in specs:
        values = table.columns[spec.name]
        if spec.role == "drop":
            continue
        if spec.role == "label":
            labels = _binary(spec, values)
        elif spec.role == "stratum_source":
            source = spec
        elif spec.role == "numeric":
            if np.any(table.missing[spec.name]):
                raise DataError(f"numeric column {spec.name!r} has missing values")
            if fitting:
                spec.mean, spec.std = float(values.mean()), float(values.std())
                if spec.std == 0.0:
                    logger.warning("numeric column %r is constant; dropped", spec.name)
                    spec.dropped = True
            if not spec.dropped:
                blocks.append(((values - spec.mean) / spec.std)[:, None])
                names.append(spec.name)
        else:  # categorical or sensitive
            if fitting:
                spec.levels = sorted(set(values.tolist()))
            if spec.role == "sensitive":
                s = _binary(spec, values)
                sensitive_columns[spec.name] = s
                if sensitive is None:
                    sensitive = s
                if not sensitive_as_covariate:
                    continue
            block, block_names = _one_hot(spec, values)
            blocks.append(block)
            names += block_names

    if labels is None:
        raise DataError("no label column")
    if sensitive is None:
        raise DataError("schema needs at least one sensitive column")
    if strata is None:
        strata = _strata(table, source, fitting)
    features = np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))
    data = build_dataset(
        features, labels, strata, sensitive, feature_names=names, sensitive_columns=sensitive_columns
    )
    return data, specs


def _strata(table: RawTable, source: ColumnSpec | None, fitting: bool) -> np.ndarray:
    if source is None:
        return np.ones(table.n_rows, dtype=int)
    values = table.columns[source.name]
    if not source.bins:
        return values
    if fitting:
        labels = assign_strata_by_quantile(values, source.bins)
        source.edges = _bin_edges(values, labels)
        return labels
    return _apply_edges(values, source.edges)


BANK_SCHEMA = """\
age: numeric
job: categorical
marital: categorical
education: categorical
default: categorical
housing: sensitive positive=yes
loan: categorical
contact: categorical
month: categorical
day_of_week: categorical
duration: stratum_source bins=10
campaign: numeric
pdays: numeric
previous: numeric
poutcome: categorical
emp.var.rate: numeric
cons.price.idx: numeric
cons.conf.idx: numeric
euribor3m: numeric
nr.employed: numeric
y: label positive=yes
"""


def bank_schema(n_bins: int = 10, sensitive: Sequence[str] = ("housing",)) -> list[ColumnSpec]:
    """Bank-marketing schema; extra sensitive columns get a ``positive`` level."""
    specs = parse_schema(BANK_SCHEMA)
    positives = {"housing": "yes", "marital": "married", "education": "university.degree"}
    for spec in specs:
        if spec.role == "stratum_source":
            spec.bins = n_bins
        if spec.name in sensitive:
            spec.role = "sensitive"
            spec.positive = positives.get(spec.name, spec.positive)
    return specs


@dataclass
class BankData:
    """Raw bank table with strata fixed on the full file and a seeded splitter."""

    table: RawTable
    schema: list[ColumnSpec]
    strata: np.ndarray
    train_fraction: float = 0.035
    sensitive_as_covariate: bool = True

    @property
    def n_rows(self) -> int:
        return self.table.n_rows

    def n_train(self) -> int:
        return int(round(self.train_fraction * self.n_rows))

    def split(self, seed) -> tuple[Dataset, Dataset]:
        """Encode a random training share and the remaining test rows."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(self.n_rows)
        train_rows, test_rows = np.sort(perm[: self.n_train()]), np.sort(perm[self.n_train():])
        train, stats = encode(
            self.table.take(train_rows), self.schema, strata=self.strata[train_rows],
            sensitive_as_covariate=self.sensitive_as_covariate,
        )
        test, _ = encode(
            self.table.take(test_rows), self.schema, stats, strata=self.strata[test_rows],
            sensitive_as_covariate=self.sensitive_as_covariate,
        )
        return train, test


def prepare_bank(
    path,
    config: FitConfig | None = None,
    *,
    n_bins: int = 10,
    sensitive: Sequence[str] = ("housing",),
    train_fraction: float = 0.035,
) -> BankData:
    """Load the bank-marketing CSV; call duration deciles define the strata."""
    config = config or FitConfig()
    schema = bank_schema(n_bins, sensitive)
    table = load_csv(path, schema)
    source = next(s for s in schema if s.role == "stratum_source")
    strata = assign_strata_by_quantile(table.columns[source.name], n_bins)
    return BankData(table, schema, strata, train_fraction, config.include_sensitive_as_covariate)
