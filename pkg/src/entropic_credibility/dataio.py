"""Policy CSV ingestion, covariate binning/grouping and risk-class aggregation."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, RankDeficiencyError

logger = logging.getLogger(__name__)

__all__ = [
    "CAR_SCHEMA",
    "RowError",
    "BinRule",
    "LevelMap",
    "ClassRow",
    "RiskClassTable",
    "read_policies",
    "transform_covariates",
    "aggregate_classes",
    "build_design",
    "level_sort_key",
    "write_class_table",
    "read_class_table",
    "parse_bins",
    "parse_level_map",
]

# Column types of the de Jong & Heller car insurance data.
CAR_SCHEMA = {
    "veh_value": "float",
    "exposure": "float",
    "clm": "int",
    "numclaims": "int",
    "claimcst0": "float",
    "veh_body": "str",
    "veh_age": "str",
    "gender": "str",
    "area": "str",
    "agecat": "str",
}

_CASTS = {"float": float, "int": int, "str": str}


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _record_problems(rec: Mapping) -> list[str]:
    problems = []
    if "exposure" in rec and not 0.0 <= rec["exposure"] <= 1.0:
        problems.append(f"exposure {rec['exposure']} outside [0, 1]")
    if "numclaims" in rec and rec["numclaims"] < 0:
        problems.append("numclaims is negative")
    if "claimcst0" in rec:
        if rec["claimcst0"] < 0:
            problems.append("claimcst0 is negative")
        if "clm" in rec and rec["clm"] == 0 and rec["claimcst0"] != 0:
            problems.append("claimcst0 is nonzero but clm = 0")
    return problems


def read_policies(path, schema: Mapping[str, str] = CAR_SCHEMA):
    """Read a policy-level CSV into typed dicts.

    Only columns named in ``schema`` are kept; all of them must be in the
    header.  Rows that fail to parse or violate the policy invariants are
    skipped and reported.

    Returns
    -------
    records : list of dict
    errors : list of RowError
    """
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    records, errors = [], []
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty (no header row)") from None
        missing = [c for c in schema if c not in header]
        if missing:
            raise DataError(f"{path} is missing columns: {', '.join(missing)}")
        index = {c: header.index(c) for c in schema}
        casts = {c: (_parse_int if t == "int" else _CASTS[t]) for c, t in schema.items()}
        for line, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                errors.append(RowError(line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            try:
                rec = {c: casts[c](row[i].strip()) for c, i in index.items()}
            except ValueError as exc:
                errors.append(RowError(line, str(exc)))
                continue
            problems = _record_problems(rec)
            if problems:
                errors.append(RowError(line, "; ".join(problems)))
                continue
            records.append(rec)
    return records, errors


@dataclass(frozen=True)
class BinRule:
    """Half-open intervals [lo, hi) mapped to labels for one numeric column."""

    column: str
    bins: tuple  # of (label, lo, hi)

    def apply(self, value) -> str:
        x = float(value)
        for label, lo, hi in self.bins:
            if lo <= x < hi:
                return label
        raise DataError(f"{self.column} value {value} falls outside every interval")


@dataclass(frozen=True)
class LevelMap:
    """Regroup categorical levels; unmapped levels pass through unchanged."""

    column: str
    mapping: Mapping[str, str]

    def apply(self, value) -> str:
        key = str(value)
        return self.mapping.get(key, key)


def transform_covariates(records: Iterable[Mapping], rules: Sequence[BinRule | LevelMap] = ()) -> list[dict]:
    """Apply binning and level maps, replacing the named columns in new dicts."""
    out = []
    for rec in records:
        new = dict(rec)
        for rule in rules:
            if rule.column not in new:
                raise DataError(f"rule refers to unknown column {rule.column!r}")
            new[rule.column] = rule.apply(new[rule.column])
        out.append(new)
    return out


def level_sort_key(level) -> tuple:
    """Numeric levels sort numerically and before text levels."""
    s = str(level)
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


@dataclass(frozen=True)
class ClassRow:
    class_id: int
    levels: tuple
    ybar: float
    w: float


@dataclass
class RiskClassTable:
    covariates: tuple
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def ybar(self) -> np.ndarray:
        return np.array([r.ybar for r in self.rows], dtype=float)

    @property
    def w(self) -> np.ndarray:
        return np.array([r.w for r in self.rows], dtype=float)

    def levels_of(self, column: str) -> list[str]:
        j = self.covariates.index(column)
        return sorted({str(r.levels[j]) for r in self.rows}, key=level_sort_key)


def aggregate_classes(
    records: Iterable[Mapping],
    response_col: str,
    weight_col: str,
    covariate_cols: Sequence[str],
    response_is_total: bool = True,
) -> RiskClassTable:
    """Collapse policies sharing covariate levels into weighted classes.

    With ``response_is_total`` the response column holds a total over the
    weight (claim cost over ``numclaims``, or counts over exposure), so each
    policy contributes y_i = response / weight with weight w_i and the class
    mean is sum(response) / sum(weight).  Otherwise the response is already a
    per-unit value and the class mean is the weighted average.

    Policies with zero weight carry no information and are dropped first.
    """
    covariate_cols = tuple(covariate_cols)
    sums: dict[tuple, list] = {}
    dropped = 0
    for rec in records:
        w = float(rec[weight_col])
        if w < 0:
            raise DataError(f"negative weight {w} in column {weight_col}")
        if w == 0:
            dropped += 1
            continue
        r = float(rec[response_col])
        key = tuple(str(rec[c]) for c in covariate_cols)
        acc = sums.setdefault(key, [0.0, 0.0])
        acc[0] += r if response_is_total else w * r
        acc[1] += w
    if dropped:
        logger.info("dropped %d zero-weight policies before aggregation", dropped)
    keys = sorted(sums, key=lambda k: tuple(level_sort_key(v) for v in k))
    rows = [ClassRow(i + 1, k, sums[k][0] / sums[k][1], sums[k][1]) for i, k in enumerate(keys)]
    return RiskClassTable(covariate_cols, rows)


def build_design(table: RiskClassTable, reference_levels: Mapping[str, str]):
    """Intercept plus one dummy per non-reference level, levels in sort order.

    Returns
    -------
    X : ndarray, shape (m, 1 + sum(levels - 1))
    names : list of str
        ``"(Intercept)"`` followed by ``column + level`` labels, e.g. ``genderM``.
    """
    cols = [np.ones(len(table))]
    names = ["(Intercept)"]
    for j, cov in enumerate(table.covariates):
        levels = table.levels_of(cov)
        ref = str(reference_levels.get(cov, levels[0]))
        if ref not in levels:
            raise DataError(f"reference level {ref!r} of {cov} not among observed levels {levels}")
        for lev in levels:
            if lev == ref:
                continue
            cols.append(np.array([1.0 if str(r.levels[j]) == lev else 0.0 for r in table.rows]))
            names.append(f"{cov}{lev}")
    X = np.column_stack(cols)
    rank = 0
    collinear = []
    for k in range(X.shape[1]):
        r = np.linalg.matrix_rank(X[:, : k + 1])
        if r == rank:
            collinear.append(names[k])
        rank = r
    if collinear:
        raise RankDeficiencyError(
            f"design is rank deficient; collinear columns: {', '.join(collinear)}", collinear
        )
    return X, names


def _fmt(x: float) -> str:
    return repr(float(x))


def write_class_table(table: RiskClassTable, stream, header_lines: Sequence[str] = ()) -> None:
    for line in header_lines:
        stream.write(f"# {line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["class_id", *table.covariates, "ybar", "w"])
    for r in table.rows:
        writer.writerow([r.class_id, *r.levels, _fmt(r.ybar), _fmt(r.w)])


def read_class_table(path) -> RiskClassTable:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path} has no header") from None
    if header[0] != "class_id" or header[-2:] != ["ybar", "w"]:
        raise DataError(f"{path} must have columns class_id, <covariates>, ybar, w")
    covs = tuple(header[1:-2])
    rows = []
    for line, rec in enumerate(reader, start=2):
        try:
            rows.append(ClassRow(int(rec[0]), tuple(rec[1:-2]), float(rec[-2]), float(rec[-1])))
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path} line {line}: {exc}") from exc
    bad = [r.class_id for r in rows if not (r.w > 0 and math.isfinite(r.ybar))]
    if bad:
        raise DataError(f"{path}: classes {bad[:5]} have nonpositive weight or invalid mean")
    return RiskClassTable(covs, rows)


_BIN_ITEM = re.compile(r"^\s*([^:]+?)\s*:\s*([^:]+?)\s*:\s*([^:]+?)\s*$")


def parse_bins(column: str, text: str) -> BinRule:
    """Parse ``"P1:0:1.2, P2:1.2:1.86, P3:1.86:inf"``."""
    bins = []
    for item in text.split(","):
        m = _BIN_ITEM.match(item)
        if not m:
            raise DataError(f"bad bin spec {item!r} for {column}; expected label:lo:hi")
        label, lo, hi = m.groups()
        bins.append((label, float(lo), float(hi)))
    return BinRule(column, tuple(bins))


def parse_level_map(column: str, text: str) -> LevelMap:
    """Parse ``"A:ABCD, B:ABCD, C:ABCD, D:ABCD"``."""
    mapping = {}
    for item in text.split(","):
        if ":" not in item:
            raise DataError(f"bad level map {item!r} for {column}; expected level:group")
        src, dst = (s.strip() for s in item.split(":", 1))
        mapping[src] = dst
    return LevelMap(column, mapping)
