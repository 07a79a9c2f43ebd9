"""Long-format table ingestion, factor coding, design matrices, and
group-index structures.

Factor levels are recorded in first-appearance order, which fixes dummy
column names and therefore coefficient names; continuous covariates are
never auto-centered here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

_MISSING = {"", "NA", "NaN", "nan"}


@dataclass(frozen=True)
class Column:
    kind: str  # "real" | "integer" | "factor"
    values: np.ndarray  # numeric values, or level labels for factors
    levels: tuple | None = None
    codes: np.ndarray | None = None  # 0-based level index for factors


@dataclass(frozen=True)
class ResponseTable:
    columns: dict
    n_rows: int

    def column(self, name):
        if name not in self.columns:
            raise KeyError(f"unknown column '{name}'; have {sorted(self.columns)}")
        return self.columns[name]

    @classmethod
    def from_dict(cls, mapping, column_types=None):
        """Build a table from name -> sequence, with the same typing rules
        as load_table."""
        column_types = column_types or {}
        cols = {}
        n_rows = None
        for name, seq in mapping.items():
            cells = [str(v) for v in seq]
            if n_rows is None:
                n_rows = len(cells)
            elif len(cells) != n_rows:
                raise ValueError(f"column '{name}' has {len(cells)} rows, expected {n_rows}")
            cols[name] = _make_column(name, cells, column_types.get(name))
        return cls(cols, n_rows or 0)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    col_names: tuple


@dataclass(frozen=True)
class GroupIndex:
    factor_name: str
    n_levels: int
    level_of_obs: np.ndarray  # 1-based level ids
    levels: tuple

    @property
    def codes(self):
        return self.level_of_obs - 1


def _is_int(text):
    try:
        int(text)
        return True
    except ValueError:
        return False


def _is_real(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def _factor_column(cells):
    levels = list(pd.unique(np.asarray(cells, dtype=object)))
    index = {lev: i for i, lev in enumerate(levels)}
    codes = np.array([index[c] for c in cells], dtype=int)
    return Column("factor", np.asarray(cells, dtype=object), tuple(levels), codes)


def _make_column(name, cells, declared):
    for row, cell in enumerate(cells):
        if cell.strip() in _MISSING:
            raise ValueError(f"missing value at row {row + 1}, column '{name}'")
    cells = [c.strip() for c in cells]
    if declared is None:
        if all(_is_int(c) for c in cells):
            return Column("integer", np.array([int(c) for c in cells], dtype=int))
        if all(_is_real(c) for c in cells):
            return Column("real", np.array([float(c) for c in cells], dtype=float))
        return _factor_column(cells)
    if declared == "integer":
        if not all(_is_int(c) for c in cells):
            bad = next(i for i, c in enumerate(cells) if not _is_int(c))
            raise ValueError(f"column '{name}' declared integer; row {bad + 1} is '{cells[bad]}'")
        return Column("integer", np.array([int(c) for c in cells], dtype=int))
    if declared == "real":
        if not all(_is_real(c) for c in cells):
            bad = next(i for i, c in enumerate(cells) if not _is_real(c))
            raise ValueError(f"column '{name}' declared real; row {bad + 1} is '{cells[bad]}'")
        return Column("real", np.array([float(c) for c in cells], dtype=float))
    if declared == "factor":
        return _factor_column(cells)
    raise ValueError(f"unknown declared type '{declared}' for column '{name}'")


def load_table(path, column_types=None):
    """Read a comma-separated file with a mandatory header row.

    Types follow the declared map when given, otherwise: all-integer ->
    integer, all-numeric -> real, anything else -> factor. Missing cells are
    rejected, naming the row and column.
    """
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline().rstrip("\n")
    header = header_line.split(",")
    dupes = {h for h in header if header.count(h) > 1}
    if dupes:
        raise ValueError(f"duplicate header columns: {sorted(dupes)}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    column_types = column_types or {}
    unknown = set(column_types) - set(frame.columns)
    if unknown:
        raise ValueError(f"column_types for unknown columns: {sorted(unknown)}")
    cols = {}
    for name in frame.columns:
        cols[name] = _make_column(name, list(frame[name]), column_types.get(name))
    return ResponseTable(cols, len(frame))


def save_table(table, path):
    """Comma-separated export that load_table reads back unchanged."""
    names = list(table.columns)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in range(table.n_rows):
            cells = []
            for name in names:
                v = table.columns[name].values[row]
                cells.append(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
            fh.write(",".join(cells) + "\n")


def _numeric_values(col, name):
    if col.kind == "factor":
        raise ValueError(f"column '{name}' is a factor where a numeric value was expected")
    return np.asarray(col.values, dtype=float)


def _codes_against(col, name, levels):
    """0-based codes of a factor column against an externally fixed level
    order; labels outside it are rejected."""
    index = {lev: i for i, lev in enumerate(levels)}
    labels = col.values if col.kind == "factor" else np.asarray(col.values, dtype=object)
    codes = np.empty(len(labels), dtype=int)
    for row, label in enumerate(labels):
        if label not in index:
            raise ValueError(
                f"unseen level '{label}' of factor '{name}' (row {row + 1}); "
                f"known levels: {list(levels)}")
        codes[row] = index[label]
    return codes


def _expand_variable(table, name, drop_first, levels=None):
    """Expansion columns for one variable: [(suffix, values)]."""
    col = table.column(name)
    if levels is not None and name in levels:
        use_levels = levels[name]
        codes = _codes_against(col, name, use_levels)
    elif col.kind != "factor":
        return [(name, np.asarray(col.values, dtype=float))]
    else:
        use_levels = col.levels
        codes = col.codes
    if len(use_levels) < 2:
        raise ValueError(f"factor '{name}' has a single level")
    start = 1 if drop_first else 0
    out = []
    for j in range(start, len(use_levels)):
        out.append((f"{name}{use_levels[j]}", (codes == j).astype(float)))
    return out


def build_design_matrix(terms, table, intercept, levels=None):
    """Population design matrix for a list of terms.

    Terms are tuples of column names; length one is a main effect, longer
    tuples are interactions (elementwise products of the expanded columns).
    Factors expand against a dropped first level when an intercept is
    present; without an intercept the first factor main effect keeps all of
    its levels. When `levels` fixes a factor's level order (prediction on
    new data), labels outside it are errors.
    """
    names = []
    cols = []
    full_used = intercept  # only the first factor main effect expands fully
    for term in terms:
        if len(term) == 1:
            var = term[0]
            col = table.column(var)
            is_factor = col.kind == "factor" or (levels is not None and var in levels)
            drop = True
            if is_factor and not full_used:
                drop = False
                full_used = True
            for suffix, values in _expand_variable(table, var, drop, levels):
                names.append(suffix)
                cols.append(values)
        else:
            parts = [_expand_variable(table, var, True, levels) for var in term]
            combos = [([], np.ones(table.n_rows))]
            for part in parts:
                combos = [
                    (labels + [suffix], vals * values)
                    for labels, vals in combos
                    for suffix, values in part
                ]
            for labels, vals in combos:
                names.append(":".join(labels))
                cols.append(vals)
    if len(set(names)) != len(names):
        seen = [n for i, n in enumerate(names) if n in names[:i]]
        raise ValueError(f"duplicate design columns: {seen}")
    values = np.column_stack(cols) if cols else np.empty((table.n_rows, 0))
    return DesignMatrix(values, tuple(names))


def build_group_index(table, factor_name, levels=None):
    """Per-observation level ids (1-based) for a grouping factor."""
    col = table.column(factor_name)
    if levels is not None:
        codes = _codes_against(col, factor_name, levels)
        return GroupIndex(factor_name, len(levels), codes + 1, tuple(levels))
    if col.kind != "factor":
        raise ValueError(f"grouping column '{factor_name}' must be a factor")
    return GroupIndex(factor_name, len(col.levels), col.codes + 1, col.levels)
