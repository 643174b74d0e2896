"""Survey microdata, census cell tables and their validation.

Everything downstream works on category indices that are 1-based:
income 1..5, age 1..4, ethnicity 1..4 (white, black, hispanic, other) and
state 1..51 (see :mod:`mrp.states`).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .states import N_STATES, state_code

FACTORS = {"income": 5, "age": 4, "ethnicity": 4, "state": N_STATES}
ETHNICITY_LABELS = ("white", "black", "hispanic", "other")
N_CELLS = 5 * 4 * 4 * N_STATES

SURVEY_COLUMNS = ("vote", "income", "age", "ethnicity", "state")
CELL_COLUMNS = ("income", "age", "ethnicity", "state", "N", "state_predictor")


class DataError(ValueError):
    """Base class for ingest failures."""


class SchemaError(DataError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"required column missing: {column!r}")


class RowError(DataError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class DatasetError(DataError):
    pass


class DuplicateCellError(DataError):
    def __init__(self, cell):
        self.cell = cell
        super().__init__(f"duplicated cell (income, age, ethnicity, state) = {cell}")


class MissingCellError(DataError):
    def __init__(self, cell):
        self.cell = cell
        super().__init__(f"missing cell (income, age, ethnicity, state) = {cell}")


class ConsistencyError(DataError):
    pass


@dataclass(frozen=True)
class SurveyResponse:
    vote: int
    income: int
    age: int
    ethnicity: int
    state: int
    survey_id: str = ""


@dataclass(frozen=True)
class SurveySchema:
    """Maps a raw survey file onto the canonical columns.

    ``columns`` renames canonical -> raw header. ``undecided_codes`` are raw
    vote values that are excluded before modelling; any other vote value
    must appear in ``vote_codes``. ``recode`` optionally maps raw category
    codes to canonical indices per factor.
    """

    columns: dict = field(default_factory=dict)
    vote_codes: dict = field(default_factory=lambda: {"1": 1, "0": 0})
    undecided_codes: tuple = ("9",)
    recode: dict = field(default_factory=dict)
    on_error: str = "fail"
    survey_id: str | None = None

    def __post_init__(self):
        if self.on_error not in ("fail", "drop"):
            raise ValueError(f"on_error must be 'fail' or 'drop', got {self.on_error!r}")

    def raw_name(self, column):
        return self.columns.get(column, column)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "undecided_codes" in d:
            d["undecided_codes"] = tuple(str(c) for c in d["undecided_codes"])
        if "vote_codes" in d:
            d["vote_codes"] = {str(k): int(v) for k, v in d["vote_codes"].items()}
        if "recode" in d:
            d["recode"] = {
                f: {str(k): int(v) for k, v in m.items()} for f, m in d["recode"].items()
            }
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        return {
            "columns": dict(self.columns),
            "vote_codes": dict(self.vote_codes),
            "undecided_codes": list(self.undecided_codes),
            "recode": {f: dict(m) for f, m in self.recode.items()},
            "on_error": self.on_error,
            "survey_id": self.survey_id,
        }


@dataclass(frozen=True, eq=False)
class SurveyDataset:
    """Column-oriented survey responses (two-party voters only)."""

    vote: np.ndarray
    income: np.ndarray
    age: np.ndarray
    ethnicity: np.ndarray
    state: np.ndarray
    survey_id: tuple = ()
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.vote)
        for name in SURVEY_COLUMNS:
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (n,):
                raise DatasetError(f"column {name} has length {arr.size}, expected {n}")
            object.__setattr__(self, name, arr)
        if not self.survey_id:
            object.__setattr__(self, "survey_id", ("",) * n)
        elif len(self.survey_id) != n:
            raise DatasetError("survey_id length does not match responses")
        else:
            object.__setattr__(self, "survey_id", tuple(self.survey_id))
        if n == 0:
            raise DatasetError("survey dataset is empty")
        if not np.isin(self.vote, (0, 1)).all():
            raise DatasetError("vote must be binary (0/1)")
        for factor, k in FACTORS.items():
            col = getattr(self, factor)
            bad = np.flatnonzero((col < 1) | (col > k))
            if bad.size:
                raise RowError(int(bad[0]) + 1, f"{factor} code {col[bad[0]]} outside 1..{k}")
        if np.unique(self.state).size < 2:
            raise DatasetError("at least 2 distinct states are required")

    @property
    def n(self):
        return len(self.vote)

    def __len__(self):
        return self.n

    def responses(self) -> Iterator[SurveyResponse]:
        for i in range(self.n):
            yield SurveyResponse(
                int(self.vote[i]), int(self.income[i]), int(self.age[i]),
                int(self.ethnicity[i]), int(self.state[i]), self.survey_id[i],
            )

    def same_responses(self, other):
        return (
            self.n == other.n
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in SURVEY_COLUMNS)
            and self.survey_id == other.survey_id
        )

    def cell_positions(self):
        return cell_position(self.income, self.age, self.ethnicity, self.state)


def cell_position(income, age, ethnicity, state):
    """Flat position of a cell in canonical (state, ethnicity, age, income) order."""
    income, age, ethnicity, state = (np.asarray(a) for a in (income, age, ethnicity, state))
    return (((state - 1) * 4 + (ethnicity - 1)) * 4 + (age - 1)) * 5 + (income - 1)


def _canonical_grid():
    s, e, a, i = np.meshgrid(
        np.arange(1, N_STATES + 1), np.arange(1, 5), np.arange(1, 5), np.arange(1, 6),
        indexing="ij",
    )
    return i.ravel(), a.ravel(), e.ravel(), s.ravel()


@dataclass(frozen=True, eq=False)
class CellTable:
    """The full income x age x ethnicity x state grid with census counts.

    Cells are stored in canonical lexicographic order (state, ethnicity,
    age, income), so ``cell_position`` gives the row of any cell.
    """

    N: np.ndarray
    state_predictor: np.ndarray  # per-cell, constant within a state

    def __post_init__(self):
        N = np.asarray(self.N, dtype=float)
        pred = np.asarray(self.state_predictor, dtype=float)
        if N.shape != (N_CELLS,) or pred.shape != (N_CELLS,):
            raise DataError(f"cell table must have exactly {N_CELLS} cells")
        if not np.all(np.isfinite(N)) or (N < 0).any():
            raise ValueError("population counts N must be finite and nonnegative")
        if N.sum() <= 0:
            raise ValueError("total population must be positive")
        by_state = N.reshape(N_STATES, -1).sum(axis=1)
        if (by_state <= 0).any():
            s = int(np.flatnonzero(by_state <= 0)[0]) + 1
            raise ValueError(f"state {s} has zero total population")
        p = pred.reshape(N_STATES, -1)
        if not np.all(p == p[:, :1]):
            s = int(np.flatnonzero((p != p[:, :1]).any(axis=1))[0]) + 1
            raise ConsistencyError(f"state_predictor varies within state {s}")
        if ((pred < 0) | (pred > 1)).any():
            raise ValueError("state_predictor must lie in [0, 1]")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "state_predictor", pred)
        inc, age, eth, st = _canonical_grid()
        object.__setattr__(self, "income", inc)
        object.__setattr__(self, "age", age)
        object.__setattr__(self, "ethnicity", eth)
        object.__setattr__(self, "state", st)

    def __len__(self):
        return N_CELLS

    @classmethod
    def from_state_arrays(cls, N, state_share):
        """Build from N in canonical order and one predictor value per state."""
        state_share = np.asarray(state_share, dtype=float)
        return cls(N=N, state_predictor=np.repeat(state_share, N_CELLS // N_STATES))

    @property
    def state_totals(self):
        return self.N.reshape(N_STATES, -1).sum(axis=1)

    @property
    def state_share(self):
        return self.state_predictor.reshape(N_STATES, -1)[:, 0]

    def cells(self):
        return np.column_stack([self.income, self.age, self.ethnicity, self.state])


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = [dict(r) for r in reader]
    return header, rows


def load_survey(path, schema: SurveySchema | None = None, meta: dict | None = None) -> SurveyDataset:
    """Read survey microdata, drop undecided/other answers, recode categories.

    Row numbers in errors count data rows from 1 (header excluded).
    """
    schema = schema or SurveySchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    header, rows = _read_csv(path)
    for col in SURVEY_COLUMNS:
        if schema.raw_name(col) not in header:
            raise SchemaError(col)
    id_col = schema.raw_name("survey_id")
    has_id = id_col in header

    out = {c: [] for c in SURVEY_COLUMNS}
    ids = []
    dropped_undecided = 0
    dropped_invalid = 0
    undecided = set(schema.undecided_codes)
    for rownum, row in enumerate(rows, start=1):
        raw_vote = row[schema.raw_name("vote")].strip()
        if raw_vote in undecided:
            dropped_undecided += 1
            continue
        try:
            if raw_vote not in schema.vote_codes:
                raise RowError(rownum, f"unrecognised vote code {raw_vote!r}")
            values = {"vote": schema.vote_codes[raw_vote]}
            for factor, k in FACTORS.items():
                raw = row[schema.raw_name(factor)].strip()
                mapping = schema.recode.get(factor)
                if mapping is not None:
                    if raw not in mapping:
                        raise RowError(rownum, f"{factor} code {raw!r} has no recode")
                    code = mapping[raw]
                else:
                    try:
                        code = int(raw)
                    except ValueError:
                        raise RowError(rownum, f"{factor} code {raw!r} is not an integer") from None
                if not 1 <= code <= k:
                    raise RowError(rownum, f"{factor} code {code} outside 1..{k}")
                values[factor] = code
        except RowError:
            if schema.on_error == "fail":
                raise
            dropped_invalid += 1
            continue
        for c in SURVEY_COLUMNS:
            out[c].append(values[c])
        ids.append(row[id_col] if has_id else (schema.survey_id or ""))

    if not out["vote"]:
        raise DatasetError(f"{path}: no two-party responses left after exclusions")
    source_meta = {
        "path": str(path),
        "dropped_undecided": dropped_undecided,
        "dropped_invalid": dropped_invalid,
        "dropped": dropped_undecided + dropped_invalid,
        "weights": "none (raw unweighted)",
    }
    source_meta.update(meta or {})
    return SurveyDataset(**{c: np.array(v, dtype=np.int64) for c, v in out.items()},
                         survey_id=tuple(ids), source_meta=source_meta)


def write_survey(dataset: SurveyDataset, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURVEY_COLUMNS + ("survey_id",))
        for r in dataset.responses():
            w.writerow((r.vote, r.income, r.age, r.ethnicity, r.state, r.survey_id))
    return path


def load_cell_table(path) -> CellTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    header, rows = _read_csv(path)
    for col in CELL_COLUMNS:
        if col not in header:
            raise SchemaError(col)
    N = np.full(N_CELLS, np.nan)
    pred = np.full(N_CELLS, np.nan)
    seen = np.zeros(N_CELLS, dtype=bool)
    for rownum, row in enumerate(rows, start=1):
        try:
            key = tuple(int(row[c]) for c in ("income", "age", "ethnicity", "state"))
            n_j = float(row["N"])
            share = float(row["state_predictor"])
        except ValueError as exc:
            raise RowError(rownum, str(exc)) from None
        for factor, code in zip(("income", "age", "ethnicity", "state"), key):
            if not 1 <= code <= FACTORS[factor]:
                raise RowError(rownum, f"{factor} code {code} outside 1..{FACTORS[factor]}")
        if n_j < 0:
            raise ValueError(f"row {rownum}: negative population N={n_j} for cell {key}")
        pos = int(cell_position(*key))
        if seen[pos]:
            raise DuplicateCellError(key)
        seen[pos] = True
        N[pos] = n_j
        pred[pos] = share
    if not seen.all():
        inc, age, eth, st = _canonical_grid()
        first = int(np.flatnonzero(~seen)[0])
        raise MissingCellError((int(inc[first]), int(age[first]), int(eth[first]), int(st[first])))
    return CellTable(N=N, state_predictor=pred)


def write_cell_table(table: CellTable, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_COLUMNS)
        for j in range(N_CELLS):
            w.writerow((table.income[j], table.age[j], table.ethnicity[j], table.state[j],
                        repr(float(table.N[j])), repr(float(table.state_predictor[j]))))
    return path


@dataclass
class CompatibilityReport:
    status: str
    warnings: list
    factors: dict  # factor -> {level: {"respondents": int, "population": float}}
    state_totals: dict

    def to_dict(self):
        return {"status": self.status, "warnings": list(self.warnings),
                "factors": self.factors, "state_totals": self.state_totals}


def validate_compatibility(data: SurveyDataset, table: CellTable) -> CompatibilityReport:
    """Cross-check survey coverage against census mass. Never raises."""
    warnings = []
    factors = {}
    for factor, k in FACTORS.items():
        counts = np.bincount(getattr(data, factor) - 1, minlength=k)
        pop = np.bincount(getattr(table, factor) - 1, weights=table.N, minlength=k)
        factors[factor] = {
            int(level): {"respondents": int(counts[level - 1]), "population": float(pop[level - 1])}
            for level in range(1, k + 1)
        }
        for level in range(1, k + 1):
            label = f"{factor} {level}"
            if factor == "state":
                label += f" ({state_code(level)})"
            if counts[level - 1] == 0 and pop[level - 1] > 0:
                warnings.append(f"{label} unobserved; estimate will be prior/pooling-driven")
            if counts[level - 1] > 0 and pop[level - 1] == 0:
                warnings.append(f"{label} has respondents but zero census population")

    occupied = np.zeros(N_CELLS, dtype=bool)
    occupied[data.cell_positions()] = True
    for j in np.flatnonzero(occupied & (table.N == 0)):
        cell = (int(table.income[j]), int(table.age[j]), int(table.ethnicity[j]), int(table.state[j]))
        warnings.append(f"cell (income, age, ethnicity, state) = {cell} has respondents but census N=0")

    state_totals = {int(s): float(t) for s, t in enumerate(table.state_totals, start=1)}
    return CompatibilityReport(
        status="warn" if warnings else "pass",
        warnings=warnings,
        factors=factors,
        state_totals=state_totals,
    )
