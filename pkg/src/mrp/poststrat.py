"""Cell predictions, census-weighted subset estimates and raw proportions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FACTORS, N_CELLS, CellTable, SurveyDataset
from .model import ContractError, ModelSpec, build_index, inv_logit
from .states import N_STATES

SLICES = ("all", "white")
SERIES_COLUMNS = ("survey_id", "state", "income", "slice", "mean", "q25", "q75", "q025", "q975", "raw_p", "raw_n")
DRAW_CHUNK = 500


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class CellPrediction:
    """theta[d, j] = Pr(y=1) in cell j under draw d (one row for point fits)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if theta.shape[1] != N_CELLS:
            raise ContractError(f"expected {N_CELLS} cell predictions, got {theta.shape[1]}")
        object.__setattr__(self, "theta", theta)

    @property
    def n_draws(self):
        return self.theta.shape[0]


def _linear_predictor(rows, spec: ModelSpec, index):
    rows = np.atleast_2d(rows)
    eta = rows[:, spec.fixed_slice] @ index.fixed_design.T
    beta = rows[:, spec.beta_slice]
    for b in range(spec.n_batches):
        eta += beta[:, index.columns[:, b]]
    return eta


def predict_cells(fit, table: CellTable, spec: ModelSpec | None = None) -> CellPrediction:
    """inv_logit of every cell's linear predictor, per draw or at the point."""
    spec = spec or fit.spec
    if spec != fit.spec:
        raise ContractError("fit was produced under a different model spec")
    index = build_index(table, spec)
    rows = fit.constrained_points()
    if rows.shape[1] != spec.n_params:
        raise ContractError("parameter rows do not match the spec layout")
    return CellPrediction(inv_logit(_linear_predictor(rows, spec, index)))


def predict_from_params(params, table: CellTable, spec: ModelSpec) -> np.ndarray:
    index = build_index(table, spec)
    return inv_logit(_linear_predictor(params.constrained(), spec, index))[0]


def _as_set(v, factor):
    if v is None:
        return None
    values = (v,) if isinstance(v, (int, np.integer)) else tuple(v)
    for x in values:
        if not 1 <= int(x) <= FACTORS[factor]:
            raise QueryError(f"{factor} code {x} outside 1..{FACTORS[factor]}")
    return frozenset(int(x) for x in values)


@dataclass(frozen=True)
class SubsetQuery:
    """Conjunction of per-factor level sets; ``slice='white'`` adds ethnicity=1."""

    state: object = None
    income: object = None
    age: object = None
    ethnicity: object = None
    slice: str = "all"

    def __post_init__(self):
        if self.slice not in SLICES:
            raise QueryError(f"slice must be one of {SLICES}")
        for f in FACTORS:
            object.__setattr__(self, f, _as_set(getattr(self, f), f))
        if self.slice == "white":
            eth = self.ethnicity
            object.__setattr__(self, "ethnicity", frozenset({1}) if eth is None else eth & {1})

    def mask(self, obj):
        """Boolean selector over the rows of a CellTable or SurveyDataset."""
        n = len(obj.state)
        m = np.ones(n, dtype=bool)
        for f in FACTORS:
            levels = getattr(self, f)
            if levels is not None:
                m &= np.isin(getattr(obj, f), list(levels))
        return m


@dataclass(frozen=True)
class Estimate:
    draws: np.ndarray  # per-draw subset values

    @property
    def mean(self):
        return float(self.draws.mean())

    def quantile(self, q):
        return float(np.quantile(self.draws, q))

    @property
    def is_point(self):
        return self.draws.size == 1


def poststratify(preds: CellPrediction, table: CellTable, query: SubsetQuery) -> Estimate:
    """sum_{j in S} N_j theta_j / sum_{j in S} N_j, evaluated per draw."""
    sel = query.mask(table)
    if not sel.any():
        raise QueryError(f"query {query} selects no cells")
    weights = table.N[sel]
    total = weights.sum()
    if total <= 0:
        raise QueryError(f"query {query} selects cells with zero total population")
    return Estimate(preds.theta[:, sel] @ weights / total)


@dataclass(frozen=True)
class RawEstimate:
    proportion: float | None
    n: int

    @property
    def empty(self):
        return self.n == 0


EMPTY = RawEstimate(None, 0)


def raw_subset_estimate(data: SurveyDataset, query: SubsetQuery) -> RawEstimate:
    """Unweighted share voting 1 among matching respondents."""
    sel = query.mask(data)
    n = int(sel.sum())
    if n == 0:
        return EMPTY
    return RawEstimate(float(data.vote[sel].mean()), n)


@dataclass
class EstimateSeries:
    """Tidy (survey_id, state, income, slice) rows with summaries and raw data."""

    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def keys(self):
        return [(r["state"], r["income"], r["slice"]) for r in self.rows]

    def by_key(self):
        return {(r["state"], r["income"], r["slice"]): r for r in self.rows}

    def states(self):
        return sorted({r["state"] for r in self.rows})

    def slices(self):
        return [s for s in SLICES if any(r["slice"] == s for r in self.rows)]

    def curve(self, state, slice_="all", column="mean"):
        lookup = self.by_key()
        return np.array([lookup[(state, i, slice_)][column] for i in range(1, 6)], dtype=float)

    def to_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in SERIES_COLUMNS])
        return path

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for raw in csv.DictReader(fh):
                row = {"survey_id": raw["survey_id"], "state": int(raw["state"]),
                       "income": int(raw["income"]), "slice": raw["slice"], "raw_n": int(raw["raw_n"])}
                for c in ("mean", "q25", "q75", "q025", "q975", "raw_p"):
                    row[c] = float(raw[c]) if raw[c] != "" else None
                rows.append(row)
        return cls(rows)

    def shifted(self, delta):
        """Copy with every estimate column moved by ``delta`` (testing aid)."""
        out = []
        for r in self.rows:
            r = dict(r)
            for c in ("mean", "q25", "q75", "q025", "q975"):
                if r[c] is not None:
                    r[c] = r[c] + delta
            out.append(r)
        return EstimateSeries(out)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def series_queries(states=None, slices=SLICES):
    states = range(1, N_STATES + 1) if states is None else states
    return [(s, i, sl) for s in states for sl in slices for i in range(1, 6)]


def query_weights(table: CellTable, keys):
    """Rows of normalised census weights, one per (state, income, slice) key."""
    W = np.zeros((len(keys), N_CELLS))
    for q, (s, i, sl) in enumerate(keys):
        sel = SubsetQuery(state=s, income=i, slice=sl).mask(table)
        total = table.N[sel].sum()
        if total <= 0:
            raise QueryError(f"state {s}, income {i}, slice {sl} has zero census population")
        W[q, sel] = table.N[sel] / total
    return W


def estimate_series(fit, table: CellTable, data: SurveyDataset | None = None, survey_id="",
                    states=None, slices=SLICES) -> EstimateSeries:
    """State x income curves for the requested slices.

    Full-Bayes fits are aggregated per draw before summarising; point fits
    give ``mean`` only.
    """
    spec = fit.spec
    keys = series_queries(states, slices)
    W = query_weights(table, keys)
    index = build_index(table, spec)
    points = fit.constrained_points()
    values = np.empty((points.shape[0], len(keys)))
    for start in range(0, points.shape[0], DRAW_CHUNK):
        chunk = points[start:start + DRAW_CHUNK]
        values[start:start + DRAW_CHUNK] = inv_logit(_linear_predictor(chunk, spec, index)) @ W.T
    return _series_from_values(values, keys, data, survey_id, full=fit.draws is not None)


def series_from_cell_theta(theta, table: CellTable, data=None, survey_id="", states=None, slices=SLICES):
    """Series for known cell probabilities (e.g. the simulation truth)."""
    keys = series_queries(states, slices)
    values = np.atleast_2d(theta) @ query_weights(table, keys).T
    return _series_from_values(values, keys, data, survey_id, full=False)


def _series_from_values(values, keys, data, survey_id, full):
    rows = []
    if full:
        qs = np.quantile(values, [0.25, 0.75, 0.025, 0.975], axis=0)
    for q, (s, i, sl) in enumerate(keys):
        row = {"survey_id": survey_id, "state": s, "income": i, "slice": sl,
               "mean": float(values[:, q].mean())}
        if full:
            row.update(q25=float(qs[0, q]), q75=float(qs[1, q]), q025=float(qs[2, q]), q975=float(qs[3, q]))
        else:
            row.update(q25=None, q75=None, q025=None, q975=None)
        raw = raw_subset_estimate(data, SubsetQuery(state=s, income=i, slice=sl)) if data is not None else EMPTY
        row.update(raw_p=raw.proportion, raw_n=raw.n)
        rows.append(row)
    return EstimateSeries(rows)


def population_estimate(preds: CellPrediction, table: CellTable) -> Estimate:
    return poststratify(preds, table, SubsetQuery())
