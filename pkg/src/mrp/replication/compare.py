"""Cross-run comparison: paired differences and income-curve jumpiness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..poststrat import EstimateSeries

N_INCOME = 5


class ComparisonError(ValueError):
    pass


def second_difference_msd(curve):
    """Mean squared second difference of a 5-point curve."""
    c = np.asarray(curve, dtype=float)
    if c.shape != (N_INCOME,):
        raise ComparisonError(f"expected {N_INCOME} income points, got {c.shape}")
    d2 = c[2:] - 2.0 * c[1:-1] + c[:-2]
    return float(np.mean(d2 * d2))


def sign_changes(curve):
    """Number of sign changes between consecutive nonzero first differences."""
    d = np.diff(np.asarray(curve, dtype=float))
    s = np.sign(d[d != 0])
    return int(np.sum(s[1:] != s[:-1]))


@dataclass
class SmoothnessReport:
    per_state: dict  # (state, slice) -> {"msd", "sign_changes"}
    pooled: dict  # slice -> population-weighted mean msd
    weights: dict  # state -> weight used for pooling

    def to_dict(self):
        rows = [{"state": s, "slice": sl, **v} for (s, sl), v in sorted(self.per_state.items())]
        return {"per_state": rows, "pooled": dict(self.pooled),
                "weights": {str(k): v for k, v in sorted(self.weights.items())}}


def smoothness_diagnostic(series: EstimateSeries, weights=None, column="mean") -> SmoothnessReport:
    """Per (state, slice) jumpiness plus a population-weighted pooled value.

    ``weights`` maps state -> population (e.g. ``CellTable.state_totals``,
    indexed by state code); equal weights when omitted.
    """
    lookup = series.by_key()
    states = series.states()
    per_state = {}
    for sl in series.slices():
        for s in states:
            missing = [i for i in range(1, N_INCOME + 1) if (s, i, sl) not in lookup]
            if missing:
                raise ComparisonError(f"state {s} ({sl}) lacks income point(s) {missing}")
            curve = [lookup[(s, i, sl)][column] for i in range(1, N_INCOME + 1)]
            per_state[(s, sl)] = {"msd": second_difference_msd(curve), "sign_changes": sign_changes(curve)}
    if weights is None:
        w = {s: 1.0 for s in states}
    elif isinstance(weights, dict):
        w = {s: float(weights[s]) for s in states}
    else:
        arr = np.asarray(weights, dtype=float)
        w = {s: float(arr[s - 1]) for s in states}
    total = sum(w.values())
    if total <= 0:
        raise ComparisonError("pooling weights must have positive total")
    pooled = {sl: sum(w[s] * per_state[(s, sl)]["msd"] for s in states) / total for sl in series.slices()}
    return SmoothnessReport(per_state, pooled, w)


@dataclass
class ComparisonReport:
    pairs: list = field(default_factory=list)  # dicts: state, income, slice, a, b, diff (b - a)
    mean_abs_diff: float = 0.0
    max_abs_diff: float = 0.0
    mean_diff: float = 0.0
    smoothness_a: SmoothnessReport | None = None
    smoothness_b: SmoothnessReport | None = None
    sign_agreement: float = 1.0  # share of (state, slice) curves with matching sign of inc5 - inc1

    def to_dict(self):
        return {
            "mean_abs_diff": self.mean_abs_diff,
            "max_abs_diff": self.max_abs_diff,
            "mean_diff": self.mean_diff,
            "sign_agreement": self.sign_agreement,
            "smoothness_a": self.smoothness_a.to_dict(),
            "smoothness_b": self.smoothness_b.to_dict(),
            "n_pairs": len(self.pairs),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("state", "income", "slice", "a", "b", "diff"))
            for p in self.pairs:
                w.writerow((p["state"], p["income"], p["slice"], repr(p["a"]), repr(p["b"]), repr(p["diff"])))
        return Path(path)


def compare_runs(a: EstimateSeries, b: EstimateSeries, weights=None, column="mean") -> ComparisonReport:
    ka, kb = a.by_key(), b.by_key()
    only_a = sorted(set(ka) - set(kb))
    only_b = sorted(set(kb) - set(ka))
    if only_a or only_b:
        raise ComparisonError(f"key sets differ; missing from b: {only_a[:10]}, missing from a: {only_b[:10]}")
    pairs = []
    for key in sorted(ka):
        va, vb = ka[key][column], kb[key][column]
        pairs.append({"state": key[0], "income": key[1], "slice": key[2], "a": va, "b": vb, "diff": vb - va})
    diffs = np.array([p["diff"] for p in pairs])
    agree = []
    for sl in a.slices():
        for s in a.states():
            ga = ka[(s, 5, sl)][column] - ka[(s, 1, sl)][column]
            gb = kb[(s, 5, sl)][column] - kb[(s, 1, sl)][column]
            agree.append(np.sign(ga) == np.sign(gb))
    return ComparisonReport(
        pairs=pairs,
        mean_abs_diff=float(np.abs(diffs).mean()),
        max_abs_diff=float(np.abs(diffs).max()),
        mean_diff=float(diffs.mean()),
        smoothness_a=smoothness_diagnostic(a, weights, column),
        smoothness_b=smoothness_diagnostic(b, weights, column),
        sign_agreement=float(np.mean(agree)) if agree else 1.0,
    )
