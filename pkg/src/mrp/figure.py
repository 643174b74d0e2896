"""Small-multiples state grid: income curves for all voters and whites."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .poststrat import SLICES, EstimateSeries  # noqa: E402
from .states import state_code, states_for_filter  # noqa: E402

SLICE_STYLE = {
    "all": {"color": "black", "label": "all voters"},
    "white": {"color": "#8b4513", "label": "white voters"},
}
INCOME_LABELS = ("poor", "", "mid", "", "rich")


class FigureError(ValueError):
    pass


@dataclass(frozen=True)
class FigureOptions:
    state_filter: str = "all"  # all | states-50 | contiguous-48
    slices: tuple = SLICES
    order: str = "state_predictor"  # state_predictor | state
    ncols: int | None = None
    title: str = ""
    show_raw: bool = True
    panel_size: float = 1.35  # inches
    ylim: tuple = (0.0, 1.0)

    def __post_init__(self):
        states_for_filter(self.state_filter)
        bad = [s for s in self.slices if s not in SLICES]
        if bad:
            raise FigureError(f"unknown slice(s) {bad}")
        if self.order not in ("state_predictor", "state"):
            raise FigureError("order must be 'state_predictor' or 'state'")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "slices" in d:
            d["slices"] = tuple(d["slices"])
        if "ylim" in d:
            d["ylim"] = tuple(d["ylim"])
        return cls(**d)


def panel_order(states, order="state_predictor", state_share=None):
    """States sorted by the ordering key (ties by state index)."""
    states = list(states)
    if order == "state":
        return sorted(states)
    if state_share is None:
        raise FigureError("ordering by state_predictor needs the per-state shares")
    share = np.asarray(state_share, dtype=float)
    return sorted(states, key=lambda s: (share[s - 1], s))


def _subset(series: EstimateSeries, states, slices):
    keep = set(states)
    rows = [r for r in series.rows if r["state"] in keep and r["slice"] in slices]
    lookup = {(r["state"], r["income"], r["slice"]) for r in rows}
    for s in states:
        for sl in slices:
            missing = [i for i in range(1, 6) if (s, i, sl) not in lookup]
            if missing:
                raise FigureError(f"series lacks state {s} ({state_code(s)}), slice {sl}, income {missing}")
    return EstimateSeries(rows)


def emit_state_grid_figure(series: EstimateSeries, path, options: FigureOptions = FigureOptions(),
                           state_share=None):
    """Write the SVG grid and, next to it, the tidy CSV of the plotted rows.

    Returns (svg_path, csv_path, ordered_states).
    """
    path = Path(path)
    states = panel_order(states_for_filter(options.state_filter), options.order, state_share)
    sub = _subset(series, states, options.slices)
    lookup = sub.by_key()

    n = len(states)
    ncols = options.ncols or math.ceil(math.sqrt(n * 1.5))
    nrows = math.ceil(n / ncols)
    plt.rcParams["svg.hashsalt"] = "mrp-state-grid"
    plt.rcParams["svg.fonttype"] = "none"
    size = options.panel_size
    fig, axes = plt.subplots(nrows, ncols, figsize=(ncols * size, nrows * size + 0.5),
                             sharex=True, sharey=True, squeeze=False)
    x = np.arange(1, 6)
    raw_n = [r["raw_n"] for r in sub.rows if r["raw_n"]]
    n_scale = 30.0 / max(raw_n) if raw_n else 0.0
    for k, ax in enumerate(axes.flat):
        if k >= n:
            ax.set_axis_off()
            continue
        s = states[k]
        ax.set_gid(f"panel-{state_code(s)}")
        for sl in options.slices:
            rows = [lookup[(s, i, sl)] for i in x]
            color = SLICE_STYLE[sl]["color"]
            mean = np.array([r["mean"] for r in rows])
            if rows[0]["q025"] is not None:
                ax.fill_between(x, [r["q025"] for r in rows], [r["q975"] for r in rows],
                                color=color, alpha=0.12, linewidth=0)
                ax.fill_between(x, [r["q25"] for r in rows], [r["q75"] for r in rows],
                                color=color, alpha=0.25, linewidth=0)
            ax.plot(x, mean, color=color, linewidth=1.0)
            if options.show_raw:
                pts = [(i, r["raw_p"], r["raw_n"]) for i, r in zip(x, rows) if r["raw_n"]]
                if pts:
                    px, py, pn = zip(*pts)
                    ax.scatter(px, py, s=[1.0 + n_scale * v for v in pn], color=color,
                               alpha=0.5, linewidths=0)
        ax.set_ylim(*options.ylim)
        ax.set_xlim(0.7, 5.3)
        ax.axhline(0.5, color="0.8", linewidth=0.5, zorder=0)
        ax.set_title(state_code(s), fontsize=7, pad=2)
        ax.tick_params(labelsize=5, length=2, pad=1)
        ax.set_xticks(x)
        ax.set_xticklabels(INCOME_LABELS)
        ax.set_yticks([0.0, 0.5, 1.0])
    caption = options.title or "Republican share of the two-party vote by state and income"
    legend = ", ".join(f"{SLICE_STYLE[s]['label']} ({SLICE_STYLE[s]['color']})" for s in options.slices)
    fig.suptitle(f"{caption}\n{legend}; raw points unweighted", fontsize=8)
    top = 1.0 - 0.55 / (nrows * size + 0.5)
    fig.subplots_adjust(left=0.04, right=0.99, bottom=0.04, top=top, wspace=0.12, hspace=0.45)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    csv_path = path.with_suffix(".csv")
    sub.to_csv(csv_path)
    return path, csv_path, states


def count_panels(svg_path):
    """Number of state panels in an emitted SVG."""
    text = Path(svg_path).read_text(encoding="utf-8")
    return text.count('id="panel-')
