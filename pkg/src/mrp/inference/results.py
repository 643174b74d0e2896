from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..model import ModelSpec, ParameterVector
from .diagnostics import summarize_draws

MAP, MMLE, FULL_BAYES = "MAP", "MMLE", "FULL_BAYES"
RHAT_THRESHOLD = 1.05
DIVERGENCE_WARN_RATE = 0.01
PARAMETRIZATIONS = ("auto", "noncentered", "centered")


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    retry_accept: float = 0.95  # used once when divergences exceed 1%
    parametrization: str = "auto"  # auto | noncentered | centered
    sweep: bool = True  # sample the intercept plus all batch means as one coordinate

    def __post_init__(self):
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}")
        for name in ("chains", "warmup", "samples", "max_tree_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FitResult:
    kind: str
    spec: ModelSpec
    point: ParameterVector | None = None
    draws: np.ndarray | None = None  # (chains, draws, params), constrained scale
    diagnostics: dict = field(default_factory=dict)
    seed: int | None = None
    chains: int = 0
    elapsed: float = 0.0
    converged: bool = True
    warnings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def param_names(self):
        return self.spec.param_names()

    @property
    def flat_draws(self):
        return None if self.draws is None else self.draws.reshape(-1, self.draws.shape[-1])

    def constrained_points(self):
        """Parameter rows used for prediction: every draw, or the single point."""
        if self.draws is not None:
            return self.flat_draws
        return self.point.constrained()[None, :]

    def posterior_mean(self) -> ParameterVector:
        if self.draws is None:
            return self.point
        return ParameterVector.from_constrained(self.flat_draws.mean(axis=0), self.spec)


def diagnostics_summary(fit: FitResult):
    """Machine-readable per-parameter table (list of dicts).

    Full-Bayes fits get mean, sd, quantiles, R-hat and ESS; point fits a
    single ``point`` column.
    """
    names = fit.param_names
    if fit.draws is not None:
        return summarize_draws(fit.draws, names)
    values = fit.point.constrained()
    return [{"name": n, "point": float(v)} for n, v in zip(names, values)]


def _clean(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def diagnostics_json(fit: FitResult):
    """Deterministic JSON document (no wall-clock fields)."""
    rows = [{k: _clean(v) for k, v in r.items()} for r in diagnostics_summary(fit)]
    doc = {
        "kind": fit.kind,
        "seed": fit.seed,
        "chains": fit.chains,
        "converged": fit.converged,
        "warnings": fit.warnings,
        "info": fit.info,
        "spec": fit.spec.to_dict(),
        "parameters": rows,
    }
    return json.dumps(doc, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return _clean(float(o))
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def save_fit(fit: FitResult, directory):
    """Write fit.json (+ draws.csv for full Bayes). Returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    meta = {
        "kind": fit.kind,
        "spec": fit.spec.to_dict(),
        "seed": fit.seed,
        "chains": fit.chains,
        "converged": fit.converged,
        "warnings": fit.warnings,
        "point": None if fit.point is None else [repr(float(v)) for v in fit.point.constrained()],
    }
    p = directory / "fit.json"
    p.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    written.append(p)
    if fit.draws is not None:
        p = directory / "draws.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "draw"] + fit.param_names)
            for c in range(fit.draws.shape[0]):
                for d in range(fit.draws.shape[1]):
                    w.writerow([c, d] + [repr(float(v)) for v in fit.draws[c, d]])
        written.append(p)
    return written


def load_fit(directory) -> FitResult:
    directory = Path(directory)
    meta = json.loads((directory / "fit.json").read_text(encoding="utf-8"))
    spec = ModelSpec.from_dict(meta["spec"])
    point = None
    if meta["point"] is not None:
        point = ParameterVector.from_constrained(np.array([float(v) for v in meta["point"]]), spec)
    draws = None
    if (directory / "draws.csv").exists():
        raw = np.loadtxt(directory / "draws.csv", delimiter=",", skiprows=1)
        raw = np.atleast_2d(raw)
        chains = int(raw[:, 0].max()) + 1
        draws = raw[:, 2:].reshape(chains, -1, spec.n_params)
    return FitResult(kind=meta["kind"], spec=spec, point=point, draws=draws, seed=meta["seed"],
                     chains=meta["chains"], converged=meta["converged"], warnings=meta["warnings"])
