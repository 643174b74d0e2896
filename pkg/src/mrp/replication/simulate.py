"""Synthetic census tables and surveys with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import N_CELLS, CellTable, SurveyDataset
from ..model import ModelSpec, ParameterVector, build_index
from ..poststrat import CellPrediction, SubsetQuery, poststratify, series_from_cell_theta
from ..states import N_STATES

PRESETS = {
    "pew2008-scale": 19_170,
    "annenberg2004-scale": 43_970,
}

# Batch sd used when drawing true coefficients; unknown batches get 0.2.
DEFAULT_TRUE_SIGMA = {
    "income": 0.3,
    "age": 0.15,
    "ethnicity": 1.0,
    "state": 0.25,
    "income:state": 0.1,
    "ethnicity:income": 0.2,
    "ethnicity:state": 0.3,
}
DEFAULT_TRUE_FIXED = {"intercept": 0.1, "state_predictor": 5.0}


class SimulationConfigError(ValueError):
    pass


def synthetic_cell_table(seed=0) -> CellTable:
    """A plausible census grid: state sizes, ethnic mix, age and income profiles."""
    rng = np.random.default_rng(seed)
    pop = np.exp(rng.normal(np.log(4e6), 0.9, size=N_STATES))
    eth = rng.dirichlet(3.0 * np.array([6.0, 1.0, 1.2, 0.6]), size=N_STATES)
    age = rng.dirichlet(20.0 * np.array([0.22, 0.3, 0.28, 0.2]), size=N_STATES)
    # income profile per (state, ethnicity); whites skew higher
    base_income = np.array([[0.18, 0.2, 0.22, 0.22, 0.18],
                            [0.3, 0.26, 0.2, 0.15, 0.09],
                            [0.28, 0.26, 0.21, 0.15, 0.1],
                            [0.22, 0.22, 0.2, 0.19, 0.17]])
    inc = np.stack([rng.dirichlet(25.0 * base_income[e], size=N_STATES) for e in range(4)], axis=1)
    # canonical order: state, ethnicity, age, income
    N = pop[:, None, None, None] * eth[:, :, None, None] * age[:, None, :, None] * inc[:, :, None, :]
    share = np.clip(rng.normal(0.5, 0.08, size=N_STATES), 0.2, 0.8)
    return CellTable.from_state_arrays(np.round(N.reshape(-1)), share)


def generate_truth(spec: ModelSpec, seed=0, sigma=None, fixed=None) -> ParameterVector:
    rng = np.random.default_rng(seed)
    sigma_map = dict(DEFAULT_TRUE_SIGMA, **(sigma or {}))
    fixed_map = dict(DEFAULT_TRUE_FIXED, **(fixed or {}))
    sig = np.array([sigma_map.get(b.name, 0.2) for b in spec.batches], dtype=float)
    if (sig < 0).any():
        raise SimulationConfigError("true sigma must be nonnegative")
    beta = rng.standard_normal(spec.n_beta) * sig[spec.beta_batch]
    return ParameterVector(np.array([fixed_map[t] for t in spec.fixed_terms], dtype=float), beta, sig)


@dataclass(frozen=True)
class SyntheticConfig:
    n: int
    seed: int = 0
    truth: ParameterVector | None = None
    truth_seed: int = 0
    true_sigma: dict = field(default_factory=dict)
    sampling_weights: np.ndarray | None = None  # None: proportional to N_j
    bias_scale: float = 0.0
    survey_id: str = "synthetic"

    def __post_init__(self):
        if self.n <= 0:
            raise SimulationConfigError("n must be positive")
        if self.bias_scale < 0:
            raise SimulationConfigError("bias_scale must be nonnegative")

    @classmethod
    def preset(cls, name, **kw):
        try:
            n = PRESETS[name]
        except KeyError:
            raise SimulationConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
        kw.setdefault("survey_id", name)
        return cls(n=n, **kw)


@dataclass
class Truth:
    params: ParameterVector
    cell_theta: np.ndarray  # population truth, no survey bias
    cell_bias: np.ndarray  # logit-scale survey error per cell
    population_value: float
    series: object  # EstimateSeries of true subset values


def simulate_survey(config: SyntheticConfig, table: CellTable, spec: ModelSpec):
    """Draw respondents' cells, then votes from the (optionally biased) cell model."""
    truth = config.truth or generate_truth(spec, config.truth_seed, config.true_sigma)
    truth.check(spec)
    weights = table.N if config.sampling_weights is None else np.asarray(config.sampling_weights, float)
    if weights.shape != (N_CELLS,) or (weights < 0).any() or weights.sum() <= 0:
        raise SimulationConfigError("sampling weights must be nonnegative with positive total")
    rng = np.random.default_rng(config.seed)
    index = build_index(table, spec)
    eta = index.linear_predictor(truth)
    bias = rng.normal(0.0, config.bias_scale, N_CELLS) if config.bias_scale > 0 else np.zeros(N_CELLS)
    cells = rng.choice(N_CELLS, size=config.n, p=weights / weights.sum())
    p_resp = 1.0 / (1.0 + np.exp(-(eta + bias)))
    votes = (rng.random(config.n) < p_resp[cells]).astype(np.int64)
    data = SurveyDataset(
        vote=votes,
        income=table.income[cells],
        age=table.age[cells],
        ethnicity=table.ethnicity[cells],
        state=table.state[cells],
        survey_id=(config.survey_id,) * config.n,
        source_meta={"survey": config.survey_id, "simulated": True, "seed": config.seed,
                     "bias_scale": config.bias_scale, "dropped": 0},
    )
    theta = 1.0 / (1.0 + np.exp(-eta))
    pop = poststratify(CellPrediction(theta), table, SubsetQuery()).mean
    truth_record = Truth(
        params=truth, cell_theta=theta, cell_bias=bias, population_value=pop,
        series=series_from_cell_theta(theta, table, survey_id="truth"),
    )
    return data, truth_record
