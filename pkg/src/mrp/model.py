"""Hierarchical logistic regression: coefficient layout, density, gradient.

Unconstrained parameter layout (one flat vector)::

    [fixed terms | beta, batch by batch | log sigma, one per batch]

``fixed`` holds the intercept and the slope on the centred state
predictor (flat prior). Each batch of ``beta`` has a N(0, sigma_b) prior
and each sigma_b a half-normal(prior_scale_hyper) hyperprior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import _sparsetools

from .data import FACTORS, CellTable, SurveyDataset

FIXED_TERMS = ("intercept", "state_predictor")
DEFAULT_INTERACTIONS = (("income", "state"), ("ethnicity", "income"), ("ethnicity", "state"))
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class ContractError(ValueError):
    """Inputs with inconsistent dimensions or layout."""


class DesignIndexError(ContractError):
    pass


@dataclass(frozen=True)
class Batch:
    """A group of coefficients indexed by one factor or a product of factors.

    An empty ``factors`` tuple gives a single shared coefficient.
    """

    name: str
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        for f in self.factors:
            if f not in FACTORS:
                raise ValueError(f"unknown factor {f!r}")

    @property
    def levels(self):
        return math.prod(FACTORS[f] for f in self.factors)

    def composite(self, codes):
        """Zero-based level index from 1-based category codes, row-major in factor order."""
        if not self.factors:
            return 0
        idx = np.zeros(np.shape(codes[self.factors[0]]), dtype=np.int64)
        for f in self.factors:
            idx = idx * FACTORS[f] + (np.asarray(codes[f], dtype=np.int64) - 1)
        return idx


def _batch(*factors):
    return Batch(":".join(factors), factors)


@dataclass(frozen=True)
class ModelSpec:
    batches: tuple
    fixed_terms: tuple = FIXED_TERMS
    prior_scale_hyper: float = 1.0
    predictor_center: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "batches", tuple(self.batches))
        object.__setattr__(self, "fixed_terms", tuple(self.fixed_terms))
        names = [b.name for b in self.batches]
        if len(set(names)) != len(names):
            raise ValueError("batch names must be unique")
        for t in self.fixed_terms:
            if t not in FIXED_TERMS:
                raise ValueError(f"unknown fixed term {t!r}")
        if not self.prior_scale_hyper > 0:
            raise ValueError("prior_scale_hyper must be positive")
        if self.n_params == 0:
            raise ValueError("model has no parameters")

    @classmethod
    def default(cls, interactions=DEFAULT_INTERACTIONS, **kw):
        mains = [_batch(f) for f in FACTORS]
        return cls(batches=tuple(mains + [_batch(*pair) for pair in interactions]), **kw)

    @classmethod
    def main_effects(cls, **kw):
        return cls.default(interactions=(), **kw)

    @property
    def interaction_set(self):
        return tuple(b.factors for b in self.batches if len(b.factors) > 1)

    @property
    def n_fixed(self):
        return len(self.fixed_terms)

    @property
    def n_batches(self):
        return len(self.batches)

    @cached_property
    def levels(self):
        return np.array([b.levels for b in self.batches], dtype=np.int64)

    @cached_property
    def offsets(self):
        """Start of each batch inside the beta block."""
        return np.concatenate([[0], np.cumsum(self.levels)[:-1]]).astype(np.int64)

    @property
    def n_beta(self):
        return int(self.levels.sum())

    @property
    def n_params(self):
        return self.n_fixed + self.n_beta + self.n_batches

    @cached_property
    def beta_batch(self):
        """Batch number of every beta coefficient."""
        return np.repeat(np.arange(self.n_batches), self.levels)

    def batch_slice(self, b):
        start = self.n_fixed + int(self.offsets[b])
        return slice(start, start + int(self.levels[b]))

    @property
    def fixed_slice(self):
        return slice(0, self.n_fixed)

    @property
    def beta_slice(self):
        return slice(self.n_fixed, self.n_fixed + self.n_beta)

    @property
    def sigma_slice(self):
        return slice(self.n_fixed + self.n_beta, self.n_params)

    def batch_index(self, name):
        for b, batch in enumerate(self.batches):
            if batch.name == name:
                return b
        raise KeyError(name)

    def param_names(self, sigma_label="sigma"):
        names = [f"fixed[{t}]" for t in self.fixed_terms]
        for batch in self.batches:
            if not batch.factors:
                names.append(f"beta[{batch.name}][1]")
                continue
            grids = np.indices([FACTORS[f] for f in batch.factors]).reshape(len(batch.factors), -1).T + 1
            names.extend(f"beta[{batch.name}][{','.join(map(str, g))}]" for g in grids)
        names.extend(f"{sigma_label}[{b.name}]" for b in self.batches)
        return names

    def to_dict(self):
        return {
            "batches": [{"name": b.name, "factors": list(b.factors)} for b in self.batches],
            "fixed_terms": list(self.fixed_terms),
            "prior_scale_hyper": self.prior_scale_hyper,
            "predictor_center": self.predictor_center,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "interactions" in d:
            inter = tuple(tuple(p) for p in d.pop("interactions"))
            return cls.default(interactions=inter, **d)
        d["batches"] = tuple(Batch(b["name"], tuple(b["factors"])) for b in d["batches"])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class ParameterVector:
    """Constrained parameters: fixed terms, centred beta, sigma (>= 0)."""

    fixed: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.fixed = np.asarray(self.fixed, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(-1)

    @classmethod
    def zeros(cls, spec, sigma=1.0):
        return cls(np.zeros(spec.n_fixed), np.zeros(spec.n_beta), np.full(spec.n_batches, float(sigma)))

    @classmethod
    def from_unconstrained(cls, theta, spec):
        theta = np.asarray(theta, dtype=float)
        _check_length(theta, spec)
        return cls(theta[spec.fixed_slice], theta[spec.beta_slice], np.exp(theta[spec.sigma_slice]))

    @classmethod
    def from_constrained(cls, values, spec):
        values = np.asarray(values, dtype=float)
        _check_length(values, spec)
        return cls(values[spec.fixed_slice], values[spec.beta_slice], values[spec.sigma_slice])

    def check(self, spec):
        if (self.fixed.size, self.beta.size, self.sigma.size) != (spec.n_fixed, spec.n_beta, spec.n_batches):
            raise ContractError(
                f"parameter sizes {(self.fixed.size, self.beta.size, self.sigma.size)} do not match spec "
                f"{(spec.n_fixed, spec.n_beta, spec.n_batches)}"
            )

    def unconstrained(self):
        with np.errstate(divide="ignore"):
            return np.concatenate([self.fixed, self.beta, np.log(self.sigma)])

    def constrained(self):
        return np.concatenate([self.fixed, self.beta, self.sigma])

    def batch_values(self, spec, name):
        b = spec.batch_index(name)
        start = int(spec.offsets[b])
        return self.beta[start:start + int(spec.levels[b])]


def _check_length(theta, spec):
    if theta.shape != (spec.n_params,):
        raise ContractError(f"parameter vector has shape {theta.shape}, expected ({spec.n_params},)")


@dataclass(frozen=True, eq=False)
class DesignIndex:
    """Per-row level indices into every batch plus the fixed-term design.

    ``levels[:, b]`` is the zero-based level within batch ``b``;
    ``columns`` adds the batch offsets so it indexes the beta block directly.
    """

    levels: np.ndarray
    fixed_design: np.ndarray
    spec: ModelSpec = field(repr=False)

    @property
    def n_rows(self):
        return self.fixed_design.shape[0]

    @cached_property
    def columns(self):
        return self.levels + self.spec.offsets[None, :]

    @cached_property
    def design(self):
        """(Z, Z^T) as CSR, built once per index."""
        Z = linear_design(self)
        return Z, Z.T.tocsr()

    def linear_predictor(self, params: ParameterVector):
        params.check(self.spec)
        return self.fixed_design @ params.fixed + params.beta[self.columns].sum(axis=1)


def build_index(data, spec: ModelSpec, state_share=None) -> DesignIndex:
    """Index rows of a SurveyDataset, a CellTable, or any mapping of code arrays.

    Survey rows carry no state predictor, so ``state_share`` (one value per
    state) is required when the spec uses the state-predictor slope and
    ``data`` is not a CellTable.
    """
    if isinstance(data, (SurveyDataset, CellTable)):
        codes = {f: getattr(data, f) for f in FACTORS}
    else:
        codes = {f: np.asarray(data[f]) for f in FACTORS if f in data}
    n = len(next(iter(codes.values())))
    for f, arr in codes.items():
        arr = np.asarray(arr, dtype=np.int64)
        bad = np.flatnonzero((arr < 1) | (arr > FACTORS[f]))
        if bad.size:
            raise DesignIndexError(f"row {int(bad[0])}: {f} code {int(arr[bad[0]])} outside 1..{FACTORS[f]}")
        codes[f] = arr

    levels = np.zeros((n, spec.n_batches), dtype=np.int64)
    for b, batch in enumerate(spec.batches):
        missing = [f for f in batch.factors if f not in codes]
        if missing:
            raise DesignIndexError(f"batch {batch.name} needs factor(s) {missing}")
        levels[:, b] = batch.composite(codes) if batch.factors else 0

    fixed = np.zeros((n, spec.n_fixed))
    for t, term in enumerate(spec.fixed_terms):
        if term == "intercept":
            fixed[:, t] = 1.0
            continue
        if isinstance(data, CellTable):
            share = data.state_predictor
        elif not isinstance(data, SurveyDataset) and "state_predictor" in data:
            share = np.asarray(data["state_predictor"], dtype=float)
        else:
            if state_share is None:
                raise ContractError("state_share is required for the state-predictor slope")
            share = np.asarray(state_share, dtype=float)[codes["state"] - 1]
        fixed[:, t] = share - spec.predictor_center
    return DesignIndex(levels=levels, fixed_design=fixed, spec=spec)


_P_LO = np.finfo(float).tiny
_P_HI = np.nextafter(1.0, 0.0)


def inv_logit(x):
    """Logistic function, evaluated per sign so exp never overflows.

    Clamped to the open interval: in float64 1/(1+e^-x) rounds to 1 from x ~ 37.
    """
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    out = np.clip(np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)), _P_LO, _P_HI)
    return out if out.ndim else float(out)


def log1pexp(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True, eq=False)
class BinomialData:
    """Rows of a design index with success and trial counts.

    Collapsing Bernoulli responses that share a design row gives the same
    log likelihood exactly (no binomial coefficient for ordered data).
    """

    index: DesignIndex
    successes: np.ndarray
    trials: np.ndarray

    @classmethod
    def from_outcomes(cls, index, outcomes, trials=None):
        y = np.asarray(outcomes, dtype=float).reshape(-1)
        m = np.ones_like(y) if trials is None else np.asarray(trials, dtype=float).reshape(-1)
        if y.shape != (index.n_rows,) or m.shape != (index.n_rows,):
            raise ContractError(f"{y.size} outcomes for {index.n_rows} design rows")
        if trials is None and not np.isin(y, (0.0, 1.0)).all():
            raise ContractError("outcomes must be binary when trials are not given")
        if ((y < 0) | (y > m)).any():
            raise ContractError("successes must lie in [0, trials]")
        return cls(index, y, m)

    def collapse(self):
        """Merge rows with identical design (exact for the likelihood)."""
        idx = self.index
        if idx.n_rows == 0:
            return self
        key = np.column_stack([idx.levels, idx.fixed_design])
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        k = np.bincount(inverse, weights=self.successes, minlength=len(uniq))
        m = np.bincount(inverse, weights=self.trials, minlength=len(uniq))
        nb = idx.spec.n_batches
        new_index = DesignIndex(levels=uniq[:, :nb].astype(np.int64), fixed_design=uniq[:, nb:], spec=idx.spec)
        return BinomialData(new_index, k, m)


def empty_data(spec):
    index = DesignIndex(np.zeros((0, spec.n_batches), dtype=np.int64), np.zeros((0, spec.n_fixed)), spec)
    return BinomialData(index, np.zeros(0), np.zeros(0))


class Posterior:
    """Log posterior and gradient on the unconstrained scale.

    ``noncentered`` is a bool, one bool per batch, or one bool per
    coefficient. A centred coefficient is used directly (the documented
    density); a non-centred one is beta = sigma * z with z ~ N(0, 1). The
    sampler and the MAP optimiser work in non-centred (or mixed) coordinates.

    ``sweep=True`` samples the fixed terms shifted by the least-squares
    projection of each batch onto the fixed-design columns that are constant
    within its levels: fixed* = fixed + S beta. For the intercept that is
    the batch mean; for the state-predictor slope, the part of any
    state-indexed batch explained by the predictor. This removes the ridges
    between fixed terms and batch coefficients. The map has unit Jacobian.
    """

    def __init__(self, data: BinomialData, noncentered=False, sweep=False):
        self.data = data
        self.spec = spec = data.index.spec
        nc = np.asarray(noncentered, dtype=bool)
        if nc.ndim == 1 and nc.size == spec.n_beta and spec.n_beta != spec.n_batches:
            nc_coef = nc.copy()
        else:
            nc_coef = np.broadcast_to(nc, (spec.n_batches,))[spec.beta_batch].copy()
        self.nc_coef = nc_coef
        self.noncentered = bool(nc_coef.all()) if nc_coef.size else bool(noncentered)
        self.k = data.successes
        self.m = data.trials
        self.dim = spec.n_params
        self.nf = spec.n_fixed
        self.n_lin = spec.n_fixed + spec.n_beta
        self.nb = spec.n_batches
        self.n_beta = spec.n_beta
        self.beta_batch = spec.beta_batch
        self.centred_levels = np.bincount(spec.beta_batch, weights=~nc_coef, minlength=spec.n_batches)
        self.S = sweep_matrix(data.index) if sweep and spec.n_fixed and spec.n_beta else None
        self.sweep = self.S is not None
        if self.sweep:
            self.ST = np.ascontiguousarray(self.S.T)
        self.ncf = nc_coef.astype(float)
        self.cf = 1.0 - self.ncf
        self.offsets = spec.offsets.astype(np.intp)
        self.inv_hyper = 1.0 / spec.prior_scale_hyper
        self.hyper = spec.prior_scale_hyper
        # half-normal log normaliser: log 2 - log(2 pi)/2 - log s
        self.hn_const = spec.n_batches * (math.log(2.0) - HALF_LOG_2PI - math.log(self.hyper))
        self.Z, self.ZT = data.index.design

    def split(self, theta):
        s = self.spec
        return theta[s.fixed_slice], theta[s.beta_slice], theta[s.sigma_slice]

    def loglik_grad_eta(self, linear):
        """Log likelihood and residual k - m * p for the [fixed | beta] block."""
        eta = np.zeros(self.Z.shape[0])
        _csr_matvec(self.Z, linear, eta)
        z = np.exp(-np.abs(eta))
        ll = float(self.k @ eta - self.m @ (np.maximum(eta, 0.0) + np.log1p(z)))
        p = np.where(eta >= 0, 1.0, z) / (1.0 + z)
        return ll, self.k - self.m * p

    def logp(self, theta):
        return self.logp_grad(theta, need_grad=False)[0]

    def logp_grad(self, theta, need_grad=True):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            _check_length(theta, self.spec)
        nf, n_lin = self.nf, self.n_lin
        coef = theta[nf:n_lin]
        tau = theta[n_lin:]
        sigma = np.exp(tau)
        sig_c = sigma[self.beta_batch]
        # per coefficient: beta = scale * coef, coef ~ N(0, 1 / inv_var)
        scale = sig_c * self.ncf + self.cf
        inv_var = self.cf / (sig_c * sig_c) + self.ncf
        cw = coef * inv_var
        linear = np.empty(n_lin)
        np.multiply(coef, scale, out=linear[nf:])
        linear[:nf] = theta[:nf]
        if self.sweep:
            linear[:nf] -= self.S @ linear[nf:]

        ll, resid = self.loglik_grad_eta(linear)
        lp = ll - 0.5 * float(coef @ cw) - float(self.centred_levels @ tau) - HALF_LOG_2PI * self.n_beta \
            + self.hn_const + float(np.sum(tau - 0.5 * (sigma * self.inv_hyper) ** 2))
        if not need_grad:
            return lp, None

        g = np.empty_like(theta)
        score = np.zeros(n_lin)
        _csr_matvec(self.ZT, resid, score)
        g[:nf] = score[:nf]
        score = score[nf:]
        if self.sweep:
            score -= self.ST @ g[:nf]
        g[nf:n_lin] = scale * score - cw
        # non-centred: d/dtau of loglik; centred: prior term sum(beta^2)/sigma^2 - K
        per_coef = coef * (self.ncf * sig_c * score + self.cf * cw)
        if self.nb:
            g[n_lin:] = np.add.reduceat(per_coef, self.offsets) - self.centred_levels \
                - (sigma * self.inv_hyper) ** 2 + 1.0
        return lp, g

    def to_centered(self, theta):
        """Map points of this parametrisation (last axis) to the centred unconstrained layout."""
        out = np.array(theta, dtype=float)
        s = self.spec
        sig = np.exp(out[..., s.sigma_slice])[..., self.beta_batch]
        out[..., s.beta_slice] *= np.where(self.nc_coef, sig, 1.0)
        if self.sweep:
            out[..., s.fixed_slice] -= out[..., s.beta_slice] @ self.S.T
        return out

    def from_centered(self, theta):
        out = np.array(theta, dtype=float)
        s = self.spec
        if self.sweep:
            out[..., s.fixed_slice] += out[..., s.beta_slice] @ self.S.T
        sig = np.exp(out[..., s.sigma_slice])[..., self.beta_batch]
        out[..., s.beta_slice] /= np.where(self.nc_coef, sig, 1.0)
        return out


def sweep_matrix(index: DesignIndex) -> np.ndarray:
    """S (n_fixed x n_beta): per batch, pinv of the level-constant fixed design.

    Only levels present in ``index`` enter; a fixed column that varies
    within some level of a batch is left out for that batch.
    """
    spec = index.spec
    S = np.zeros((spec.n_fixed, spec.n_beta))
    X = index.fixed_design
    for b in range(spec.n_batches):
        lev = index.levels[:, b]
        K = spec.levels[b]
        seen = np.unique(lev)
        lo = np.full((K, spec.n_fixed), np.inf)
        hi = np.full((K, spec.n_fixed), -np.inf)
        np.minimum.at(lo, lev, X)
        np.maximum.at(hi, lev, X)
        usable = [t for t in range(spec.n_fixed) if np.all(hi[seen, t] - lo[seen, t] <= 1e-12)]
        if not usable or seen.size <= len(usable):
            continue
        Xb = lo[np.ix_(seen, usable)]
        S[np.ix_(usable, spec.offsets[b] + seen)] = np.linalg.pinv(Xb)
    return S


def _csr_matvec(A, x, out):
    """out += A @ x without scipy's dispatch overhead (hot path of the sampler)."""
    _sparsetools.csr_matvec(A.shape[0], A.shape[1], A.indptr, A.indices, A.data, x, out)


def linear_design(index: DesignIndex):
    """Sparse [fixed design | one-hot batch indicators] matrix."""
    spec = index.spec
    n, nb = index.n_rows, spec.n_batches
    rows = np.repeat(np.arange(n), nb)
    onehot = sparse.csr_matrix(
        (np.ones(n * nb), (rows, index.columns.ravel())), shape=(n, spec.n_beta)
    )
    return sparse.hstack([sparse.csr_matrix(index.fixed_design), onehot], format="csr")


def _as_theta(params, spec):
    if isinstance(params, ParameterVector):
        params.check(spec)
        return params.unconstrained()
    theta = np.asarray(params, dtype=float)
    _check_length(theta, spec)
    return theta


def log_posterior(params, index: DesignIndex, outcomes, spec: ModelSpec, trials=None):
    """Log posterior (centred parametrisation, log-sigma Jacobian included).

    ``params`` is a ParameterVector or the flat unconstrained vector.
    ``outcomes`` are 0/1 responses, or success counts when ``trials`` is given.
    """
    if index.spec != spec:
        raise ContractError("design index was built for a different spec")
    data = BinomialData.from_outcomes(index, outcomes, trials)
    return Posterior(data).logp(_as_theta(params, spec))


def grad_log_posterior(params, index: DesignIndex, outcomes, spec: ModelSpec, trials=None):
    if index.spec != spec:
        raise ContractError("design index was built for a different spec")
    data = BinomialData.from_outcomes(index, outcomes, trials)
    return Posterior(data).logp_grad(_as_theta(params, spec))[1]


def survey_data(dataset: SurveyDataset, spec: ModelSpec, state_share=None) -> BinomialData:
    """Collapsed binomial data for a survey (state_share: one value per state)."""
    index = build_index(dataset, spec, state_share=state_share)
    return BinomialData.from_outcomes(index, dataset.vote).collapse()
