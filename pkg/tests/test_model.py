"""Model layout, density and gradient against naive and closed-form oracles."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mrp.data import FACTORS, N_CELLS
from mrp.model import (Batch, BinomialData, ContractError, DesignIndexError, ModelSpec, ParameterVector, Posterior,
                       build_index, grad_log_posterior, inv_logit, log_posterior)
from mrp.states import N_STATES

from oracles import dense_design

MAIN = ("income", "age", "ethnicity", "state")
PAIRS = [("income", "state"), ("ethnicity", "income"), ("ethnicity", "state"), ("age", "income"),
         ("age", "ethnicity"), ("age", "state")]


def random_codes(rng, n):
    return {f: rng.integers(1, k + 1, size=n) for f, k in FACTORS.items()}


def naive_log_posterior(params, X, y, spec):
    """Sum of terms written out one by one."""
    coef = np.concatenate([params.fixed, params.beta])
    total = 0.0
    for i in range(len(y)):
        eta = sum(X[i, j] * coef[j] for j in range(len(coef)))
        p = 1.0 / (1.0 + math.exp(-eta))
        total += y[i] * math.log(p) + (1 - y[i]) * math.log(1.0 - p)
    for k, b in enumerate(spec.beta_batch):
        total += stats.norm.logpdf(params.beta[k], 0.0, params.sigma[b])
    for s in params.sigma:
        total += stats.halfnorm.logpdf(s, scale=spec.prior_scale_hyper) + math.log(s)
    return total


def small_spec():
    return ModelSpec(batches=(Batch("income", ("income",)), Batch("ethnicity:income", ("ethnicity", "income"))))


def random_params(rng, spec, scale=1.0):
    return ParameterVector(rng.normal(0, scale, spec.n_fixed), rng.normal(0, scale, spec.n_beta),
                           np.exp(rng.normal(0, 0.5, spec.n_batches)))


def empty_index(spec):
    codes = {f: np.zeros(0, dtype=int) for f in FACTORS}
    codes["state_predictor"] = np.zeros(0)
    return build_index(codes, spec)


# build_index

def test_first_levels_index_zero():
    spec = ModelSpec.main_effects(fixed_terms=("intercept",))
    idx = build_index({"income": [1], "age": [1], "ethnicity": [1], "state": [1]}, spec)
    assert idx.levels.tolist() == [[0, 0, 0, 0]]


def test_cell_table_gives_4080_rows(table, spec):
    assert build_index(table, spec).n_rows == N_CELLS == 4080


def test_ethnicity_income_composite_matches_one_hot(rng):
    spec = ModelSpec(batches=(Batch("ethnicity:income", ("ethnicity", "income")),), fixed_terms=())
    codes = random_codes(rng, 20)
    idx = build_index(codes, spec)
    expected = (codes["ethnicity"] - 1) * 5 + (codes["income"] - 1)
    assert np.array_equal(idx.levels[:, 0], expected)
    params = ParameterVector(np.zeros(0), rng.normal(size=20), np.ones(1))
    X = dense_design(codes, None, spec)
    assert np.array_equal(idx.linear_predictor(params), X @ params.beta)


def test_out_of_range_category_names_row():
    spec = ModelSpec.main_effects(fixed_terms=("intercept",))
    with pytest.raises(DesignIndexError, match="row 2: age code 5"):
        build_index({"income": [1, 2, 3], "age": [1, 2, 5], "ethnicity": [1, 1, 1], "state": [1, 2, 3]}, spec)


def test_state_share_required_for_survey_rows(sim2000, spec):
    data = sim2000[0]
    with pytest.raises(ContractError):
        build_index(data, spec)


@st.composite
def spec_and_data(draw):
    pairs = draw(st.lists(st.sampled_from(PAIRS), unique=True, max_size=4))
    mains = draw(st.lists(st.sampled_from(MAIN), unique=True, min_size=1))
    fixed = draw(st.sampled_from([(), ("intercept",), ("intercept", "state_predictor")]))
    spec = ModelSpec(batches=tuple(Batch(f, (f,)) for f in mains) + tuple(Batch(":".join(p), p) for p in pairs),
                     fixed_terms=fixed)
    n = draw(st.integers(1, 50))
    seed = draw(st.integers(0, 2**32 - 1))
    return spec, n, seed


@given(spec_and_data())
def test_index_equals_dense_product(args):
    spec, n, seed = args
    rng = np.random.default_rng(seed)
    codes = random_codes(rng, n)
    share = rng.uniform(0.2, 0.8, N_STATES)
    idx = build_index(codes, spec, state_share=share)
    params = random_params(rng, spec, scale=2.0)
    X = dense_design(codes, share, spec)
    assert np.allclose(idx.linear_predictor(params), X @ np.concatenate([params.fixed, params.beta]),
                       rtol=0, atol=1e-12)


# inv_logit

def test_inv_logit_fixed_points():
    assert inv_logit(0.0) == 0.5
    hi, lo = inv_logit(40.0), inv_logit(-40.0)
    assert 0.0 < lo < 1e-17 and 1.0 - 1e-15 < hi < 1.0
    assert np.isfinite(inv_logit(np.array([-1e308, 1e308]))).all()


@given(st.floats(-700, 700))
def test_inv_logit_symmetry(x):
    assert abs(inv_logit(x) + inv_logit(-x) - 1.0) <= 1e-15
    assert 0.0 < inv_logit(x) < 1.0


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_inv_logit_monotone(a, b):
    lo, hi = sorted((a, b))
    assert inv_logit(lo) <= inv_logit(hi)


# log posterior

def test_prior_only_value(spec):
    params = ParameterVector.zeros(spec, sigma=1.0)
    value = log_posterior(params, empty_index(spec), np.zeros(0), spec)
    expected = spec.n_beta * stats.norm.logpdf(0.0) + spec.n_batches * stats.halfnorm.logpdf(1.0)
    assert value == pytest.approx(expected, rel=1e-13)


def test_zero_coefficients_give_half(sim2000, spec, table):
    data = sim2000[0]
    idx = build_index(data, spec, state_share=table.state_share)
    params = ParameterVector.zeros(spec, sigma=1.0)
    prior = log_posterior(params, empty_index(spec), np.zeros(0), spec)
    assert log_posterior(params, idx, data.vote, spec) - prior == pytest.approx(data.n * math.log(0.5), rel=1e-12)


def test_small_instance_matches_naive(rng):
    spec = small_spec()
    for _ in range(5):
        codes = random_codes(rng, 8)
        share = rng.uniform(0.2, 0.8, N_STATES)
        y = rng.integers(0, 2, 8)
        params = random_params(rng, spec)
        idx = build_index(codes, spec, state_share=share)
        naive = naive_log_posterior(params, dense_design(codes, share, spec), y, spec)
        assert log_posterior(params, idx, y, spec) == pytest.approx(naive, rel=1e-12)


def test_dimension_mismatch(spec):
    with pytest.raises(ContractError):
        log_posterior(np.zeros(spec.n_params - 1), empty_index(spec), np.zeros(0), spec)
    with pytest.raises(ContractError):
        log_posterior(ParameterVector.zeros(spec), empty_index(spec), np.zeros(3), spec)


def test_collapsed_rows_same_density(sim2000, spec, table, rng):
    data, _, binom = sim2000
    idx = build_index(data, spec, state_share=table.state_share)
    theta = random_params(rng, spec, 0.3).unconstrained()
    full = Posterior(BinomialData.from_outcomes(idx, data.vote)).logp(theta)
    assert Posterior(binom).logp(theta) == pytest.approx(full, rel=1e-12)


# gradient

def central_difference(f, x, h=1e-5):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_gradient_finite_differences(rng):
    spec = small_spec()
    codes = random_codes(rng, 8)
    share = rng.uniform(0.2, 0.8, N_STATES)
    y = rng.integers(0, 2, 8)
    idx = build_index(codes, spec, state_share=share)
    for _ in range(20):
        theta = random_params(rng, spec).unconstrained()
        g = grad_log_posterior(theta, idx, y, spec)
        fd = central_difference(lambda t: log_posterior(t, idx, y, spec), theta)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_prior_gradient_closed_form(spec, rng):
    params = random_params(rng, spec)
    g = grad_log_posterior(params, empty_index(spec), np.zeros(0), spec)
    sig = params.sigma[spec.beta_batch]
    assert np.all(g[spec.fixed_slice] == 0.0)
    np.testing.assert_allclose(g[spec.beta_slice], -params.beta / sig**2, rtol=1e-12)
    sq = np.bincount(spec.beta_batch, weights=params.beta**2) / params.sigma**2
    expected = sq - spec.levels - params.sigma**2 / spec.prior_scale_hyper**2 + 1.0
    np.testing.assert_allclose(g[spec.sigma_slice], expected, rtol=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["all", "none", "mixed"]), st.booleans())
def test_internal_coordinates_gradient_and_density(seed, mode, sweep):
    """Every sampler parametrisation: exact gradient, and the same target up to the Jacobian."""
    rng = np.random.default_rng(seed)
    spec = ModelSpec(batches=(Batch("income", ("income",)), Batch("state", ("state",))))
    codes = random_codes(rng, 30)
    share = rng.uniform(0.2, 0.8, N_STATES)
    data = BinomialData.from_outcomes(build_index(codes, spec, state_share=share), rng.integers(0, 2, 30))
    nc = {"all": True, "none": False, "mixed": rng.random(spec.n_beta) < 0.5}[mode]
    post = Posterior(data, noncentered=nc, sweep=sweep)
    plain = Posterior(data)
    theta = rng.normal(0, 0.7, spec.n_params)
    lp, g = post.logp_grad(theta)
    fd = central_difference(post.logp, theta)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)
    centred = post.to_centered(theta)
    np.testing.assert_allclose(post.from_centered(centred), theta, atol=1e-12)
    log_jac = float(np.sum(theta[spec.sigma_slice][spec.beta_batch] * post.nc_coef))
    assert plain.logp(centred) == pytest.approx(lp - log_jac, rel=1e-12, abs=1e-10)


def test_batch_exchangeability(rng, table):
    spec = ModelSpec.default()
    n = 200
    codes = random_codes(rng, n)
    share = table.state_share
    y = rng.integers(0, 2, n)
    params = random_params(rng, spec, 0.5)
    before = log_posterior(params, build_index(codes, spec, state_share=share), y, spec)
    for factor in FACTORS:
        perm = rng.permutation(FACTORS[factor]) + 1  # new code of old code c is perm[c-1]
        new_codes = dict(codes)
        new_codes[factor] = perm[codes[factor] - 1]
        new_share = share.copy()
        if factor == "state":
            new_share[perm - 1] = share
        beta = params.beta.copy()
        for b, batch in enumerate(spec.batches):
            if factor not in batch.factors:
                continue
            grid = np.indices([FACTORS[f] for f in batch.factors]).reshape(len(batch.factors), -1) + 1
            old = {f: grid[i] for i, f in enumerate(batch.factors)}
            new = dict(old)
            new[factor] = perm[old[factor] - 1]
            off = spec.offsets[b]
            beta[off + batch.composite(new)] = params.beta[off + batch.composite(old)]
        moved = ParameterVector(params.fixed, beta, params.sigma)
        after = log_posterior(moved, build_index(new_codes, spec, state_share=new_share), y, spec)
        assert after == pytest.approx(before, rel=1e-12), factor


def test_spec_json_roundtrip(spec):
    again = ModelSpec.from_json(spec.to_json())
    assert again == spec
    assert spec.n_params == 2 + (5 + 4 + 4 + 51 + 255 + 20 + 204) + 7
    assert ModelSpec.from_dict({"interactions": [["income", "state"]]}).interaction_set == (("income", "state"),)


def test_spec_invariants():
    with pytest.raises(ValueError):
        ModelSpec(batches=(Batch("a", ("income",)), Batch("a", ("age",))))
    with pytest.raises(ValueError):
        ModelSpec(batches=(), fixed_terms=())
    with pytest.raises(ValueError):
        Batch("x", ("religion",))
    with pytest.raises(ValueError):
        ModelSpec.default(prior_scale_hyper=0.0)
