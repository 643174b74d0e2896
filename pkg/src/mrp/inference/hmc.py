"""Full-Bayes fitting: NUTS on the unconstrained posterior."""

import numpy as np

from ..model import BinomialData, Posterior, inv_logit, linear_design
from .diagnostics import summarize_draws
from .nuts import sample_nuts
from .results import DIVERGENCE_WARN_RATE, FULL_BAYES, RHAT_THRESHOLD, FitResult, SamplerConfig


def _constrained_draws(positions, post: Posterior):
    """Map sampler positions to (fixed, centred beta, sigma)."""
    out = post.to_centered(positions)
    sl = post.spec.sigma_slice
    out[..., sl] = np.exp(out[..., sl])
    return out


def auto_parametrization(data: BinomialData, tolerance=1e-3):
    """Per-coefficient centring choice from a marginal-likelihood pilot.

    A coefficient is centred when its data information, times the batch
    variance, exceeds one: the likelihood then dominates its prior and the
    centred geometry is the easier one. The variance used is a low
    plausible value, sigma_hat * exp(-2 / sqrt(2 K)) with K the batch's
    observed levels, because a batch with few levels has a poorly
    determined sigma and its posterior reaches into the funnel near zero.
    Weakly informed coefficients (and batches with pilot sigma 0) stay
    non-centred.
    """
    from .optimize import fit_mmle

    pilot = fit_mmle(data, tolerance=tolerance).point
    spec = data.index.spec
    Z = linear_design(data.index)
    p = inv_logit(Z @ np.concatenate([pilot.fixed, pilot.beta]))
    info = Z[:, spec.n_fixed:].T @ (data.trials * p * (1.0 - p))
    observed = np.bincount(spec.beta_batch, weights=info > 0, minlength=spec.n_batches)
    sigma_low = pilot.sigma * np.exp(-2.0 / np.sqrt(2.0 * np.maximum(observed, 1)))
    return info * sigma_low[spec.beta_batch] ** 2 <= 1.0


def _run(post, config, target_accept):
    positions, stats, elapsed = sample_nuts(
        post.logp_grad, post.dim, config.chains, config.warmup, config.samples, config.seed,
        target_accept=target_accept, max_tree_depth=config.max_tree_depth,
        init_radius=config.init_radius,
    )
    return positions, stats, elapsed


def fit_hmc(data: BinomialData, config: SamplerConfig = SamplerConfig(), noncentered=None,
            compute_diagnostics=True) -> FitResult:
    """Full-Bayes fit by multi-chain NUTS.

    Sampling happens in non-centred or mixed coordinates chosen by
    ``config.parametrization`` (``noncentered`` overrides it with an explicit
    bool / per-batch / per-coefficient mask). Returned draws are always
    (fixed, centred beta, sigma). If more than 1% of transitions diverge the
    run is repeated once at ``config.retry_accept``.
    """
    if config.chains < 2:
        raise ValueError("full-Bayes fits need at least 2 chains (split R-hat across chains)")
    spec = data.index.spec
    data = data.collapse()
    if noncentered is None:
        if config.parametrization == "auto":
            noncentered = auto_parametrization(data)
        else:
            noncentered = config.parametrization == "noncentered"
    post = Posterior(data, noncentered=noncentered, sweep=config.sweep)
    warnings = []
    target = config.target_accept
    positions, stats, elapsed = _run(post, config, target)
    n_trans = config.chains * config.samples
    div = sum(s["divergences"] for s in stats)
    if div / n_trans > DIVERGENCE_WARN_RATE and target < config.retry_accept:
        warnings.append(
            f"{div} divergent transitions ({div / n_trans:.1%}); rerun with target_accept={config.retry_accept}"
        )
        target = config.retry_accept
        positions, stats, more = _run(post, config, target)
        elapsed += more
        div = sum(s["divergences"] for s in stats)
    if div / n_trans > DIVERGENCE_WARN_RATE:
        warnings.append(f"divergence rate {div / n_trans:.1%} exceeds {DIVERGENCE_WARN_RATE:.0%}")

    draws = _constrained_draws(positions, post)
    diagnostics = {}
    converged = True
    if compute_diagnostics:
        rows = summarize_draws(draws, spec.param_names())
        diagnostics = {r["name"]: r for r in rows}
        bad = [r["name"] for r in rows if not r["rhat"] <= RHAT_THRESHOLD]  # NaN: constant draws
        if bad:
            converged = False
            warnings.append(f"R-hat > {RHAT_THRESHOLD} for {len(bad)} parameter(s), e.g. {bad[:3]}")
    info = {
        "target_accept": target,
        "warmup": config.warmup,
        "samples": config.samples,
        "divergences": int(div),
        "step_size": [float(s["step_size"]) for s in stats],
        "mean_tree_depth": [s["mean_tree_depth"] for s in stats],
        "max_tree_depth_hits": [s["max_tree_depth_hits"] for s in stats],
        "mean_accept_stat": [s["mean_accept_stat"] for s in stats],
        "centred_coefficients": int((~post.nc_coef).sum()),
    }
    return FitResult(
        kind=FULL_BAYES, spec=spec, draws=draws, diagnostics=diagnostics, seed=config.seed,
        chains=config.chains, elapsed=elapsed, converged=converged, warnings=warnings, info=info,
    )
