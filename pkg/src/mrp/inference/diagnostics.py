"""Convergence diagnostics for multi-chain draws.

All functions take an array shaped (chains, draws) for one parameter.
R-hat is the rank-normalised split version (max of bulk and folded-tail);
ESS uses Geyer's initial monotone sequence on FFT autocovariances.
"""

import numpy as np
from scipy import stats


def split_chains(x):
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def z_scale(x):
    """Rank-normalise pooled draws to standard normal scores (ties averaged)."""
    x = np.asarray(x, dtype=float)
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    n = x.shape[1]
    chain_mean = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = n * chain_mean.var(ddof=1)
    if within == 0:
        return np.nan if between == 0 else np.inf
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def rhat(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise ValueError("rhat needs an array of shape (chains, draws >= 4)")
    if np.ptp(x) == 0:
        return np.nan
    bulk = _rhat_basic(z_scale(split_chains(x)))
    folded = np.abs(x - np.median(x))
    tail = _rhat_basic(z_scale(split_chains(folded)))
    return float(max(bulk, tail))


def _autocov(x):
    n = x.shape[-1]
    centred = x - x.mean(axis=-1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, n=nfft, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=-1)[..., :n]
    return acov / n


def ess(x):
    """Effective sample size of the mean for (chains, draws) input."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    if n < 4 or np.ptp(x) == 0:
        return np.nan
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return np.nan
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer: sum pairs while positive, enforce monotone pair sums
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    positive = np.flatnonzero(pairs <= 0)
    k = positive[0] if positive.size else pairs.size
    pairs = np.minimum.accumulate(pairs[:k])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(x):
    return ess(z_scale(split_chains(x)))


def ess_tail(x, probs=(0.05, 0.95)):
    x = np.asarray(x, dtype=float)
    out = []
    for p in probs:
        q = np.quantile(x, p)
        out.append(ess(split_chains((x <= q).astype(float))))
    return float(np.nanmin(out)) if not np.all(np.isnan(out)) else np.nan


def mcse_mean(x):
    x = np.asarray(x, dtype=float)
    e = ess(split_chains(x))
    return float(x.std(ddof=1) / np.sqrt(e)) if e == e else np.nan


def mcse_sd(x):
    """MCSE of the posterior sd via the delta method on the second moment."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    if sd == 0:
        return np.nan
    centred2 = (x - x.mean()) ** 2
    e = ess(split_chains(centred2))
    if e != e:
        return np.nan
    var_of_var = centred2.var(ddof=1)
    return float(np.sqrt(var_of_var / e) / (2 * sd))


def summarize_draws(draws, names, probs=(0.025, 0.25, 0.5, 0.75, 0.975)):
    """Per-parameter summary rows for draws shaped (chains, draws, params)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3 or draws.shape[2] != len(names):
        raise ValueError("draws must be (chains, draws, params) matching names")
    rows = []
    flat = draws.reshape(-1, draws.shape[2])
    qs = np.quantile(flat, probs, axis=0)
    for j, name in enumerate(names):
        x = draws[:, :, j]
        row = {
            "name": name,
            "mean": float(flat[:, j].mean()),
            "sd": float(flat[:, j].std(ddof=1)),
        }
        for p, q in zip(probs, qs[:, j]):
            row[f"q{p * 100:g}"] = float(q)
        row.update(
            rhat=rhat(x),
            ess_bulk=ess_bulk(x),
            ess_tail=ess_tail(x),
            mcse_mean=mcse_mean(x),
            mcse_sd=mcse_sd(x),
        )
        rows.append(row)
    return rows
