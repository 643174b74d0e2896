"""Seeded simulation studies: duplication, boundary, smoothness and calibration.

Each study returns a plain dict (JSON-ready) with per-seed records in seed
order. ``workers > 1`` spreads seeds over processes; results do not depend
on it.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from ..inference.hmc import fit_hmc
from ..inference.optimize import fit_mmle
from ..inference.results import SamplerConfig
from ..model import ModelSpec, survey_data
from ..poststrat import SubsetQuery, estimate_series, poststratify, predict_cells
from .compare import compare_runs, smoothness_diagnostic
from .simulate import PRESETS, SyntheticConfig, simulate_survey, synthetic_cell_table

PEW_N = PRESETS["pew2008-scale"]
ANNENBERG_N = PRESETS["annenberg2004-scale"]


def _map_seeds(fn, seeds, workers):
    seeds = list(seeds)
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, seeds))


def _simulate(n, seed, table, spec, **kw):
    data, truth = simulate_survey(SyntheticConfig(n=n, seed=seed, truth_seed=kw.pop("truth_seed", seed), **kw),
                                  table, spec)
    return data, truth, survey_data(data, spec, table.state_share)


def duplication_study(seed=0, n=PEW_N, sampler=None, table_seed=0):
    """MMLE vs full-Bayes posterior-mean poststratified state x income estimates."""
    table, spec = synthetic_cell_table(table_seed), ModelSpec.default()
    sampler = sampler or SamplerConfig(chains=4, warmup=1000, samples=1000, seed=seed)
    data, _, binom = _simulate(n, seed, table, spec)
    t0 = time.perf_counter()
    mmle = fit_mmle(binom, seed=seed)
    t1 = time.perf_counter()
    hmc = fit_hmc(binom, sampler)
    t2 = time.perf_counter()
    report = compare_runs(estimate_series(mmle, table, data), estimate_series(hmc, table, data),
                          weights=table.state_totals)
    return {
        "n": n, "seed": seed, "sampler": asdict(sampler),
        "mean_abs_diff": report.mean_abs_diff, "max_abs_diff": report.max_abs_diff,
        "mean_diff": report.mean_diff, "sign_agreement": report.sign_agreement,
        "mmle_converged": mmle.converged, "hmc_converged": hmc.converged, "hmc_warnings": hmc.warnings,
        "mmle_sigma": mmle.point.sigma.tolist(),
        "hmc_sigma_mean": hmc.posterior_mean().sigma.tolist(),
        "seconds": {"mmle": t1 - t0, "hmc": t2 - t1},
    }


class _BoundaryTask:
    def __init__(self, n, batch, sampler, table_seed):
        self.n, self.batch, self.sampler, self.table_seed = n, batch, sampler, table_seed

    def __call__(self, seed):
        table, spec = synthetic_cell_table(self.table_seed), ModelSpec.default()
        _, _, binom = _simulate(self.n, seed, table, spec, true_sigma={self.batch: 0.0})
        b = spec.batch_index(self.batch)
        mmle = fit_mmle(binom, seed=seed)
        hmc = fit_hmc(binom, replace(self.sampler, seed=seed))
        s_mmle = float(mmle.point.sigma[b])
        s_hmc = float(hmc.flat_draws[:, spec.sigma_slice][:, b].mean())
        return {"seed": seed, "mmle_sigma": s_mmle, "hmc_sigma_mean": s_hmc,
                "mmle_zero": s_mmle == 0.0, "hmc_small": 0.0 < s_hmc < 0.2,
                "success": s_mmle == 0.0 and 0.0 < s_hmc < 0.2,
                "hmc_converged": hmc.converged, "pinned": mmle.info["pinned"]}


def boundary_study(seeds=range(20), n=PEW_N, batch="age", sampler=None, table_seed=0, workers=1):
    """Zero-variance batch: MMLE sigma exactly 0 and full-Bayes mean sigma in (0, 0.2)."""
    sampler = sampler or SamplerConfig(chains=4, warmup=300, samples=300)
    rows = _map_seeds(_BoundaryTask(n, batch, sampler, table_seed), seeds, workers)
    return {"n": n, "batch": batch, "sampler": asdict(sampler), "seeds": rows,
            "mmle_zero": sum(r["mmle_zero"] for r in rows), "hmc_small": sum(r["hmc_small"] for r in rows),
            "successes": sum(r["success"] for r in rows), "total": len(rows)}


def pooled_jumpiness(series, weights):
    """Population-weighted mean squared second difference, averaged over slices."""
    rep = smoothness_diagnostic(series, weights)
    return float(np.mean(list(rep.pooled.values()))), rep.pooled


class _SmoothnessTask:
    def __init__(self, n_small, n_large, bias_scale, table_seed):
        self.n_small, self.n_large, self.bias_scale, self.table_seed = n_small, n_large, bias_scale, table_seed

    def __call__(self, seed):
        table, spec = synthetic_cell_table(self.table_seed), ModelSpec.default()
        out = {"seed": seed}
        # the three surveys share the truth of this replication
        for name, n, bias in (("small", self.n_small, 0.0), ("large", self.n_large, 0.0),
                              ("small_bias", self.n_small, self.bias_scale)):
            data, _, binom = _simulate(n, seed, table, spec, bias_scale=bias)
            fit = fit_mmle(binom, seed=seed)
            value, per_slice = pooled_jumpiness(estimate_series(fit, table), table.state_totals)
            out[name] = value
            out[name + "_slices"] = per_slice
            out[name + "_converged"] = fit.converged
        return out


def smoothness_study(seeds=range(50), n_small=PEW_N, n_large=ANNENBERG_N, bias_scale=0.3, table_seed=0,
                     workers=1):
    """Pooled jumpiness of MMLE-fitted curves at two sample sizes, and with per-cell bias."""
    rows = _map_seeds(_SmoothnessTask(n_small, n_large, bias_scale, table_seed), seeds, workers)
    small = np.array([r["small"] for r in rows])
    large = np.array([r["large"] for r in rows])
    biased = np.array([r["small_bias"] for r in rows])
    return {"n_small": n_small, "n_large": n_large, "bias_scale": bias_scale, "seeds": rows,
            "large_le_small": int(np.sum(large <= small)), "total": len(rows),
            "median_small": float(np.median(small)), "median_large": float(np.median(large)),
            "median_small_bias": float(np.median(biased))}


class _CalibrationTask:
    def __init__(self, n, sampler, table_seed, level):
        self.n, self.sampler, self.table_seed, self.level = n, sampler, table_seed, level

    def __call__(self, seed):
        table, spec = synthetic_cell_table(self.table_seed), ModelSpec.default()
        _, truth, binom = _simulate(self.n, seed, table, spec)
        fit = fit_hmc(binom, replace(self.sampler, seed=seed))
        draws = poststratify(predict_cells(fit, table), table, SubsetQuery()).draws
        tail = (1.0 - self.level) / 2.0
        lo, hi = np.quantile(draws, [tail, 1.0 - tail])
        return {"seed": seed, "truth": truth.population_value, "lo": float(lo), "hi": float(hi),
                "covered": bool(lo <= truth.population_value <= hi), "converged": fit.converged}


def calibration_study(seeds=range(200), n=2000, sampler=None, table_seed=0, level=0.95, workers=1):
    """Coverage of central posterior intervals for the all-population estimate."""
    sampler = sampler or SamplerConfig(chains=4, warmup=300, samples=250)
    rows = _map_seeds(_CalibrationTask(n, sampler, table_seed, level), seeds, workers)
    covered = sum(r["covered"] for r in rows)
    return {"n": n, "level": level, "sampler": asdict(sampler), "seeds": rows, "covered": covered,
            "total": len(rows), "coverage": covered / len(rows),
            "unconverged": sum(not r["converged"] for r in rows)}
