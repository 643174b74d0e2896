"""Point estimation: posterior mode (MAP) and Laplace marginal maximum likelihood.

MAP is computed in non-centred coordinates (beta = sigma * z), where the
mode of the hierarchical posterior exists; in centred coordinates the
joint density is unbounded as sigma -> 0 with beta = 0.

MMLE integrates beta out with a Laplace approximation around the
conditional mode (inner Newton iterations in non-centred coordinates),
then maximises over the fixed terms and log sigma with bounded L-BFGS.
A batch is pinned to sigma = 0 whenever the objective with that batch
removed is at least as high as the best interior value, or when the
optimiser drives its sigma onto the lower bound (the supremum is then
the boundary itself; the two values differ by O(floor^2)).
"""

from __future__ import annotations

import time

import numpy as np
from scipy import linalg, optimize, sparse

from ..model import BinomialData, ParameterVector, Posterior, inv_logit, linear_design
from .results import MAP, MMLE, FitResult

LOG_SIGMA_BOUNDS = (np.log(1e-5), np.log(50.0))
SIGMA_FLOOR = 2e-5  # at or below this an MMLE sigma is treated as on the boundary


class OptimizationError(RuntimeError):
    def __init__(self, message, trace=None):
        self.trace = trace or []
        super().__init__(message)


def _minimize(fun, x0, tol, max_iter, bounds=None, restarts=3):
    """L-BFGS with restarts from the best finite point seen so far."""
    best = {"x": np.array(x0, float), "f": np.inf}
    trace = []

    def wrapped(x):
        f, g = fun(x)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(x)
        if f < best["f"]:
            best["x"], best["f"] = x.copy(), f
        return f, g

    x = np.array(x0, float)
    res = None
    for attempt in range(restarts + 1):
        res = optimize.minimize(
            wrapped, x, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0, "maxcor": 20},
        )
        trace.append(f"attempt {attempt}: {res.message} (nit={res.nit}, f={res.fun})")
        if np.isfinite(best["f"]):
            x = best["x"]
        if res.success or res.nit >= max_iter:
            break
        if not np.isfinite(best["f"]):
            raise OptimizationError("objective is not finite at any evaluated point", trace)
    return best["x"], res, trace


def _projected_norm(x, g, bounds):
    """Max-abs projected gradient, the quantity L-BFGS-B's pgtol bounds."""
    g = np.array(g, dtype=float)
    if bounds is not None:
        for j, (lo, hi) in enumerate(bounds):
            if lo is not None and x[j] <= lo and g[j] > 0:
                g[j] = 0.0
            if hi is not None and x[j] >= hi and g[j] < 0:
                g[j] = 0.0
    return float(np.abs(g).max()) if g.size else 0.0


def fit_map(data: BinomialData, tolerance=1e-5, max_iter=2000, seed=0, jitter=0.1) -> FitResult:
    """Posterior mode by quasi-Newton ascent from a seed-jittered start.

    ``info['grad_norm']`` is measured in the optimiser's (non-centred)
    coordinates; ``converged`` is False when it exceeds ``tolerance``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    t0 = time.perf_counter()
    spec = data.index.spec
    post = Posterior(data.collapse(), noncentered=True)
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-jitter, jitter, size=post.dim)

    def negative(x):
        lp, g = post.logp_grad(x)
        return -lp, -g

    x, res, trace = _minimize(negative, x0, tolerance, max_iter)
    # polish: quasi-Newton stalls near 1e-6 relative on large data sets
    x, gnorm = _newton_polish(post, x, tolerance)
    converged = gnorm <= tolerance
    theta = post.to_centered(x)
    point = ParameterVector.from_unconstrained(theta, spec)
    warnings = [] if converged else [f"gradient norm {gnorm:.3g} above tolerance {tolerance:g}"]
    return FitResult(
        kind=MAP, spec=spec, point=point, seed=seed, elapsed=time.perf_counter() - t0,
        converged=converged, warnings=warnings,
        info={"grad_norm": gnorm, "iterations": int(res.nit), "log_posterior": float(post.logp(x)),
              "trace": trace, "coordinates": "noncentered"},
    )


def _numeric_hessian(post, x, h=1e-5):
    d = x.size
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (post.logp_grad(x + e)[1] - post.logp_grad(x - e)[1]) / (2 * h)
    return 0.5 * (H + H.T)


def _newton_polish(post, x, tolerance, steps=5):
    lp, g = post.logp_grad(x)
    gnorm = float(np.linalg.norm(g))
    if gnorm <= tolerance or post.dim > 2000:
        return x, gnorm
    for _ in range(steps):
        H = _numeric_hessian(post, x)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-4:
            lp_new, g_new = post.logp_grad(x + t * step)
            if np.isfinite(lp_new) and lp_new >= lp - 1e-10 * abs(lp):
                break
            t *= 0.5
        else:
            break
        if np.linalg.norm(g_new) >= gnorm and lp_new <= lp:
            break
        x, lp, g = x + t * step, lp_new, g_new
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tolerance:
            break
    return x, gnorm


class LaplaceMarginal:
    """Laplace approximation to log p(y | fixed, sigma) with beta integrated out.

    With beta = sigma * u, u ~ N(0, I):
        F = max_u [loglik(fixed, sigma * u) - |u|^2 / 2] - log det(I + L A'WA L) / 2
    which stays finite and continuous as any sigma_b -> 0.
    """

    def __init__(self, data: BinomialData):
        data = data.collapse()
        self.spec = spec = data.index.spec
        self.k, self.m = data.successes, data.trials
        Z = linear_design(data.index)
        self.Zf = Z[:, : spec.n_fixed].toarray()
        self.A = Z[:, spec.n_fixed:].tocsr()
        self.AT = self.A.T.tocsr()
        self.K = spec.n_beta
        self.beta_batch = spec.beta_batch
        self.u = np.zeros(self.K)
        self.evaluations = 0

    def _eta(self, fixed, lam, u):
        return self.Zf @ fixed + self.A @ (lam * u)

    def _g(self, eta, u):
        z = np.exp(-np.abs(eta))
        return float(self.k @ eta - self.m @ (np.maximum(eta, 0.0) + np.log1p(z))) - 0.5 * float(u @ u)

    def _hessian_parts(self, eta, lam):
        p = inv_logit(eta)
        w = self.m * p * (1.0 - p)
        M = (self.AT @ sparse.diags(w) @ self.A).toarray()
        H = lam[:, None] * M * lam[None, :]
        H[np.diag_indices_from(H)] += 1.0
        return p, w, M, H

    def inner(self, fixed, sigma, tol=1e-10, max_iter=100):
        """Conditional mode of u by damped Newton, warm-started."""
        lam = sigma[self.beta_batch]
        u = np.where(lam > 0, self.u, 0.0)
        eta = self._eta(fixed, lam, u)
        g_val = self._g(eta, u)
        for _ in range(max_iter):
            p, w, M, H = self._hessian_parts(eta, lam)
            grad = lam * (self.AT @ (self.k - self.m * p)) - u
            if np.max(np.abs(grad), initial=0.0) < tol:
                break
            cho = linalg.cho_factor(H)
            step = linalg.cho_solve(cho, grad)
            t = 1.0
            while True:
                u_new = u + t * step
                eta_new = self._eta(fixed, lam, u_new)
                g_new = self._g(eta_new, u_new)
                if g_new >= g_val - 1e-12 * max(1.0, abs(g_val)) or t < 1e-8:
                    break
                t *= 0.5
            if t < 1e-8:
                raise OptimizationError(f"inner Newton stalled at sigma={sigma}")
            u, eta, g_val = u_new, eta_new, g_new
            if np.max(np.abs(t * step), initial=0.0) < 1e-12:
                break
        else:
            raise OptimizationError(f"inner Newton did not converge at sigma={sigma}")
        self.u = u
        return u, eta, g_val

    def value_grad(self, fixed, sigma, need_grad=True):
        """F and dF/d(fixed, sigma)."""
        self.evaluations += 1
        u, eta, g_val = self.inner(fixed, sigma)
        lam = sigma[self.beta_batch]
        p, w, M, H = self._hessian_parts(eta, lam)
        cho = linalg.cho_factor(H)
        logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        F = g_val - 0.5 * logdet
        if not need_grad:
            return F, None

        nf, nb = self.spec.n_fixed, self.spec.n_batches
        r = self.k - self.m * p
        score = self.AT @ r
        C = linalg.cho_solve(cho, np.eye(self.K))
        dw = w * (1.0 - 2.0 * p)  # d w / d eta
        G = lam[:, None] * C * lam[None, :]
        h = _row_quadratic(self.A, G)  # a_i' L C L a_i per data row

        n_out = nf + nb
        direct_eta = np.zeros((eta.size, n_out))
        direct_grad = np.zeros((self.K, n_out))
        direct_eta[:, :nf] = self.Zf
        envelope = np.zeros(n_out)
        envelope[:nf] = self.Zf.T @ r
        trace_term = np.zeros(n_out)
        CLM = C @ (lam[:, None] * M)
        diag_CLM = np.diag(CLM)
        for b in range(nb):
            mask = self.beta_batch == b
            ub = np.where(mask, u, 0.0)
            direct_eta[:, nf + b] = self.A @ ub
            direct_grad[:, nf + b] = np.where(mask, score, 0.0)
            envelope[nf + b] = float(ub @ score)
            trace_term[nf + b] = 2.0 * float(diag_CLM[mask].sum())
        rhs = direct_grad - lam[:, None] * (self.AT @ (w[:, None] * direct_eta))
        du = linalg.cho_solve(cho, rhs)
        d_eta = direct_eta + self.A @ (lam[:, None] * du)
        trace_term += (dw * h) @ d_eta
        return F, envelope - 0.5 * trace_term


def _row_quadratic(A, G):
    """a_i' G a_i for every row of the 0/1 matrix A (CSR)."""
    return np.asarray(A.multiply(A @ G).sum(axis=1)).ravel()


def fit_mmle(data: BinomialData, tolerance=1e-4, seed=0, max_iter=500, start=None) -> FitResult:
    """Laplace marginal maximum likelihood for (fixed, sigma); beta at its conditional mode.

    Sigma components may come back exactly zero (see module docstring).
    """
    t0 = time.perf_counter()
    spec = data.index.spec
    lap = LaplaceMarginal(data)
    nf, nb = spec.n_fixed, spec.n_batches
    if start is None:
        map_fit = fit_map(data, tolerance=1e-4, seed=seed)
        fixed0 = map_fit.point.fixed
        sigma0 = np.clip(map_fit.point.sigma, 0.05, 5.0)
    else:
        fixed0, sigma0 = np.asarray(start.fixed, float), np.asarray(start.sigma, float)
    active = np.ones(nb, dtype=bool)
    fixed, sigma = fixed0.copy(), sigma0.copy()
    trace = []
    pinned_order = []

    def solve(fixed, sigma, active):
        idx = np.flatnonzero(active)
        bounds = [(None, None)] * nf + [LOG_SIGMA_BOUNDS] * idx.size
        x0 = np.concatenate([fixed, np.log(np.clip(sigma[idx], 1.1e-5, 49.0))])

        def negative(x):
            s = np.zeros(nb)
            s[idx] = np.exp(x[nf:])
            F, g = lap.value_grad(x[:nf], s)
            gx = np.concatenate([g[:nf], g[nf:][idx] * s[idx]])
            return -F, -gx

        if x0.size == 0:  # nothing left free: every batch pinned and no fixed terms
            return fixed, np.zeros(nb), lap.value_grad(fixed, np.zeros(nb), need_grad=False)[0], 0.0
        x, res, tr = _minimize(negative, x0, tolerance, max_iter, bounds=bounds)
        trace.extend(tr)
        s = np.zeros(nb)
        s[idx] = np.exp(x[nf:])
        f, gx = negative(x)
        return x[:nf], s, -f, _projected_norm(x, gx, bounds)

    while True:
        fixed, sigma, best, gnorm = solve(fixed, sigma, active)
        # boundary probe: objective with each active batch removed
        gains = {}
        for b in np.flatnonzero(active):
            s = sigma.copy()
            s[b] = 0.0
            gains[b] = lap.value_grad(fixed, s, need_grad=False)[0] - best
        lap.inner(fixed, sigma)
        if not gains:
            break
        b_best = max(gains, key=gains.get)
        if gains[b_best] < 0:
            floor = [b for b in gains if sigma[b] <= SIGMA_FLOOR]
            if not floor:
                break
            b_best = max(floor, key=gains.get)
        active[b_best] = False
        sigma[b_best] = 0.0
        pinned_order.append(spec.batches[b_best].name)
        trace.append(f"pinned sigma[{spec.batches[b_best].name}] = 0 (gain {gains[b_best]:.3g})")

    u, eta, _ = lap.inner(fixed, sigma)
    beta = sigma[spec.beta_batch] * u
    point = ParameterVector(fixed, beta, sigma)
    converged = gnorm <= tolerance
    return FitResult(
        kind=MMLE, spec=spec, point=point, seed=seed, elapsed=time.perf_counter() - t0,
        converged=converged,
        warnings=[] if converged else [f"outer gradient norm {gnorm:.3g} above tolerance {tolerance:g}"],
        info={"grad_norm": gnorm, "log_marginal": best, "pinned": pinned_order,
              "evaluations": lap.evaluations, "trace": trace},
    )
