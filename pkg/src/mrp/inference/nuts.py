"""No-U-turn Hamiltonian Monte Carlo with windowed warmup adaptation.

Multinomial trajectory sampling with the generalised (momentum-sum)
U-turn criterion, including the extra checks across merged subtrees.
Warmup follows the usual three-phase schedule: a fast step-size-only
buffer, a sequence of doubling slow windows that re-estimate a diagonal
inverse mass matrix, and a final step-size-only buffer. Step size is
tuned by dual averaging towards a target acceptance statistic.
"""

from __future__ import annotations

import math
import time

import numpy as np

MAX_ENERGY_ERROR = 1000.0


class DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** -self.kappa
        self.x_bar = (1.0 - w) * self.x_bar + w * x
        return math.exp(x)

    @property
    def final_step_size(self):
        return math.exp(self.x_bar)


class WindowSchedule:
    """Warmup phase boundaries (initial buffer, slow windows, terminal buffer)."""

    def __init__(self, warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.warmup = warmup
        if warmup < 20:
            self.init_buffer, self.term_buffer, self.base_window = warmup, 0, 0
        elif init_buffer + base_window + term_buffer > warmup:
            self.init_buffer = int(0.15 * warmup)
            self.term_buffer = int(0.1 * warmup)
            self.base_window = warmup - self.init_buffer - self.term_buffer
        else:
            self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.window_ends = []
        if self.base_window <= 0:
            return
        last = warmup - self.term_buffer
        start, size = self.init_buffer, self.base_window
        while start < last:
            end = start + size
            if end + 2 * size > last:
                end = last
            self.window_ends.append(end)
            start, size = end, 2 * size

    def in_slow_window(self, i):
        return self.base_window > 0 and self.init_buffer <= i < self.warmup - self.term_buffer

    def window_end(self, i):
        """True when iteration i (0-based) completes a slow window."""
        return (i + 1) in self.window_ends


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self):
        n = self.n
        w = n / (n + 5.0)
        return w * self.m2 / (n - 1) + 1e-3 * (1.0 - w)


def _logaddexp(a, b):
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


class _State:
    """Phase-space point; ``v`` is the velocity M^{-1} p, cached."""

    __slots__ = ("q", "p", "v", "grad", "logp")

    def __init__(self, q, p, v, grad, logp):
        self.q, self.p, self.v, self.grad, self.logp = q, p, v, grad, logp


class _Subtree:
    __slots__ = ("first", "last", "rho", "log_w", "sample", "n_leapfrog", "sum_accept", "divergent", "turning")

    def __init__(self, first, last, rho, log_w, sample, n_leapfrog, sum_accept, divergent=False, turning=False):
        self.first = first  # adjacent to where the subtree started
        self.last = last  # far end in the build direction
        self.rho = rho
        self.log_w = log_w
        self.sample = sample
        self.n_leapfrog = n_leapfrog
        self.sum_accept = sum_accept
        self.divergent = divergent
        self.turning = turning


def _turning(rho, v_a, v_b):
    return not (float(v_a @ rho) > 0 and float(v_b @ rho) > 0)


class NUTSChain:
    """One chain's dynamics with a diagonal inverse mass matrix."""

    def __init__(self, logp_grad, dim, rng, target_accept=0.8, max_tree_depth=10):
        self.logp_grad = logp_grad
        self.dim = dim
        self.rng = rng
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.step_size = 1.0
        self.set_metric(np.ones(dim))

    def set_metric(self, inv_mass):
        self.inv_mass = np.asarray(inv_mass, dtype=float)
        self._sqrt_mass = 1.0 / np.sqrt(self.inv_mass)

    def _draw_momentum(self):
        return self.rng.standard_normal(self.dim) * self._sqrt_mass

    def _eval(self, q):
        lp, g = self.logp_grad(q)
        lp = float(lp)
        if not (math.isfinite(lp) and math.isfinite(float(np.add.reduce(g)))):
            return -math.inf, g
        return lp, g

    def _leapfrog(self, s: _State, eps):
        p = s.p + (0.5 * eps) * s.grad
        q = s.q + eps * (self.inv_mass * p)
        lp, g = self._eval(q)
        if lp != -math.inf:
            p += (0.5 * eps) * g
        return _State(q, p, self.inv_mass * p, g, lp)

    @staticmethod
    def _hamiltonian(s: _State):
        if s.logp == -math.inf:
            return math.inf
        return -s.logp + 0.5 * float(s.p @ s.v)

    def _build(self, start: _State, depth, eps, h0):
        if depth == 0:
            s = self._leapfrog(start, eps)
            delta = self._hamiltonian(s) - h0
            if delta != delta:
                delta = math.inf
            divergent = delta > MAX_ENERGY_ERROR
            accept = 1.0 if delta <= 0 else math.exp(-delta)
            return _Subtree(s, s, s.p.copy(), -delta, s, 1, accept, divergent=divergent)

        a = self._build(start, depth - 1, eps, h0)
        if a.divergent or a.turning:
            return a
        b = self._build(a.last, depth - 1, eps, h0)
        n = a.n_leapfrog + b.n_leapfrog
        acc = a.sum_accept + b.sum_accept
        if b.divergent or b.turning:
            return _Subtree(a.first, b.last, a.rho, a.log_w, a.sample, n, acc, b.divergent, b.turning)
        log_w = _logaddexp(a.log_w, b.log_w)
        sample = b.sample if math.log(self.rng.random()) < b.log_w - log_w else a.sample
        rho = a.rho + b.rho
        turning = (
            _turning(rho, a.first.v, b.last.v)
            or _turning(a.rho + b.first.p, a.first.v, b.first.v)
            or _turning(b.rho + a.last.p, a.last.v, b.last.v)
        )
        return _Subtree(a.first, b.last, rho, log_w, sample, n, acc, turning=turning)

    def transition(self, q, logp, grad):
        """One NUTS iteration from position q. Returns (state, stats)."""
        p0 = self._draw_momentum()
        s0 = _State(q, p0, self.inv_mass * p0, grad, logp)
        h0 = self._hamiltonian(s0)
        left = right = s0
        rho = p0.copy()
        log_w = 0.0
        sample = s0
        n_leapfrog, sum_accept = 0, 0.0
        divergent = False
        depth = 0
        while depth < self.max_tree_depth:
            forward = self.rng.random() < 0.5
            if forward:
                sub = self._build(right, depth, self.step_size, h0)
                tree_first, tree_last = left, right
            else:
                sub = self._build(left, depth, -self.step_size, h0)
                tree_first, tree_last = right, left
            depth += 1
            n_leapfrog += sub.n_leapfrog
            sum_accept += sub.sum_accept
            if sub.divergent:
                divergent = True
                break
            if sub.turning:
                break
            if math.log(self.rng.random()) < sub.log_w - log_w:
                sample = sub.sample
            log_w = _logaddexp(log_w, sub.log_w)
            if forward:
                right = sub.last
            else:
                left = sub.last
            rho_tree = rho
            rho = rho + sub.rho
            if (
                _turning(rho, left.v, right.v)
                or _turning(rho_tree + sub.first.p, tree_first.v, sub.first.v)
                or _turning(sub.rho + tree_last.p, tree_last.v, sub.last.v)
            ):
                break
        stats = {
            "accept_stat": sum_accept / max(n_leapfrog, 1),
            "n_leapfrog": n_leapfrog,
            "tree_depth": depth,
            "divergent": divergent,
            "energy": self._hamiltonian(sample) if sample is not s0 else h0,
        }
        return sample, stats

    def find_reasonable_step_size(self, q, logp, grad):
        eps = self.step_size
        p = self._draw_momentum()
        s0 = _State(q, p, self.inv_mass * p, grad, logp)
        h0 = self._hamiltonian(s0)

        def delta_h(e):
            d = h0 - self._hamiltonian(self._leapfrog(s0, e))
            return -math.inf if d != d else d

        direction = 1 if delta_h(eps) > math.log(0.8) else -1
        for _ in range(100):
            eps_new = eps * 2.0 ** direction
            dh = delta_h(eps_new)
            if (direction == 1 and not dh > math.log(0.8)) or (direction == -1 and dh > math.log(0.8)):
                if direction == -1:
                    eps = eps_new
                break
            eps = eps_new
        self.step_size = eps
        return eps


def run_chain(logp_grad, q0, warmup, samples, rng, target_accept=0.8, max_tree_depth=10):
    """Adapt then sample one chain. Returns (positions (samples, dim), stats dict)."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _run_chain(logp_grad, q0, warmup, samples, rng, target_accept, max_tree_depth)


def _run_chain(logp_grad, q0, warmup, samples, rng, target_accept, max_tree_depth):
    dim = q0.size
    chain = NUTSChain(logp_grad, dim, rng, target_accept, max_tree_depth)
    q = np.array(q0, dtype=float)
    lp, g = chain._eval(q)
    if not np.isfinite(lp):
        raise FloatingPointError("log density is not finite at the initial point")
    chain.find_reasonable_step_size(q, lp, g)
    da = DualAveraging(chain.step_size, target_accept)
    schedule = WindowSchedule(warmup)
    welford = _Welford(dim)

    for i in range(warmup):
        s, st = chain.transition(q, lp, g)
        q, lp, g = s.q, s.logp, s.grad
        chain.step_size = da.update(st["accept_stat"])
        if schedule.in_slow_window(i):
            welford.add(q)
            if schedule.window_end(i):
                chain.set_metric(welford.regularized_variance())
                welford = _Welford(dim)
                chain.find_reasonable_step_size(q, lp, g)
                da = DualAveraging(chain.step_size, target_accept)
    if warmup:
        chain.step_size = da.final_step_size

    out = np.empty((samples, dim))
    n_div = 0
    depths = np.empty(samples, dtype=np.int64)
    n_leap = np.empty(samples, dtype=np.int64)
    accept = np.empty(samples)
    energy = np.empty(samples)
    for i in range(samples):
        s, st = chain.transition(q, lp, g)
        q, lp, g = s.q, s.logp, s.grad
        out[i] = q
        n_div += st["divergent"]
        depths[i] = st["tree_depth"]
        n_leap[i] = st["n_leapfrog"]
        accept[i] = st["accept_stat"]
        energy[i] = st["energy"]
    stats = {
        "step_size": chain.step_size,
        "inv_mass": chain.inv_mass.copy(),
        "divergences": int(n_div),
        "mean_tree_depth": float(depths.mean()),
        "max_tree_depth_hits": int((depths >= max_tree_depth).sum()),
        "mean_leapfrog": float(n_leap.mean()),
        "mean_accept_stat": float(accept.mean()),
        "energy": energy,
    }
    return out, stats


def sample_nuts(logp_grad, dim, chains, warmup, samples, seed, target_accept=0.8,
                max_tree_depth=10, init_radius=2.0, init=None):
    """Run ``chains`` independent chains; chain c draws from stream (seed, c).

    Chains are run one after another and merged in chain order, so the
    result depends only on the arguments.
    """
    streams = np.random.SeedSequence(seed).spawn(chains)
    positions, all_stats = [], []
    t0 = time.perf_counter()
    for c in range(chains):
        rng = np.random.default_rng(streams[c])
        q0 = rng.uniform(-init_radius, init_radius, size=dim) if init is None else np.asarray(init[c], float)
        pos, st = run_chain(logp_grad, q0, warmup, samples, rng, target_accept, max_tree_depth)
        positions.append(pos)
        all_stats.append(st)
    return np.stack(positions), all_stats, time.perf_counter() - t0
