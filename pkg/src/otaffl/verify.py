"""Built-in self-checks run by ``otaffl verify``.

Each check returns a :class:`CheckResult`. ``full=True`` runs the checks at
their complete sample sizes; the default trims draw counts so the suite
finishes in a few seconds.
"""

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .datasets import synth_heterogeneous
from .fedsim.client import FFL, AlgorithmSpec, ClientState
from .fedsim.engine import GlobalModel, Streams, run_round
from .fedsim.models import MLP, LinearRegression, LogisticRegression
from .fedsim.scheduling import SchedulerSpec, schedule, subset_energy
from .moo import ChebyshevConfig, compute_lambda_avg, inner_objective, solve_inner_weights, solve_inner_weights_pocs
from .ota import (
    ChannelConfig,
    ChannelRealization,
    aggregate_stats,
    decode,
    draw_channel,
    gradient_stats,
    normalize_gradient,
    optimal_plan,
    predict_variance,
    transmit_and_receive,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<22} {self.detail}  ({self.seconds:.2f}s)"


def _instance(rng, K, d, sigma=None, p0=None):
    """Random gradients, weights and Rayleigh channel for one codec instance."""
    grads = rng.normal(size=(K, d)) + rng.normal(size=(K, 1))
    w = rng.dirichlet(np.ones(K))
    h = draw_channel(rng, K)
    sigma = rng.uniform(0.1, 1.0) if sigma is None else sigma
    p0 = rng.uniform(0.5, 2.0) if p0 is None else p0
    return grads, w, ChannelRealization(h, sigma, p0)


def _encode(grads, w, channel):
    stats = aggregate_stats([gradient_stats(g) for g in grads], w)
    symbols = np.stack([normalize_gradient(g, stats) for g in grads])
    return stats, symbols, optimal_plan(channel, w)


def check_unbiasedness(seed=0, K=5, d=100, draws=10_000, tol=0.02):
    rng = np.random.default_rng(seed)
    grads, w, channel = _instance(rng, K, d, sigma=0.5, p0=1.0)
    stats, symbols, plan = _encode(grads, w, channel)
    y = transmit_and_receive(symbols, plan, channel, rng, n_draws=draws)
    g_hat = decode(y, plan, stats).g_hat
    target = w @ grads
    rel = float(np.linalg.norm(g_hat.mean(axis=0) - target) / np.linalg.norm(target))
    return rel <= tol, f"relative bias {rel:.4f} (tol {tol})"


def check_variance_law(seed=0, instances=20, draws=100_000, d=10, tol=0.05):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        K = int(rng.integers(2, 8))
        grads, w, channel = _instance(rng, K, d)
        stats, symbols, plan = _encode(grads, w, channel)
        y = transmit_and_receive(symbols, plan, channel, rng, n_draws=draws)
        err = np.sum(np.abs(decode(y, plan, stats).g_hat - w @ grads) ** 2, axis=1).mean()
        pred = predict_variance(d, stats, channel, w)
        worst = max(worst, abs(err - pred) / pred)
    return worst <= tol, f"worst relative gap {worst:.4f} over {instances} instances (tol {tol})"


def check_power(seed=0, plans=1000):
    rng = np.random.default_rng(seed)
    worst_excess, worst_binding = 0.0, 0.0
    for _ in range(plans):
        K = int(rng.integers(1, 11))
        _, w, channel = _instance(rng, K, 1)
        plan = optimal_plan(channel, w)
        power = np.abs(plan.b) ** 2
        p0 = channel.power_budget
        worst_excess = max(worst_excess, float(np.max(power - p0)))
        worst_binding = max(worst_binding, float(np.min(np.abs(power - p0))))
    ok = worst_excess <= 1e-12 and worst_binding <= 1e-9
    return ok, f"max |b|^2-P0 {worst_excess:.2e}, max binding gap {worst_binding:.2e}"


def _grid_optimum(f, cfg, step=1e-3):
    lo, hi = cfg.lower, cfg.upper
    n = int(round(1 / step))
    a = np.arange(n + 1)[:, None] * step
    b = np.arange(n + 1)[None, :] * step
    c = 1.0 - a - b
    ok = (c >= -1e-12) & (a >= lo[0] - 1e-12) & (a <= hi[0] + 1e-12) & (b >= lo[1] - 1e-12) & (b <= hi[1] + 1e-12)
    ok &= (c >= lo[2] - 1e-12) & (c <= hi[2] + 1e-12)
    g = f - cfg.zeta
    vals = np.where(ok, a * g[0] + b * g[1] + c * g[2], -np.inf)
    return float(vals.max())


def check_inner_solver(seed=0, instances=1000, grid_instances=50):
    rng = np.random.default_rng(seed)
    worst_pocs = 0.0
    for _ in range(instances):
        K = int(rng.integers(2, 11))
        cfg = ChebyshevConfig(float(rng.uniform(0, 1)), rng.uniform(-0.5, 0.5, K), rng.dirichlet(np.ones(K)))
        f = rng.uniform(0, 2, K)
        a = solve_inner_weights(f, cfg)
        b = solve_inner_weights_pocs(f, cfg, step=1.0, iters=2000)
        worst_pocs = max(worst_pocs, abs(inner_objective(a, f, cfg.zeta) - inner_objective(b, f, cfg.zeta)))
    worst_grid = 0.0
    for _ in range(grid_instances):
        cfg = ChebyshevConfig(float(rng.uniform(0, 1)), rng.uniform(-0.5, 0.5, 3), rng.dirichlet(np.ones(3)))
        f = rng.uniform(0, 2, 3)
        greedy = inner_objective(solve_inner_weights(f, cfg), f, cfg.zeta)
        # the grid can only under-shoot the true optimum
        worst_grid = max(worst_grid, _grid_optimum(f, cfg) - greedy)
    ok = worst_pocs <= 1e-6 and worst_grid <= 1e-6
    return ok, f"POCS gap {worst_pocs:.2e}, grid excess {worst_grid:.2e}"


def check_noiseless_reduction(seed=0, rounds=50, K=5, tol=1e-9):
    parts = synth_heterogeneous(K, [30 + 10 * k for k in range(K)], 4, 3, 1.0, seed)
    model = LogisticRegression(4, 3)
    clients = [ClientState(k, parts[k], model, 0.1, 1, None) for k in range(K)]
    lam = compute_lambda_avg([len(p) for p in parts])
    algo = AlgorithmSpec(FFL, epsilon=0.0, zeta=0.0)
    channel_cfg = ChannelConfig(noise_values=(0.0,))
    streams = Streams(seed)
    state = GlobalModel(np.zeros(model.dim))
    central = np.zeros(model.dim)
    worst = 0.0
    for _ in range(rounds):
        state, _ = run_round(state, clients, algo, SchedulerSpec("full"), channel_cfg, streams, 0.1)
        g = sum(lam[k] * model.grad(central, p.features, p.labels) for k, p in enumerate(parts))
        central = central - 0.1 * g
        worst = max(worst, float(np.max(np.abs(state.theta - central))))
    return worst <= tol, f"max deviation {worst:.2e} over {rounds} rounds (tol {tol})"


def check_gradients(seed=0, points=10, tol=1e-6, h=1e-5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 4))
    y_cls = rng.integers(0, 3, 20)
    y_reg = rng.normal(size=20)
    worst = 0.0
    for model, y in ((LinearRegression(4), y_reg), (LogisticRegression(4, 3), y_cls), (MLP(4, 3, (5, 4)), y_cls)):
        for _ in range(points):
            theta = rng.normal(size=model.dim)
            g = model.grad(theta, X, y)
            fd = np.empty_like(g)
            for i in range(model.dim):
                e = np.zeros_like(theta)
                e[i] = h
                fd[i] = (model.loss(theta + e, X, y) - model.loss(theta - e, X, y)) / (2 * h)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    return worst <= tol, f"worst relative error {worst:.2e} (tol {tol})"


def check_gibbs(seeds=100, K=6, target=3, dim=10, tol=0.05, need=95):
    sched = SchedulerSpec("gibbs", target_size=target)
    hits = 0
    for seed in range(seeds):
        rng = np.random.default_rng(10_000 + seed)
        channel = ChannelRealization(draw_channel(rng, K), 0.5, 1.0)
        w = rng.dirichlet(np.ones(K))
        best = min(subset_energy(s, channel, w, dim) for s in itertools.combinations(range(K), target))
        got = subset_energy(schedule(sched, channel, w, rng, dim=dim), channel, w, dim)
        hits += got <= best * (1 + tol)
    return hits >= need, f"{hits}/{seeds} seeds within {tol:.0%} of the exhaustive minimum (need {need})"


CHECKS = {
    "unbiasedness": (check_unbiasedness, {"draws": 2_000}),
    "variance-law": (check_variance_law, {"draws": 20_000}),
    "power-constraint": (check_power, {}),
    "inner-solver": (check_inner_solver, {"instances": 200, "grid_instances": 10}),
    "noiseless-reduction": (check_noiseless_reduction, {}),
    "gradients": (check_gradients, {}),
    "gibbs-scheduler": (check_gibbs, {}),
}


def run_checks(full=False, names=None):
    results = []
    for name, (fn, quick_kwargs) in CHECKS.items():
        if names and name not in names:
            continue
        start = time.perf_counter()
        try:
            passed, detail = fn() if full else fn(**quick_kwargs)
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"error: {exc!r}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results
