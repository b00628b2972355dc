"""Server-side round logic and experiment orchestration."""

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from ..datasets import PartitionSpec, dirichlet_partition, load_idx, synth_heterogeneous, synth_regression
from ..errors import ChannelDegenerateError, EmptySelectionError, InvalidInputError
from ..metrics import EvalSummary, RoundRecord, emit_reports, fairness_std, percentile_means, summarize
from ..moo import SIMPLEX_ATOL, ChebyshevConfig, check_weights, compute_lambda_avg, solve_inner_weights
from ..ota import (
    aggregate_stats,
    decode,
    normalize_gradient,
    optimal_plan,
    transmit_and_receive,
)
from .client import FFL, ClientState, local_gradient, local_loss
from .models import build_model
from .scheduling import feasible_clients, schedule

logger = logging.getLogger(__name__)

# stream tags mixed into the master seed
_DATA, _CHANNEL, _NOISE, _SCHEDULE, _CLIENT, _INIT, _SPLIT = range(7)


@dataclass
class GlobalModel:
    theta: np.ndarray
    round: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInputError("global model parameters must be finite")


class Streams:
    """Independent random streams keyed by (master seed, purpose, round, client)."""

    def __init__(self, seed):
        self.seed = int(seed)

    def _rng(self, *key):
        return np.random.default_rng([self.seed, *key])

    def data_seed(self):
        return int(np.random.SeedSequence([self.seed, _DATA]).generate_state(1)[0])

    def init(self):
        return self._rng(_INIT)

    def split(self, client_id):
        return self._rng(_SPLIT, client_id)

    def channel(self, t):
        return self._rng(_CHANNEL, t)

    def noise(self, t):
        return self._rng(_NOISE, t)

    def schedule(self, t):
        return self._rng(_SCHEDULE, t)

    def client(self, t, client_id):
        return self._rng(_CLIENT, t, client_id)


def server_weights(losses, algo, lambda_avg):
    """Weight vector the server applies this round."""
    if algo.kind != FFL:
        return lambda_avg.copy()
    zeta = 0.0 if algo.zeta is None else algo.zeta
    cfg = ChebyshevConfig(algo.epsilon, np.asarray(zeta, dtype=np.float64), lambda_avg)
    lam = solve_inner_weights(losses, cfg)
    tol = SIMPLEX_ATOL
    if np.any(lam < cfg.lower - tol) or np.any(lam > cfg.upper + tol):
        raise InvalidInputError("inner solver left the feasible box")
    return lam


def run_round(model, clients, algo, sched, channel_cfg, streams, global_lr, record_timing=False):
    """One communication round; returns the updated model and its record."""
    start = time.perf_counter()
    t = model.round
    theta = model.theta
    K = len(clients)

    # scalar losses over the control channel, then the server's weights
    losses = np.array([local_loss(c, theta) for c in clients])
    lambda_avg = compute_lambda_avg([len(c.dataset) for c in clients])
    weights = server_weights(losses, algo, lambda_avg)

    channel = channel_cfg.realize(streams.channel(t), t, K)
    if np.all(channel.degenerate()):
        raise ChannelDegenerateError(f"round {t}: every client channel is below the floor")
    if sched.kind != "full":
        # zero-weight clients carry nothing, so a short pool just shrinks the target
        pool = feasible_clients(channel, weights).size
        if 0 < pool < sched.target_size:
            sched = replace(sched, target_size=pool)
    selected = schedule(sched, channel, weights, streams.schedule(t), dim=theta.size)
    if selected.size == 0:
        raise EmptySelectionError(f"round {t}: no client selected")
    used = np.zeros(K)
    used[selected] = weights[selected] / weights[selected].sum()
    check_weights(used)
    w_sel = used[selected]

    reports = [local_gradient(clients[k], theta, streams.client(t, k), algo) for k in selected]
    grads = np.stack([r.gradient for r in reports])
    stats = aggregate_stats([r.stats for r in reports], w_sel)
    symbols = np.stack([normalize_gradient(g, stats) for g in grads])

    link = channel.subset(selected)
    plan = optimal_plan(link, w_sel)
    y = transmit_and_receive(symbols, plan, link, streams.noise(t))
    est = decode(y, plan, stats, link)

    target = w_sel @ grads
    realized = float(np.sum(np.abs(est.g_hat - target) ** 2))
    new_model = GlobalModel(theta - global_lr * est.g_hat_real, t + 1)

    elapsed = (time.perf_counter() - start) * 1e3 if record_timing else 0.0
    record = RoundRecord(
        round=t,
        losses=losses,
        weights=weights,
        selected=selected,
        used_weights=used,
        c=plan.c,
        noise_deviation=float(np.sqrt(link.noise_variance)),
        predicted_variance=est.predicted_variance,
        realized_error=realized,
        elapsed_ms=elapsed,
    )
    return new_model, record


@dataclass
class Federation:
    model: object
    clients: list
    test_sets: list


def build_federation(cfg, streams):
    """Datasets, model and client states for ``cfg``, all derived from the master seed."""
    data_cfg, model_cfg = cfg.data, cfg.model
    K = data_cfg.num_clients
    if data_cfg.source == "idx":
        full = load_idx(data_cfg.images, data_cfg.labels)
        if data_cfg.max_samples is not None:
            full = full.subset(np.arange(min(len(full), data_cfg.max_samples)))
        spec = PartitionSpec(K, data_cfg.dirichlet_beta, data_cfg.min_per_client, streams.data_seed())
        parts = dirichlet_partition(full, spec)
        num_classes = int(full.labels.max()) + 1
    elif model_cfg.kind == "linear":
        parts = synth_regression(K, data_cfg.samples_per_client, data_cfg.features, data_cfg.skew, streams.data_seed())
        num_classes = None
    else:
        parts = synth_heterogeneous(
            K, data_cfg.samples_per_client, data_cfg.features, data_cfg.classes, data_cfg.skew, streams.data_seed()
        )
        num_classes = data_cfg.classes

    model = build_model(model_cfg.kind, parts[0].num_features, num_classes, model_cfg.hidden)
    clients, tests = [], []
    for k, part in enumerate(parts):
        train, test = part.split(data_cfg.test_fraction, streams.split(k))
        clients.append(ClientState(k, train, model, model_cfg.local_lr, model_cfg.local_steps, model_cfg.batch_size))
        tests.append(test)
    return Federation(model, clients, tests)


@dataclass
class ExperimentResult:
    records: list
    model: GlobalModel
    summary: EvalSummary
    paths: dict | None = None


def evaluate(federation, theta):
    """Per-client test accuracy plus train/test loss spreads."""
    model = federation.model
    train_losses = np.array([local_loss(c, theta) for c in federation.clients])
    test_losses = np.array([model.loss(theta, d.features, d.labels) for d in federation.test_sets])
    accs = np.array([model.accuracy(theta, d.features, d.labels) for d in federation.test_sets])
    worst_loss, best_loss = percentile_means(-train_losses, 0.1)
    return summarize(
        accs,
        train_losses=train_losses.tolist(),
        test_losses=test_losses.tolist(),
        loss_std=fairness_std(train_losses),
        test_loss_std=fairness_std(test_losses),
        loss_mean=float(train_losses.mean()),
        loss_worst10=-worst_loss,
        loss_best10=-best_loss,
    )


def run_experiment(cfg, out_dir=None):
    """Run ``cfg.rounds`` rounds from a fresh model and optionally write reports.

    Reports go to ``out_dir`` (falling back to ``cfg.out_dir``) when one is set.
    """
    streams = Streams(cfg.seed)
    fed = build_federation(cfg, streams)
    model = GlobalModel(fed.model.init(streams.init()), 0)
    records = []
    for _ in range(cfg.rounds):
        model, rec = run_round(
            model, fed.clients, cfg.algorithm, cfg.scheduler, cfg.channel, streams, cfg.global_lr, cfg.record_timing
        )
        records.append(rec)
        logger.debug("round %d: mean loss %.4f, c=%.3g", rec.round, rec.losses.mean(), rec.c)
    summary = evaluate(fed, model.theta)
    target = out_dir if out_dir is not None else cfg.out_dir
    paths = None
    if target is not None:
        paths = emit_reports(records, summary, target, cfg.to_dict(), cfg.seed, len(fed.clients))
    return ExperimentResult(records, model, summary, paths)
