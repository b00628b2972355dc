"""Client scheduling: full participation, channel top-k, and a Gibbs sampler."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, SchedulingError
from ..ota import H_FLOOR, NormalizationStats, predict_variance

SCHEDULERS = ("full", "channel-topk", "gibbs")


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str = "full"
    target_size: int | None = None
    gibbs_iters: int = 200
    gibbs_temp0: float = 1.0
    gibbs_cooling: float = 0.97
    gibbs_mu: float = 1.0
    gibbs_grad_proxy: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULERS:
            raise InvalidInputError(f"unknown scheduler {self.kind!r}; expected one of {SCHEDULERS}")
        if self.kind != "full" and (self.target_size is None or self.target_size < 1):
            raise InvalidInputError(f"scheduler {self.kind!r} needs target_size >= 1")
        if self.gibbs_iters < 0 or not self.gibbs_temp0 > 0 or not 0 < self.gibbs_cooling <= 1:
            raise InvalidInputError("gibbs_iters >= 0, gibbs_temp0 > 0 and gibbs_cooling in (0, 1] required")


def feasible_clients(channel, weights, h_floor=H_FLOOR):
    """Clients that can take part: usable channel and positive weight."""
    w = np.asarray(weights)
    return np.flatnonzero(~channel.degenerate(h_floor) & (w > 0))


def subset_energy(subset, channel, weights, dim, variance=1.0, mu=1.0, grad_proxy=1.0):
    """Scheduling cost: predicted OTA error of ``subset`` plus a penalty for
    the weight mass left out.

    The error term uses the weights renormalized over ``subset`` and a
    normalization variance of ``variance``.
    """
    subset = np.asarray(subset, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    ws = w[subset] / w[subset].sum()
    err = predict_variance(dim, NormalizationStats(0.0, variance), channel.subset(subset), ws)
    left_out = np.ones(w.size, dtype=bool)
    left_out[subset] = False
    return err + mu * grad_proxy * float(w[left_out].sum())


def schedule(sched, channel, weights, rng, dim=1, variance=1.0):
    """Pick the clients transmitting this round, returned as sorted indices.

    Only clients with a usable channel and positive weight are eligible.
    ``gibbs`` anneals over subsets of size ``target_size`` with single-swap
    proposals accepted with probability ``exp(-dE / T_i)``, where
    ``T_i = temp0 * cooling**i`` times the energy of the starting subset, and
    returns the lowest-energy subset visited.
    """
    candidates = feasible_clients(channel, weights)
    if sched.kind == "full":
        return candidates

    m = sched.target_size
    if m > candidates.size:
        raise SchedulingError(f"target_size {m} exceeds the {candidates.size} feasible clients")

    if sched.kind == "channel-topk":
        mags = np.abs(channel.coefficients[candidates])
        order = np.argsort(-mags, kind="stable")
        return np.sort(candidates[order[:m]])

    return _gibbs(sched, channel, weights, rng, candidates, dim, variance)


def _gibbs(sched, channel, weights, rng, candidates, dim, variance):
    m = sched.target_size
    if m == candidates.size:
        return candidates
    cache = {}

    def energy(sel):
        key = tuple(sorted(sel))
        if key not in cache:
            cache[key] = subset_energy(
                key, channel, weights, dim, variance, sched.gibbs_mu, sched.gibbs_grad_proxy
            )
        return cache[key]

    perm = rng.permutation(candidates)
    inside, outside = list(perm[:m]), list(perm[m:])
    current = energy(inside)
    best, best_energy = list(inside), current
    # temperatures are measured in units of the starting energy
    scale = current if current > 0 else 1.0
    temp = sched.gibbs_temp0
    for _ in range(sched.gibbs_iters):
        i = int(rng.integers(m))
        j = int(rng.integers(len(outside)))
        proposal = inside.copy()
        proposal[i] = outside[j]
        proposed = energy(proposal)
        delta = proposed - current
        u = rng.random()
        if delta <= 0 or u < np.exp(-delta / (temp * scale)):
            outside[j], inside[i] = inside[i], outside[j]
            current = proposed
            if current < best_energy:
                best, best_energy = list(inside), current
        temp *= sched.gibbs_cooling
    return np.sort(np.asarray(best, dtype=np.intp))
