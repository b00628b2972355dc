"""Fading Gaussian MAC simulation and the over-the-air aggregation codec.

Selected clients normalize their gradients with globally agreed statistics,
pre-equalize with a transmit scalar ``b_k`` and transmit simultaneously; the
server scales the superimposed signal by ``1 / c`` and undoes the
normalization. With the plan from :func:`optimal_plan` the decoded vector is
an unbiased estimate of ``sum_k lam_k g_k``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelDegenerateError, EmptySelectionError, InvalidInputError
from .moo import check_weights

H_FLOOR = 1e-6
V_FLOOR = 1e-12


@dataclass(frozen=True)
class ChannelRealization:
    """Channel state for one round.

    ``link_deviations`` is optional per-client noise (one entry per
    coefficient) added on each link before superposition, on top of the
    receiver noise of deviation ``noise_deviation``.
    """

    coefficients: np.ndarray
    noise_deviation: float
    power_budget: float
    link_deviations: np.ndarray | None = None

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.coefficients, dtype=np.complex128))
        if h.ndim != 1:
            raise InvalidInputError("channel coefficients must be a 1-d vector")
        if not np.all(np.isfinite(h)):
            raise InvalidInputError("channel coefficients must be finite")
        if not self.noise_deviation >= 0:
            raise InvalidInputError(f"noise deviation must be >= 0, got {self.noise_deviation!r}")
        if not self.power_budget > 0:
            raise InvalidInputError(f"power budget must be > 0, got {self.power_budget!r}")
        object.__setattr__(self, "coefficients", h)
        if self.link_deviations is not None:
            links = np.asarray(self.link_deviations, dtype=np.float64)
            if links.shape != h.shape or np.any(links < 0):
                raise InvalidInputError("link deviations must be non-negative, one per coefficient")
            object.__setattr__(self, "link_deviations", links)

    def __len__(self):
        return self.coefficients.size

    @property
    def noise_variance(self):
        """Total noise power per received component."""
        var = float(self.noise_deviation) ** 2
        if self.link_deviations is not None:
            var += float(np.sum(self.link_deviations**2))
        return var

    def degenerate(self, h_floor=H_FLOOR):
        """Boolean mask of clients whose channel magnitude is below ``h_floor``."""
        return np.abs(self.coefficients) < h_floor

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        links = None if self.link_deviations is None else self.link_deviations[idx]
        return ChannelRealization(self.coefficients[idx], self.noise_deviation, self.power_budget, links)


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise InvalidInputError("normalization statistics must be finite")
        if self.variance < 0:
            raise InvalidInputError(f"variance must be non-negative, got {self.variance!r}")


@dataclass(frozen=True)
class TransmitPlan:
    b: np.ndarray
    c: float


@dataclass(frozen=True)
class AggregateEstimate:
    g_hat: np.ndarray
    g_hat_real: np.ndarray = field(init=False)
    predicted_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g_hat_real", np.real(self.g_hat).copy())


def gradient_stats(g):
    """Sample mean and biased (1/d) variance of the gradient entries."""
    g = np.asarray(g, dtype=np.float64)
    return NormalizationStats(float(np.mean(g)), float(np.var(g)))


def aggregate_stats(local_stats, weights, v_floor=V_FLOOR):
    if len(local_stats) == 0:
        raise EmptySelectionError("no clients selected: cannot aggregate statistics")
    w = check_weights(weights)
    if w.size != len(local_stats):
        raise InvalidInputError(f"{len(local_stats)} statistics vs {w.size} weights")
    means = np.array([s.mean if isinstance(s, NormalizationStats) else s[0] for s in local_stats], dtype=np.float64)
    variances = np.array([s.variance if isinstance(s, NormalizationStats) else s[1] for s in local_stats], dtype=np.float64)
    return NormalizationStats(float(w @ means), max(float(w @ variances), v_floor))


def normalize_gradient(g, global_stats):
    g = np.asarray(g, dtype=np.float64)
    return (g - global_stats.mean) / np.sqrt(max(global_stats.variance, V_FLOOR))


def _check_plan_inputs(channel, weights, h_floor):
    w = check_weights(weights)
    h = channel.coefficients
    if w.shape != h.shape:
        raise InvalidInputError(f"{h.size} channel coefficients vs {w.size} weights")
    if np.any(w <= 0):
        raise InvalidInputError("every scheduled client needs a strictly positive weight")
    weak = np.flatnonzero(np.abs(h) < h_floor)
    if weak.size:
        k = int(weak[0])
        raise ChannelDegenerateError(f"client {k}: |h| = {abs(h[k]):.3e} below floor {h_floor:g}", client=k)
    return w, h


def optimal_plan(channel, weights, h_floor=H_FLOOR):
    """Variance-minimizing unbiased transmit scalars and de-noising scalar.

    ``c = min_k sqrt(P0) |h_k| / lam_k`` and ``b_k = lam_k c / h_k``, so that
    ``h_k b_k / c = lam_k`` and the binding client transmits at full power.
    """
    w, h = _check_plan_inputs(channel, weights, h_floor)
    c = float(np.min(np.sqrt(channel.power_budget) * np.abs(h) / w))
    b = w * c / h
    return TransmitPlan(b=b, c=c)


def transmit_and_receive(symbols, plan, channel, rng, n_draws=None):
    """Superimpose the scaled symbols over the MAC and add complex noise.

    With ``n_draws`` set, returns ``n_draws`` independent receptions of the
    same transmission stacked along a leading axis.
    """
    s = np.asarray(symbols)
    if s.ndim == 1:
        s = s[None, :]
    if s.ndim != 2:
        raise InvalidInputError("symbols must be a list of equal-length vectors")
    if s.shape[0] != len(channel) or plan.b.size != len(channel):
        raise InvalidInputError(f"{s.shape[0]} symbol vectors, {plan.b.size} transmit scalars, {len(channel)} channels")
    d = s.shape[1]
    y = (channel.coefficients * plan.b) @ s
    shape = (d,) if n_draws is None else (n_draws, d)
    sigma = channel.noise_deviation
    if sigma > 0:
        y = y + _complex_noise(rng, shape, sigma)
    if channel.link_deviations is not None:
        for dev in channel.link_deviations:
            if dev > 0:
                y = y + _complex_noise(rng, shape, dev)
    return np.broadcast_to(y, shape).astype(np.complex128)


def _complex_noise(rng, shape, sigma):
    # total power sigma^2, split evenly between the real and imaginary axes
    parts = rng.standard_normal((2,) + shape) * (sigma / np.sqrt(2.0))
    return parts[0] + 1j * parts[1]


def decode(y, plan, global_stats, channel=None):
    """Invert the normalization: ``sqrt(v) * y / c + m``.

    When ``channel`` is given, the estimate carries the predicted error power
    ``d v sigma^2 / c^2``.
    """
    if not plan.c > 0:
        raise InvalidInputError(f"de-noising scalar must be positive, got {plan.c!r}")
    y = np.asarray(y, dtype=np.complex128)
    v = max(global_stats.variance, V_FLOOR)
    g_hat = np.sqrt(v) * y / plan.c + global_stats.mean
    predicted = 0.0
    if channel is not None:
        predicted = y.shape[-1] * v * channel.noise_variance / plan.c**2
    return AggregateEstimate(g_hat=g_hat, predicted_variance=predicted)


def predict_variance(d, global_stats, channel, weights, h_floor=H_FLOOR):
    """Estimation error power under the optimal plan:
    ``d v sigma^2 / P0 * max_k lam_k^2 / |h_k|^2``.
    """
    if d < 1:
        raise InvalidInputError(f"dimension must be positive, got {d!r}")
    w, h = _check_plan_inputs(channel, weights, h_floor)
    v = max(global_stats.variance, V_FLOOR)
    return d * v * channel.noise_variance / channel.power_budget * float(np.max(w**2 / np.abs(h) ** 2))


def draw_channel(rng, num_clients, fading="rayleigh", gains=None):
    """Sample channel coefficients for one round.

    ``rayleigh`` draws circularly-symmetric unit-variance complex Gaussians;
    ``fixed`` and ``per_client`` return the configured real ``gains`` (a
    scalar or one value per client), constant across rounds.
    """
    if fading == "rayleigh":
        parts = rng.standard_normal((2, num_clients)) / np.sqrt(2.0)
        return parts[0] + 1j * parts[1]
    if fading in ("fixed", "per_client"):
        g = np.broadcast_to(np.asarray(1.0 if gains is None else gains, dtype=np.float64), (num_clients,))
        return g.astype(np.complex128)
    raise InvalidInputError(f"unknown fading law {fading!r}")


NOISE_MODES = ("cycle", "per_link")
FADING_LAWS = ("rayleigh", "fixed", "per_client")
DEFAULT_NOISE_VALUES = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class ChannelConfig:
    """How channels and noise are generated across rounds.

    ``cycle`` uses one receiver noise deviation per round, taken round-robin
    from ``noise_values``; ``per_link`` gives client ``k`` the deviation
    ``noise_values[k % len]`` as independent noise on its own link.
    """

    power_budget: float = 1.0
    noise_mode: str = "cycle"
    noise_values: tuple = DEFAULT_NOISE_VALUES
    fading: str = "rayleigh"
    gains: tuple | float | None = None

    def __post_init__(self):
        if not self.power_budget > 0:
            raise InvalidInputError(f"power budget must be > 0, got {self.power_budget!r}")
        if self.noise_mode not in NOISE_MODES:
            raise InvalidInputError(f"unknown noise mode {self.noise_mode!r}")
        if self.fading not in FADING_LAWS:
            raise InvalidInputError(f"unknown fading law {self.fading!r}")
        if len(self.noise_values) == 0 or any(v < 0 for v in self.noise_values):
            raise InvalidInputError("noise_values must be a non-empty list of non-negative deviations")

    def realize(self, rng, round_index, num_clients):
        h = draw_channel(rng, num_clients, self.fading, self.gains)
        values = np.asarray(self.noise_values, dtype=np.float64)
        if self.noise_mode == "cycle":
            return ChannelRealization(h, float(values[round_index % values.size]), self.power_budget)
        links = values[np.arange(num_clients) % values.size]
        return ChannelRealization(h, 0.0, self.power_budget, links)
