"""Client-side state, local objectives and local training."""

from dataclasses import dataclass

import numpy as np

from ..datasets import LabeledDataset
from ..errors import InvalidInputError, NumericFailureError
from ..ota import NormalizationStats, gradient_stats

FFL = "OTA-FFL"
FEDAVG = "OTA-FedAvg"
TERM = "OTA-TERM"
QFFL = "OTA-q-FFL"
ALGORITHMS = (FFL, FEDAVG, TERM, QFFL)


@dataclass(frozen=True)
class AlgorithmSpec:
    """Which aggregation rule a run uses, with its per-kind parameters.

    ``epsilon``/``zeta`` belong to OTA-FFL only, ``gamma`` to the two
    loss-tilting baselines and ``q_base`` to OTA-q-FFL.
    """

    kind: str
    epsilon: float | None = None
    zeta: float | tuple | None = None
    gamma: float | None = None
    q_base: float | None = None

    def __post_init__(self):
        if self.kind not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.kind!r}; expected one of {ALGORITHMS}")
        if self.kind == FFL:
            if self.epsilon is None:
                raise InvalidInputError("OTA-FFL requires epsilon")
            if not 0.0 <= self.epsilon <= 1.0:
                raise InvalidInputError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")
        elif self.epsilon is not None or self.zeta is not None:
            raise InvalidInputError(f"epsilon/zeta only apply to {FFL}, not {self.kind}")
        if self.kind in (TERM, QFFL):
            if self.gamma is None:
                raise InvalidInputError(f"{self.kind} requires gamma")
        elif self.gamma is not None:
            raise InvalidInputError(f"gamma does not apply to {self.kind}")
        if self.kind == QFFL:
            if self.q_base is None or not self.q_base > 0:
                raise InvalidInputError(f"q_base must be > 0, got {self.q_base!r}")
        elif self.q_base is not None:
            raise InvalidInputError(f"q_base does not apply to {self.kind}")


def transform_loss(spec, raw_loss):
    """Loss each client reports and optimizes under ``spec``."""
    if spec.kind == TERM:
        return float(np.exp(spec.gamma * raw_loss))
    if spec.kind == QFFL:
        if not spec.q_base > 0:
            raise InvalidInputError(f"q_base must be > 0, got {spec.q_base!r}")
        return float(np.exp(spec.gamma * raw_loss * np.log(spec.q_base)))
    return float(raw_loss)


def chain_factor(spec, raw_loss):
    """Derivative of :func:`transform_loss` with respect to the raw loss."""
    if spec.kind == TERM:
        return spec.gamma * float(np.exp(spec.gamma * raw_loss))
    if spec.kind == QFFL:
        log_q = np.log(spec.q_base)
        return spec.gamma * log_q * float(np.exp(spec.gamma * raw_loss * log_q))
    return 1.0


@dataclass
class ClientState:
    """One client: its local data and local-training hyper-parameters.

    ``batch_size=None`` means full-batch; ``local_steps`` counts epochs.
    """

    client_id: int
    dataset: LabeledDataset
    model: object
    local_lr: float = 0.1
    local_steps: int = 1
    batch_size: int | None = None

    def __post_init__(self):
        if len(self.dataset) < 1:
            raise InvalidInputError(f"client {self.client_id} has an empty dataset")
        if not self.local_lr > 0 or self.local_steps < 1:
            raise InvalidInputError("local_lr must be > 0 and local_steps >= 1")

    @property
    def full_batch(self):
        return self.batch_size is None or self.batch_size >= len(self.dataset)


@dataclass(frozen=True)
class GradientReport:
    gradient: np.ndarray
    loss: float
    stats: NormalizationStats


def local_loss(client, theta):
    """Mean loss of ``theta`` over the client's whole local dataset."""
    return client.model.loss(theta, client.dataset.features, client.dataset.labels)


def local_gradient(client, theta, rng=None, algo=None):
    """Local first-order information sent for aggregation.

    One full-batch epoch returns the exact gradient at ``theta``; otherwise the
    pseudo-gradient ``(theta - theta_local) / local_lr`` after ``local_steps``
    epochs of mini-batch descent on shuffled data. Under a loss-tilting
    ``algo`` the result is scaled by the chain factor at ``theta`` and the
    reported loss is the tilted one.
    """
    model, data = client.model, client.dataset
    theta = model.check(theta)
    raw_loss, grad = model.loss_and_grad(theta, data.features, data.labels)

    if not (client.local_steps == 1 and client.full_batch):
        if rng is None:
            rng = np.random.default_rng([client.client_id])
        local = theta.copy()
        n = len(data)
        bs = n if client.full_batch else client.batch_size
        for _ in range(client.local_steps):
            order = np.arange(n) if client.full_batch else rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                local -= client.local_lr * model.grad(local, data.features[idx], data.labels[idx])
        grad = (theta - local) / client.local_lr

    loss = raw_loss
    if algo is not None and algo.kind in (TERM, QFFL):
        loss = transform_loss(algo, raw_loss)
        grad = chain_factor(algo, raw_loss) * grad
    if not np.all(np.isfinite(grad)):
        raise NumericFailureError(f"client {client.client_id}: non-finite local gradient")
    return GradientReport(gradient=grad, loss=loss, stats=gradient_stats(grad))
