"""Federated training engine: clients, models, scheduling and the round loop."""

from .client import (
    ALGORITHMS,
    FEDAVG,
    FFL,
    QFFL,
    TERM,
    AlgorithmSpec,
    ClientState,
    GradientReport,
    chain_factor,
    local_gradient,
    local_loss,
    transform_loss,
)
from .engine import GlobalModel, Streams, build_federation, evaluate, run_experiment, run_round
from .models import MLP, LinearRegression, LogisticRegression, build_model
from .scheduling import SchedulerSpec, feasible_clients, schedule, subset_energy
