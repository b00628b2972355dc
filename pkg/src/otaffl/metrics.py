"""Fairness metrics, per-round records and report files."""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .moo import check_weights

HIST_BIN_WIDTH = 0.02


@dataclass
class RoundRecord:
    """Everything logged about one communication round.

    ``weights`` is the server's weight vector for the round before
    scheduling; ``used_weights`` is the same vector renormalized over
    ``selected`` (zero elsewhere), which is what the codec used.
    """

    round: int
    losses: np.ndarray
    weights: np.ndarray
    selected: np.ndarray
    used_weights: np.ndarray
    c: float
    noise_deviation: float
    predicted_variance: float
    realized_error: float
    elapsed_ms: float = 0.0

    @property
    def num_clients(self):
        return len(self.losses)

    def selected_mask(self):
        mask = ["0"] * self.num_clients
        for k in self.selected:
            mask[int(k)] = "1"
        return "".join(mask)


@dataclass
class EvalSummary:
    accuracies: np.ndarray
    mean_acc: float
    std_acc: float
    worst10: float
    best10: float
    worst5: float
    best5: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "mean_acc": self.mean_acc,
            "std_acc": self.std_acc,
            "worst10": self.worst10,
            "best10": self.best10,
            "worst5": self.worst5,
            "best5": self.best5,
            "accuracies": [float(a) for a in self.accuracies],
        }
        out.update(self.extra)
        return out


def fairness_std(values):
    """Population standard deviation (divides by K)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("fairness_std of an empty vector")
    return float(np.std(x))


def percentile_means(values, fraction):
    """Means of the lowest and highest ``ceil(fraction * K)`` entries."""
    if not 0 < fraction <= 1:
        raise InvalidInputError(f"fraction must lie in (0, 1], got {fraction!r}")
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise InvalidInputError("percentile_means of an empty vector")
    n = max(1, math.ceil(fraction * x.size - 1e-12))
    return float(x[:n].mean()), float(x[-n:].mean())


def summarize(accuracies, **extra):
    acc = np.asarray(accuracies, dtype=np.float64)
    w10, b10 = percentile_means(acc, 0.1)
    w5, b5 = percentile_means(acc, 0.05)
    return EvalSummary(acc, float(acc.mean()), fairness_std(acc), w10, b10, w5, b5, dict(extra))


def accuracy_histogram(accuracies, width=HIST_BIN_WIDTH):
    """Counts over equal-width bins covering [0, 1]; the last bin is closed."""
    nbins = int(round(1.0 / width))
    edges = np.linspace(0.0, 1.0, nbins + 1)
    acc = np.asarray(accuracies, dtype=np.float64)
    acc = acc[np.isfinite(acc)]
    counts, _ = np.histogram(acc, bins=edges)
    return edges, counts


def _fmt(x):
    return repr(float(x))


def rounds_header(K):
    return (
        ["round"]
        + [f"loss_client_{k}" for k in range(K)]
        + [f"lambda_{k}" for k in range(K)]
        + ["selected_bitmask", "c_t", "predicted_var", "realized_err", "elapsed_ms"]
    )


def _check_record(rec):
    check_weights(rec.weights)
    if len(rec.weights) != rec.num_clients:
        raise InvalidInputError(f"round {rec.round}: {len(rec.weights)} weights for {rec.num_clients} clients")


def write_rounds_csv(records, path, num_clients=None):
    K = num_clients if num_clients is not None else (records[0].num_clients if records else 0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rounds_header(K))
        for rec in records:
            _check_record(rec)
            writer.writerow(
                [rec.round]
                + [_fmt(v) for v in rec.losses]
                + [_fmt(v) for v in rec.weights]
                + [rec.selected_mask(), _fmt(rec.c), _fmt(rec.predicted_variance),
                   _fmt(rec.realized_error), _fmt(rec.elapsed_ms)]
            )


def emit_reports(records, summary, out_dir, config=None, seed=None, num_clients=None):
    """Write ``rounds.csv``, ``summary.json`` and ``histogram.csv`` to ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, name) for name in ("rounds.csv", "summary.json", "histogram.csv")}
        write_rounds_csv(records, paths["rounds.csv"], num_clients)

        doc = summary.to_dict() if summary is not None else {}
        doc.update({"std_convention": "population", "config": config, "seed": seed})
        with open(paths["summary.json"], "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")

        accs = summary.accuracies if summary is not None else []
        edges, counts = accuracy_histogram(accs)
        with open(paths["histogram.csv"], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, n in zip(edges[:-1], edges[1:], counts):
                writer.writerow([f"{lo:.2f}", f"{hi:.2f}", int(n)])
    except OSError as exc:
        raise OSError(f"writing reports to {out_dir}: {exc}") from exc
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
