import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otaffl.errors import InvalidInputError
from otaffl.metrics import (
    RoundRecord,
    accuracy_histogram,
    emit_reports,
    fairness_std,
    percentile_means,
    rounds_header,
    summarize,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def record(t, K=3, weights=None):
    w = np.full(K, 1 / K) if weights is None else np.asarray(weights)
    return RoundRecord(
        round=t,
        losses=np.linspace(0.1, 1.0, K) * (t + 1),
        weights=w,
        selected=np.array([0, K - 1]),
        used_weights=w,
        c=0.5 + t,
        noise_deviation=0.1,
        predicted_variance=0.01 * (t + 1),
        realized_error=0.02 / 3,
    )


class TestFairnessStd:
    @pytest.mark.parametrize("values, expected", [([1, 1, 1], 0.0), ([0, 2], 1.0), ([1, 2, 3, 4], math.sqrt(1.25))])
    def test_examples(self, values, expected):
        assert fairness_std(values) == pytest.approx(expected, abs=1e-15)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            fairness_std([])

    @given(arrays(np.float64, st.integers(1, 30), elements=finite), finite, finite)
    def test_affine_law(self, x, a, b):
        lhs = fairness_std(a * x + b)
        rhs = abs(a) * fairness_std(x)
        assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(a) * np.abs(x).max() + abs(b)) * 10)


class TestPercentileMeans:
    def test_singleton_tails(self):
        assert percentile_means(np.arange(1, 11) / 10, 0.1) == pytest.approx((0.1, 1.0))

    def test_ceil_rule(self):
        assert percentile_means([0.3, 0.1, 0.5, 0.2, 0.4], 0.1) == (0.1, 0.5)
        # ceil(0.25 * 10) = 3 per tail
        assert percentile_means(np.arange(10.0), 0.25) == (1.0, 8.0)

    def test_uniform(self):
        w, b = percentile_means([0.7] * 6, 0.1)
        assert w == b == 0.7

    @given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1)))
    def test_fraction_one_gives_mean(self, x):
        w, b = percentile_means(x, 1.0)
        assert w == pytest.approx(x.mean()) and b == pytest.approx(x.mean())

    @given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1)), st.floats(0.01, 1))
    def test_ordering(self, x, frac):
        w, b = percentile_means(x, frac)
        assert x.min() - 1e-12 <= w <= x.mean() + 1e-12 <= b + 2e-12 <= x.max() + 3e-12

    @pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
    def test_fraction_range(self, frac):
        with pytest.raises(InvalidInputError):
            percentile_means([1.0], frac)


class TestSummaryAndHistogram:
    def test_summarize(self):
        s = summarize([0.5, 1.0], loss_std=0.3)
        assert (s.mean_acc, s.std_acc, s.worst10, s.best10) == (0.75, 0.25, 0.5, 1.0)
        assert s.to_dict()["loss_std"] == 0.3

    def test_histogram_single_bin(self):
        edges, counts = accuracy_histogram([0.50, 0.505, 0.519])
        assert counts.sum() == 3 and np.count_nonzero(counts) == 1
        i = int(np.flatnonzero(counts)[0])
        assert edges[i] == pytest.approx(0.50) and edges[i + 1] == pytest.approx(0.52)

    def test_histogram_covers_unit_interval(self):
        edges, counts = accuracy_histogram([0.0, 1.0, 0.999])
        assert edges.size == 51 and counts[0] == 1 and counts[-1] == 2


class TestEmitReports:
    def test_empty_records_header_only(self, tmp_path):
        emit_reports([], summarize([0.5]), tmp_path, num_clients=2)
        lines = (tmp_path / "rounds.csv").read_text().splitlines()
        assert lines == [",".join(rounds_header(2))]

    def test_files_and_columns(self, tmp_path):
        recs = [record(0), record(1)]
        emit_reports(recs, summarize([0.5, 0.51, 0.515]), tmp_path, config={"a": 1}, seed=7)
        rows = list(csv.DictReader(open(tmp_path / "rounds.csv")))
        assert len(rows) == 2 and rows[1]["selected_bitmask"] == "101"
        assert float(rows[1]["c_t"]) == 1.5 and float(rows[0]["realized_err"]) == 0.02 / 3
        doc = json.load(open(tmp_path / "summary.json"))
        for key in ("mean_acc", "std_acc", "worst10", "best10", "worst5", "best5", "config", "seed"):
            assert key in doc
        assert doc["seed"] == 7 and doc["config"] == {"a": 1} and doc["std_convention"] == "population"
        hist = list(csv.DictReader(open(tmp_path / "histogram.csv")))
        assert [h for h in hist if int(h["count"])] == [{"bin_lo": "0.50", "bin_hi": "0.52", "count": "3"}]

    def test_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            emit_reports([record(0), record(1)], summarize([0.2, 0.9]), tmp_path / sub, config={}, seed=1)
        for name in ("rounds.csv", "summary.json", "histogram.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_guard_rejects_infeasible_weights(self, tmp_path):
        with pytest.raises(InvalidInputError):
            emit_reports([record(0, weights=[0.5, 0.5, 0.5])], summarize([0.5]), tmp_path)

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            emit_reports([], summarize([0.5]), blocker / "sub")
