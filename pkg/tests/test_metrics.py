import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mucs.metrics import (
    Budget,
    PredictionRecord,
    ProbVector,
    ProbVectorError,
    TRCUndefined,
    calibration_bins,
    confidence,
    confidence_histogram,
    ece,
    histogram_diversity,
    summarize_calibration,
    trc,
)


def rec(i, probs, label):
    return PredictionRecord(f"r{i}", ProbVector(probs), true_label=label)


# --- ProbVector -----------------------------------------------------------

def test_probvector_keeps_normalised_input_exactly():
    p = ProbVector([0.1, 0.2, 0.7])
    assert p.probs == (0.1, 0.2, 0.7)
    assert p.class_names == ("0", "1", "2")


def test_probvector_renormalises_preserving_ratio():
    p = ProbVector([0.49, 0.49])
    assert sum(p.probs) == pytest.approx(1.0, abs=1e-6)
    assert p.probs[0] == p.probs[1]


def test_probvector_renormalises_sum_1_02():
    p = ProbVector([0.1, 0.2, 0.72])
    assert sum(p.probs) == pytest.approx(1.0, abs=1e-6)
    assert p.probs[2] / p.probs[0] == pytest.approx(7.2)


@pytest.mark.parametrize("bad", [[0.5], [0.5, 0.6], [0.3, 0.3], [-0.1, 1.1], [float("nan"), 1.0]])
def test_probvector_rejects(bad):
    with pytest.raises(ProbVectorError):
        ProbVector(bad)


def test_probvector_argmax_tie_goes_to_lowest_id():
    assert ProbVector([0.4, 0.4, 0.2]).argmax() == 0
    assert ProbVector([0.2, 0.4, 0.4]).argmax() == 1


# --- confidence -------------------------------------------------------------

@pytest.mark.parametrize("probs,want", [([0.5, 0.5], 0.5), ([0.7, 0.2, 0.1], 0.7), ([1.0, 0.0], 1.0)])
def test_confidence(probs, want):
    assert confidence(ProbVector(probs)) == want


@settings(max_examples=200)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_confidence_at_least_one_over_c(c, seed):
    p = ProbVector(np.random.default_rng(seed).dirichlet(np.ones(c)))
    assert confidence(p) >= 1.0 / c - 1e-15


# --- ECE --------------------------------------------------------------------

def test_ece_single_bin():
    records = [rec(i, [0.9, 0.1], 0 if i < 6 else 1) for i in range(10)]
    assert ece(records) == pytest.approx(0.3, abs=1e-12)


def test_ece_two_bins():
    # bin of conf 0.5 with 2/5 correct, bin of conf 0.9 with 5/5 correct
    low = [rec(i, [0.5, 0.5], 0 if i < 2 else 1) for i in range(5)]
    high = [rec(5 + i, [0.9, 0.1], 0) for i in range(5)]
    assert ece(low + high) == pytest.approx(0.10, abs=1e-12)


def test_ece_perfect_calibration_is_zero():
    records = [rec(i, [0.0, 1.0, 0.0], 1) for i in range(7)]
    assert ece(records) == 0.0


def test_ece_empty_raises():
    with pytest.raises(ValueError, match="no labeled records"):
        ece([])
    with pytest.raises(ValueError, match="no labeled records"):
        ece([PredictionRecord("a", ProbVector([0.5, 0.5]))])


def test_ece_bins_use_right_closed_intervals():
    # 0.5 lies in (14/30, 15/30], i.e. bin 15; 0.5 + tiny goes to bin 16
    bins = calibration_bins([rec(0, [0.5, 0.5], 0), rec(1, [0.5 + 1e-6, 0.5 - 1e-6], 0)], 30)
    assert bins.counts[14] == 1 and bins.counts[15] == 1


@settings(max_examples=100)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_ece_single_bin_equals_accuracy_gap(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    records = [rec(i, [0.8, 0.2], int(labels[i])) for i in range(n)]
    acc = float(np.mean(labels == 0))
    assert ece(records) == pytest.approx(abs(acc - 0.8), abs=1e-12)


# --- TRC --------------------------------------------------------------------

def _fault_set(n_faults, n_items=150):
    # labels 1 for faults (predicted 0), 0 otherwise
    return [rec(i, [0.8, 0.2], 1 if i < n_faults else 0) for i in range(n_items)]


def test_trc_table_anchor():
    records = _fault_set(16)
    budget = Budget(fraction=0.10).resolve(150)
    assert budget == 15
    selected = ["r0", "r1"] + [f"r{i}" for i in range(100, 113)]
    assert trc(selected, records, budget) == pytest.approx(0.1333, abs=1e-4)
    assert trc(selected, records, budget) == 2 / 15


def test_trc_perfect_and_zero():
    records = _fault_set(5, 20)
    assert trc([f"r{i}" for i in range(8)], records, 8) == 1.0
    assert trc([f"r{i}" for i in range(10, 18)], records, 8) == 0.0


def test_trc_no_faults():
    with pytest.raises(TRCUndefined, match="no faults"):
        trc(["r0"], _fault_set(0, 5), 1)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_trc_matches_brute_force_and_is_order_free(seed):
    rng = np.random.default_rng(seed)
    n = 20
    labels = rng.integers(0, 2, n)
    labels[rng.integers(n)] = 1  # at least one fault
    records = [rec(i, [0.9, 0.1], int(labels[i])) for i in range(n)]
    b = int(rng.integers(1, n + 1))
    selected = [f"r{i}" for i in rng.permutation(n)[:b]]
    found = sum(1 for s in selected if labels[int(s[1:])] == 1)
    want = found / min(b, int(labels.sum()))
    assert trc(selected, records, b) == want
    assert trc(list(reversed(selected)), records, b) == want


# --- histogram / diversity --------------------------------------------------

def test_histogram_hand_cases():
    r = [rec(0, [0.5, 0.5], 0), rec(1, [0.5, 0.5], 0), rec(2, [1.0, 0.0], 0)]
    assert confidence_histogram(r, 2) == [2, 1]
    assert confidence_histogram([], 4) == [0, 0, 0, 0]


def test_histogram_one_per_bin():
    # one confidence at the midpoint of every interval
    records = []
    for m in range(1, 31):
        c = (m - 0.5) / 30
        if c >= 0.5:
            p = [c, 1 - c]
        else:
            # spread the remainder over enough classes that c stays the maximum
            k = math.ceil((1 - c) / c) + 1
            rest = (1 - c) / k
            p = [c] + [rest] * k
        records.append(PredictionRecord(f"r{m}", ProbVector(p), true_label=0))
    assert confidence_histogram(records, 30) == [1] * 30


def test_diversity():
    assert histogram_diversity([5, 5, 5, 5]) == 0.0
    assert histogram_diversity([0, 0, 0, 12]) == 27.0


@settings(max_examples=200)
@given(st.integers(0, 60), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_histogram_sums_to_n(n, m, seed):
    rng = np.random.default_rng(seed)
    records = [rec(i, rng.dirichlet(np.ones(3)), 0) for i in range(n)]
    assert sum(confidence_histogram(records, m)) == n


def test_summary_round_trip():
    records = [rec(i, [0.9, 0.1], i % 2) for i in range(10)]
    s = summarize_calibration(records)
    assert s.avg_confidence == pytest.approx(0.9)
    assert type(s).from_dict(s.to_dict()) == s


# --- budgets ----------------------------------------------------------------

@pytest.mark.parametrize("frac,n,want", [(0.1, 150, 15), (0.3, 150, 45), (0.5, 150, 75), (0.1, 200, 20),
                                         (0.1, 15, 2), (1.0, 7, 7)])
def test_budget_resolve(frac, n, want):
    assert Budget(fraction=frac).resolve(n) == want


def test_budget_label():
    assert Budget(fraction=0.1).label == "10%"
    assert Budget(count=15).label == "15"
