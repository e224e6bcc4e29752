"""Shared domain types and the evaluation metrics.

Confidence is the probability of the predicted label. ECE bins predictions by
confidence into ``M`` equal intervals ``((m-1)/M, m/M]`` and averages the
per-bin gap between accuracy and mean confidence, weighted by bin size. TRC is
the share of faults found among the selected inputs, relative to the smaller
of the budget and the total fault count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from mucs import kernels

DEFAULT_BINS = 30

# raw sums within this band are renormalised, anything else is rejected
RENORM_LOW = 0.95
RENORM_HIGH = 1.05
# sums this close to one are kept bit-for-bit
SUM_EXACT_TOL = 1e-12


class ProbVectorError(ValueError):
    pass


class TRCUndefined(ValueError):
    pass


@dataclass(frozen=True)
class ProbVector:
    """A normalised class-probability distribution for one prediction."""

    probs: tuple
    class_names: tuple = ()

    def __post_init__(self):
        raw = np.asarray(self.probs, dtype=np.float64).ravel()
        if raw.size < 2:
            raise ProbVectorError(f"need at least 2 classes, got {raw.size}")
        if not np.all(np.isfinite(raw)) or np.any(raw < 0.0) or np.any(raw > 1.0 + 1e-9):
            raise ProbVectorError(f"entries must lie in [0, 1]: {raw.tolist()}")
        raw = np.minimum(raw, 1.0)
        total = float(raw.sum())
        if not RENORM_LOW <= total <= RENORM_HIGH:
            raise ProbVectorError(f"probabilities sum to {total:.6f}, outside [{RENORM_LOW}, {RENORM_HIGH}]")
        if abs(total - 1.0) > SUM_EXACT_TOL:
            raw = raw / total
        names = tuple(self.class_names) if self.class_names else tuple(str(i) for i in range(raw.size))
        if len(names) != raw.size:
            raise ProbVectorError(f"{len(names)} class names for {raw.size} probabilities")
        object.__setattr__(self, "probs", tuple(float(x) for x in raw))
        object.__setattr__(self, "class_names", names)

    @property
    def n_classes(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. the lowest class id
        return int(np.argmax(self.as_array()))

    def to_list(self) -> list:
        return list(self.probs)


@dataclass(frozen=True)
class TestItem:
    id: str
    prompt: str
    kind: str = "text"
    true_label: Optional[int] = None
    embedding: Optional[tuple] = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.kind not in ("text", "code"):
            raise ValueError(f"item {self.id}: kind must be 'text' or 'code', got {self.kind!r}")


@dataclass(frozen=True)
class PredictionRecord:
    item_id: str
    probs: ProbVector
    source: str = "original"
    true_label: Optional[int] = None

    @property
    def predicted(self) -> int:
        return self.probs.argmax()

    @property
    def is_fault(self) -> Optional[bool]:
        if self.true_label is None:
            return None
        return self.predicted != self.true_label

    @property
    def confidence(self) -> float:
        return confidence(self.probs)


@dataclass(frozen=True)
class Budget:
    """A labeling budget given either as a fraction of the test set or a count."""

    fraction: Optional[float] = None
    count: Optional[int] = None

    def __post_init__(self):
        if (self.fraction is None) == (self.count is None):
            raise ValueError("exactly one of fraction or count must be given")
        if self.fraction is not None and not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"budget fraction must be in (0, 1], got {self.fraction}")
        if self.count is not None and self.count < 1:
            raise ValueError(f"budget count must be positive, got {self.count}")

    def resolve(self, n_items: int) -> int:
        if self.count is not None:
            return min(self.count, n_items)
        # rounding guard: 0.1 * 150 is 15.000000000000002 in binary floating point
        return min(math.ceil(round(self.fraction * n_items, 9)), n_items)

    @property
    def label(self) -> str:
        if self.count is not None:
            return str(self.count)
        return f"{round(self.fraction * 100, 6):g}%"


@dataclass
class CalibrationBins:
    m_intervals: int
    counts: list
    accuracy: list
    avg_confidence: list

    def ece(self) -> float:
        n = sum(self.counts)
        if n == 0:
            raise ValueError("no labeled records")
        total = 0.0
        for c, acc, conf in zip(self.counts, self.accuracy, self.avg_confidence):
            if c:
                total += (c / n) * abs(acc - conf)
        return total


@dataclass(frozen=True)
class Ranking:
    """A total order over item ids, most fault-suspicious first.

    ``scores`` follow ``ids``. When ``descending`` is true, scores are
    non-increasing along the order; otherwise non-decreasing. Selection-style
    methods (random, MCP, ATS) store a priority ``n - position``.
    """

    ids: tuple
    scores: tuple
    method: str
    descending: bool = True
    tie_break: str = "input-order"

    def top(self, budget_count: int) -> list:
        return list(self.ids[:budget_count])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "ids": list(self.ids),
            "scores": [float(s) for s in self.scores],
            "descending": self.descending,
            "tie_break": self.tie_break,
        }


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def confidence(p: ProbVector) -> float:
    return max(p.probs)


def _confidences(records) -> np.ndarray:
    return np.asarray([confidence(r.probs) for r in records], dtype=np.float64)


def calibration_bins(records: Sequence[PredictionRecord], m: int = DEFAULT_BINS) -> CalibrationBins:
    if m < 1:
        raise ValueError(f"number of intervals must be positive, got {m}")
    records = list(records)
    if not records:
        raise ValueError("no labeled records")
    if any(r.is_fault is None for r in records):
        raise ValueError("no labeled records: every record needs a true label for ECE")
    conf = _confidences(records)
    correct = np.asarray([not r.is_fault for r in records], dtype=np.float64)
    idx = kernels.bin_index(np.ascontiguousarray(conf), m)
    counts = np.bincount(idx, minlength=m)
    acc_sum = np.bincount(idx, weights=correct, minlength=m)
    conf_sum = np.bincount(idx, weights=conf, minlength=m)
    safe = np.maximum(counts, 1)
    return CalibrationBins(
        m_intervals=m,
        counts=[int(c) for c in counts],
        accuracy=[float(a) if c else 0.0 for a, c in zip(acc_sum / safe, counts)],
        avg_confidence=[float(a) if c else 0.0 for a, c in zip(conf_sum / safe, counts)],
    )


def ece(records: Sequence[PredictionRecord], m: int = DEFAULT_BINS) -> float:
    return calibration_bins(records, m).ece()


def trc(selected_ids: Iterable[str], records: Sequence[PredictionRecord], budget_count: int) -> float:
    """Test relative coverage of ``selected_ids`` over labeled ``records``."""
    selected = list(selected_ids)
    if len(selected) > budget_count:
        raise ValueError(f"{len(selected)} items selected with budget {budget_count}")
    if any(r.is_fault is None for r in records):
        raise ValueError("TRC needs a true label on every record")
    faults = {r.item_id for r in records if r.is_fault}
    if not faults:
        raise TRCUndefined("TRC undefined: no faults")
    unknown = set(selected) - {r.item_id for r in records}
    if unknown:
        raise ValueError(f"selected ids not in record set: {sorted(unknown)[:5]}")
    found = len(set(selected) & faults)
    return found / min(budget_count, len(faults))


def confidence_histogram(records: Sequence[PredictionRecord], m: int = DEFAULT_BINS) -> list:
    if m < 1:
        raise ValueError(f"number of intervals must be positive, got {m}")
    conf = _confidences(records)
    if conf.size == 0:
        return [0] * m
    idx = kernels.bin_index(np.ascontiguousarray(conf), m)
    return [int(c) for c in np.bincount(idx, minlength=m)]


def histogram_diversity(counts: Sequence[float]) -> float:
    """Population variance of histogram counts; lower means a wider spread."""
    arr = np.asarray(counts, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty histogram")
    return float(arr.var())


def accuracy(records: Sequence[PredictionRecord]) -> float:
    labeled = [r for r in records if r.is_fault is not None]
    if not labeled:
        raise ValueError("no labeled records")
    return sum(1 for r in labeled if not r.is_fault) / len(labeled)


@dataclass
class CalibrationSummary:
    avg_confidence: float
    ece: float
    histogram: list = field(default_factory=list)
    diversity: float = 0.0

    def to_dict(self) -> dict:
        return {
            "avg_confidence": self.avg_confidence,
            "ece": self.ece,
            "histogram": list(self.histogram),
            "diversity": self.diversity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSummary":
        return cls(d["avg_confidence"], d["ece"], list(d["histogram"]), d["diversity"])


def summarize_calibration(records: Sequence[PredictionRecord], m: int = DEFAULT_BINS) -> CalibrationSummary:
    hist = confidence_histogram(records, m)
    return CalibrationSummary(
        avg_confidence=float(_confidences(records).mean()),
        ece=ece(records, m),
        histogram=hist,
        diversity=histogram_diversity(hist),
    )
