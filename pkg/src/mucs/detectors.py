"""Fault-detection rankings over output probabilities.

Each ranking function takes a list of :class:`PredictionRecord` (plus
embeddings, labeled training records or mutant predictions where a method
needs them) and returns a :class:`Ranking` with the most fault-suspicious
input first. Ties are always broken by input order so that every ranking is a
pure function of its inputs.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from mucs import kernels
from mucs.metrics import PredictionRecord, ProbVector, Ranking

log = logging.getLogger(__name__)

METHODS = ("random", "maxp", "gini", "entropy", "margin", "mcp", "nns", "ats", "testrank_lite", "bald")

DISPLAY_NAMES = {
    "random": "Random",
    "gini": "Gini",
    "entropy": "Entropy",
    "mcp": "MCP",
    "maxp": "MaxP",
    "margin": "Margin",
    "ats": "ATS",
    "nns": "NNS",
    "testrank_lite": "TestRank",
    "bald": "BALD",
}


class PrerequisiteError(ValueError):
    """A detector cannot run on the given inputs (e.g. ATS on two classes)."""


@dataclass(frozen=True)
class DetectorConfig:
    method: str = "gini"
    seed: int = 0
    nns_k: int = 5
    testrank_k: int = 10
    testrank_epochs: int = 200
    testrank_learning_rate: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if self.nns_k < 1 or self.testrank_k < 1:
            raise ValueError("neighbour counts must be positive")
        if self.testrank_epochs < 0 or self.testrank_learning_rate < 0:
            raise ValueError("testrank epochs and learning rate must be non-negative")


@dataclass(frozen=True)
class MutantPredictionSet:
    item_id: str
    mutant_probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "mutant_probs", tuple(self.mutant_probs))
        sizes = {p.n_classes for p in self.mutant_probs}
        if len(sizes) > 1:
            raise ValueError(f"item {self.item_id}: mutant vectors disagree on class count {sorted(sizes)}")

    @property
    def mutant_labels(self) -> tuple:
        return tuple(p.argmax() for p in self.mutant_probs)

    @property
    def n_mutants(self) -> int:
        return len(self.mutant_probs)


# --------------------------------------------------------------------------
# per-vector uncertainty scores
# --------------------------------------------------------------------------

def score_gini(p: ProbVector) -> float:
    a = p.as_array()
    return float(1.0 - np.dot(a, a))


def score_entropy(p: ProbVector) -> float:
    a = p.as_array()
    nz = a[a > 0.0]
    return float(-(nz * np.log(nz)).sum())


def score_maxp(p: ProbVector) -> float:
    return max(p.probs)


def score_margin(p: ProbVector) -> float:
    top = sorted(p.probs, reverse=True)
    return top[0] - top[1]


def score_bald(m: MutantPredictionSet) -> float:
    if m.n_mutants < 1:
        raise ValueError(f"item {m.item_id}: no mutant predictions")
    counts = Counter(m.mutant_labels)
    return 1.0 - max(counts.values()) / m.n_mutants


def _rank_by_scores(ids: Sequence[str], scores, method: str, descending: bool) -> Ranking:
    scores = np.asarray(scores, dtype=np.float64)
    key = -scores if descending else scores
    order = np.lexsort((np.arange(len(ids)), key))
    return Ranking(
        ids=tuple(ids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
        method=method,
        descending=descending,
    )


def _selection_ranking(ids: Sequence[str], order, method: str, tie_break: str) -> Ranking:
    n = len(order)
    return Ranking(
        ids=tuple(ids[i] for i in order),
        scores=tuple(float(n - k) for k in range(n)),
        method=method,
        descending=True,
        tie_break=tie_break,
    )


def rank_gini(records: Sequence[PredictionRecord]) -> Ranking:
    return _rank_by_scores([r.item_id for r in records], [score_gini(r.probs) for r in records], "gini", True)


def rank_entropy(records: Sequence[PredictionRecord]) -> Ranking:
    # highest entropy first, in line with the other uncertainty scores
    return _rank_by_scores([r.item_id for r in records], [score_entropy(r.probs) for r in records], "entropy", True)


def rank_maxp(records: Sequence[PredictionRecord]) -> Ranking:
    return _rank_by_scores([r.item_id for r in records], [score_maxp(r.probs) for r in records], "maxp", False)


def rank_margin(records: Sequence[PredictionRecord]) -> Ranking:
    return _rank_by_scores([r.item_id for r in records], [score_margin(r.probs) for r in records], "margin", False)


def rank_bald(mutant_sets: Sequence[MutantPredictionSet]) -> Ranking:
    """Rank by mutant disagreement, highest first."""
    ids = [m.item_id for m in mutant_sets]
    if not mutant_sets:
        return Ranking((), (), "bald")
    if any(m.n_mutants == 0 for m in mutant_sets):
        missing = [m.item_id for m in mutant_sets if m.n_mutants == 0]
        raise PrerequisiteError(f"bald needs mutant predictions; none for {missing[:5]}")
    width = max(m.n_mutants for m in mutant_sets)
    n_classes = mutant_sets[0].mutant_probs[0].n_classes
    labels = np.full((len(mutant_sets), width), -1, dtype=np.int64)
    for i, m in enumerate(mutant_sets):
        labels[i, : m.n_mutants] = m.mutant_labels
    _, counts, totals = kernels.mode_counts(labels, n_classes)
    scores = 1.0 - counts / totals
    return _rank_by_scores(ids, scores, "bald", True)


# --------------------------------------------------------------------------
# MCP
# --------------------------------------------------------------------------

def _top_two(p: ProbVector):
    order = np.argsort(-p.as_array(), kind="stable")
    return int(order[0]), int(order[1])


def select_mcp(records: Sequence[PredictionRecord], budget_count: Optional[int] = None) -> Ranking:
    """Multiple-boundary clustering and prioritisation.

    Records are grouped by their (top-1, top-2) class pair. Inside a group the
    ratio p_top1 / p_top2 is sorted ascending, so inputs closest to the
    boundary come first. Groups are then drained round-robin: round ``r``
    takes the ``r``-th entry of every group that still has one, ordered by
    that entry's ratio. The full round-robin order is returned; its first
    ``budget_count`` entries are the budgeted selection.
    """
    n = len(records)
    ratios = np.empty(n)
    clusters = []
    for i, r in enumerate(records):
        a, b = _top_two(r.probs)
        pa, pb = r.probs.probs[a], r.probs.probs[b]
        ratios[i] = pa / pb if pb > 0 else np.inf
        clusters.append((a, b))

    by_cluster = {}
    for i in range(n):
        by_cluster.setdefault(clusters[i], []).append(i)
    depth = np.empty(n, dtype=np.int64)
    for members in by_cluster.values():
        members.sort(key=lambda i: (ratios[i], i))
        for d, i in enumerate(members):
            depth[i] = d

    order = sorted(range(n), key=lambda i: (depth[i], ratios[i], clusters[i], i))
    return _selection_ranking([r.item_id for r in records], order, "mcp", "cluster-round-robin")


# --------------------------------------------------------------------------
# NNS
# --------------------------------------------------------------------------

def _embedding_matrix(ids: Sequence[str], embeddings: Mapping[str, np.ndarray]) -> np.ndarray:
    rows = []
    dim = None
    for item_id in ids:
        if item_id not in embeddings or embeddings[item_id] is None:
            raise PrerequisiteError(f"missing embedding for item {item_id}")
        v = np.asarray(embeddings[item_id], dtype=np.float64).ravel()
        if dim is None:
            dim = v.size
        elif v.size != dim:
            raise PrerequisiteError(f"embedding for item {item_id} has dimension {v.size}, expected {dim}")
        rows.append(v)
    if dim == 0:
        raise PrerequisiteError("embeddings must have positive dimension")
    return np.ascontiguousarray(np.vstack(rows)) if rows else np.zeros((0, 1))


def smooth_nns(records: Sequence[PredictionRecord], embeddings: Mapping[str, np.ndarray], k: int = 5) -> list:
    """Replace each distribution with its mean over itself and its k cosine neighbours."""
    n = len(records)
    if k < 1:
        raise ValueError("nns needs k >= 1")
    if k >= n:
        raise PrerequisiteError(f"nns needs k < number of records ({k} >= {n})")
    emb = _embedding_matrix([r.item_id for r in records], embeddings)
    neigh, _ = kernels.cosine_topk(emb, emb, k, True)
    probs = np.vstack([r.probs.as_array() for r in records])
    out = []
    for i, r in enumerate(records):
        rows = probs[np.concatenate(([i], neigh[i]))]
        # identical neighbourhoods keep the vector bit-for-bit
        mean = rows[0] if np.all(rows == rows[0]) else rows.mean(axis=0)
        out.append(PredictionRecord(r.item_id, ProbVector(mean, r.probs.class_names), r.source, r.true_label))
    return out


def rank_nns(records: Sequence[PredictionRecord], embeddings: Mapping[str, np.ndarray], k: int = 5) -> Ranking:
    smoothed = smooth_nns(records, embeddings, k)
    ranking = rank_gini(smoothed)
    return Ranking(ranking.ids, ranking.scores, "nns", ranking.descending, ranking.tie_break)


# --------------------------------------------------------------------------
# ATS (simplified: top-3 pattern + greedy max-min spread)
# --------------------------------------------------------------------------

def ats_features(p: ProbVector):
    """Return the top-3 class pattern (sorted ids) and the point (p2/p1, p3/p1)."""
    a = p.as_array()
    top = np.argsort(-a, kind="stable")[:3]
    p1, p2, p3 = a[top]
    return tuple(sorted(int(t) for t in top)), (p2 / p1, p3 / p1)


def select_ats(records: Sequence[PredictionRecord], budget_count: Optional[int] = None,
               seed_ids: Sequence[str] = ()) -> Ranking:
    """Greedy selection that spreads picks over each top-3 pattern's plane.

    A record whose pattern has not been picked yet has infinite gain;
    otherwise its gain is the distance to the nearest picked point of its
    pattern. Ties go to the lower max probability, then the smaller item id.
    ``seed_ids`` are placed first, in the given order.
    """
    if not records:
        return Ranking((), (), "ats")
    n_classes = records[0].probs.n_classes
    if n_classes < 3:
        raise PrerequisiteError("ATS requires ≥ 3 classes")
    n = len(records)
    patterns = np.empty(n, dtype=np.int64)
    points = np.empty((n, 2))
    for i, r in enumerate(records):
        pat, pt = ats_features(r.probs)
        patterns[i] = (pat[0] * n_classes + pat[1]) * n_classes + pat[2]
        points[i] = pt
    ids = [r.item_id for r in records]
    tie_order = sorted(range(n), key=lambda i: (max(records[i].probs.probs), ids[i]))
    tie_rank = np.empty(n, dtype=np.int64)
    tie_rank[tie_order] = np.arange(n)
    index = {item_id: i for i, item_id in enumerate(ids)}
    unknown = [s for s in seed_ids if s not in index]
    if unknown:
        raise ValueError(f"seed ids not among records: {unknown}")
    seeds = np.asarray([index[s] for s in seed_ids], dtype=np.int64)
    order = kernels.ats_greedy(patterns, np.ascontiguousarray(points), tie_rank, seeds)
    return _selection_ranking(ids, [int(i) for i in order], "ats", "maxp-then-id")


# --------------------------------------------------------------------------
# TestRank-lite
# --------------------------------------------------------------------------

def contextual_feature(query_emb: np.ndarray, ref_emb: np.ndarray, ref_faults: np.ndarray, k: int,
                       exclude_self: bool) -> np.ndarray:
    """Similarity-weighted fault rate over each query's k nearest reference items.

    Weights are ``(1 + cos) / 2`` so they stay non-negative. Queries with no
    usable neighbour fall back to the reference fault rate.
    """
    prior = float(ref_faults.mean()) if ref_faults.size else 0.0
    pool = ref_emb.shape[0] - (1 if exclude_self else 0)
    k_eff = min(k, pool)
    if k_eff < 1:
        return np.full(query_emb.shape[0], prior)
    neigh, sims = kernels.cosine_topk(query_emb, ref_emb, k_eff, exclude_self)
    w = (1.0 + sims) / 2.0
    num = (w * ref_faults[neigh]).sum(axis=1)
    den = w.sum(axis=1)
    out = np.full(query_emb.shape[0], prior)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def rank_testrank_lite(train_records: Sequence[PredictionRecord], test_records: Sequence[PredictionRecord],
                       embeddings: Mapping[str, np.ndarray], cfg: Optional[DetectorConfig] = None) -> Ranking:
    """Logistic fault classifier on [probabilities, neighbour fault rate].

    Weights start at zero except for the contextual feature (weight 1), so a
    zero learning rate ranks purely by the neighbour fault rate.
    """
    cfg = cfg or DetectorConfig(method="testrank_lite")
    if not train_records:
        raise PrerequisiteError("testrank_lite needs a non-empty labeled training set")
    if any(r.is_fault is None for r in train_records):
        raise PrerequisiteError("testrank_lite training records need true labels")
    if not test_records:
        return Ranking((), (), "testrank_lite")
    c_train = train_records[0].probs.n_classes
    c_test = test_records[0].probs.n_classes
    if c_train != c_test:
        raise PrerequisiteError(f"class count mismatch: train {c_train}, test {c_test}")
    train_emb = _embedding_matrix([r.item_id for r in train_records], embeddings)
    test_emb = _embedding_matrix([r.item_id for r in test_records], embeddings)
    if train_emb.shape[1] != test_emb.shape[1]:
        raise PrerequisiteError(f"embedding dimension mismatch: train {train_emb.shape[1]}, test {test_emb.shape[1]}")

    y = np.asarray([1.0 if r.is_fault else 0.0 for r in train_records])
    ctx_train = contextual_feature(train_emb, train_emb, y, cfg.testrank_k, True)
    ctx_test = contextual_feature(test_emb, train_emb, y, cfg.testrank_k, False)
    x_train = np.column_stack([np.vstack([r.probs.as_array() for r in train_records]), ctx_train])
    x_test = np.column_stack([np.vstack([r.probs.as_array() for r in test_records]), ctx_test])

    w = np.zeros(x_train.shape[1])
    w[-1] = 1.0
    b = 0.0
    n = x_train.shape[0]
    for _ in range(cfg.testrank_epochs):
        err = _sigmoid(x_train @ w + b) - y
        w = w - cfg.testrank_learning_rate * (x_train.T @ err) / n
        b = b - cfg.testrank_learning_rate * float(err.mean())

    scores = _sigmoid(x_test @ w + b)
    return _rank_by_scores([r.item_id for r in test_records], scores, "testrank_lite", True)


# --------------------------------------------------------------------------
# random
# --------------------------------------------------------------------------

def select_random(ids: Sequence[str], budget_count: Optional[int] = None, seed: int = 0) -> Ranking:
    if budget_count is not None and budget_count > len(ids):
        raise ValueError(f"budget {budget_count} exceeds {len(ids)} items")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    return _selection_ranking(list(ids), [int(i) for i in order], "random", f"seed:{seed}")


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def run_detector(cfg: DetectorConfig, records: Sequence[PredictionRecord], *,
                 embeddings: Optional[Mapping[str, np.ndarray]] = None,
                 train_records: Optional[Sequence[PredictionRecord]] = None,
                 mutant_sets: Optional[Mapping[str, MutantPredictionSet]] = None) -> Ranking:
    """Produce the full ranking for ``cfg.method``.

    Raises :class:`PrerequisiteError` when the method's inputs are missing or
    unsuitable; callers render such cells as ``-``.
    """
    method = cfg.method
    records = list(records)
    if method == "random":
        return select_random([r.item_id for r in records], seed=cfg.seed)
    if method == "gini":
        return rank_gini(records)
    if method == "entropy":
        return rank_entropy(records)
    if method == "maxp":
        return rank_maxp(records)
    if method == "margin":
        return rank_margin(records)
    if method == "mcp":
        return select_mcp(records)
    if method == "ats":
        return select_ats(records)
    if method == "nns":
        if embeddings is None:
            raise PrerequisiteError("nns needs embeddings")
        return rank_nns(records, embeddings, cfg.nns_k)
    if method == "testrank_lite":
        if embeddings is None:
            raise PrerequisiteError("testrank_lite needs embeddings")
        if not train_records:
            raise PrerequisiteError("testrank_lite needs a labeled training split")
        return rank_testrank_lite(train_records, records, embeddings, cfg)
    if method == "bald":
        if mutant_sets is None:
            raise PrerequisiteError("bald needs mutant predictions")
        missing = [r.item_id for r in records if r.item_id not in mutant_sets]
        if missing:
            raise PrerequisiteError(f"bald needs mutant predictions; none for {missing[:5]}")
        return rank_bald([mutant_sets[r.item_id] for r in records])
    raise ValueError(f"unknown method {method!r}")
