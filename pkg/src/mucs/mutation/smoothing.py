"""Mutation-based confidence smoothing.

Each input prompt is mutated ``n_mutants`` times (``K`` random operators per
mutant), the model is queried on every mutant, and the mean of the returned
distributions replaces the original prediction.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from mucs.detectors import MutantPredictionSet
from mucs.metrics import PredictionRecord, ProbVector, TestItem
from mucs.mutation.lexicon import Lexicon
from mucs.mutation.ops import CODE_OPS, MutationOp, as_op, default_op_pool, make_mutant

log = logging.getLogger(__name__)

ModelFn = Callable[[str], ProbVector]


@dataclass(frozen=True)
class MucsConfig:
    n_mutants: int = 10
    K: int = 3
    op_pool: Tuple[MutationOp, ...] = field(default_factory=default_op_pool)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "op_pool", tuple(as_op(op) for op in self.op_pool))
        if self.n_mutants < 1:
            raise ValueError("n_mutants must be positive")
        if self.K < 1:
            raise ValueError("K must be positive")
        if not self.op_pool:
            raise ValueError("op_pool must not be empty")

    def check_kind(self, kind: str):
        if kind != "code" and any(op.kind in CODE_OPS for op in self.op_pool):
            raise ValueError("op_pool for a text task may only hold text operators")

    def to_dict(self) -> dict:
        return {
            "n_mutants": self.n_mutants,
            "K": self.K,
            "seed": self.seed,
            "op_pool": [{"kind": op.kind, "n": op.n, "t_delete": op.t_delete} for op in self.op_pool],
        }

    @classmethod
    def from_dict(cls, d: dict, kind: str = "text") -> "MucsConfig":
        d = dict(d)
        pool = d.pop("op_pool", None)
        if pool is None:
            pool = default_op_pool(kind)
        return cls(op_pool=tuple(as_op(op) for op in pool), **d)


@dataclass(frozen=True)
class Mutant:
    item_id: str
    mutant_index: int
    op_chain: Tuple[str, ...]
    prompt: str

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "mutant_index": self.mutant_index,
            "op_chain": list(self.op_chain),
            "mutant_prompt": self.prompt,
        }


@dataclass
class SmoothResult:
    record: PredictionRecord
    mutant_set: MutantPredictionSet
    mutants: List[Mutant]
    failures: List[str] = field(default_factory=list)

    @property
    def fallback(self) -> bool:
        """True when no mutant answered and the original prediction was kept."""
        return self.mutant_set.n_mutants == 0


def mutant_rng(seed: int, item_id: str, index: int) -> np.random.Generator:
    # one stream per (seed, item, mutant) so results do not depend on scheduling
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(item_id.encode("utf-8")), index])


def generate_mutants(item: TestItem, cfg: MucsConfig, lexicon: Optional[Lexicon] = None) -> List[Mutant]:
    cfg.check_kind(item.kind)
    out = []
    for i in range(cfg.n_mutants):
        text, chain = make_mutant(item.prompt, cfg.K, cfg.op_pool, mutant_rng(cfg.seed, item.id, i),
                                  item.kind, lexicon)
        out.append(Mutant(item.id, i, chain, text))
    return out


def mean_probs(vectors: Sequence[ProbVector]) -> np.ndarray:
    """Entry-wise mean of the vectors, before any renormalisation."""
    if not vectors:
        raise ValueError("no vectors to average")
    first = vectors[0].probs
    if all(v.probs == first for v in vectors):
        # exact: avoids the rounding of summing n copies and dividing by n
        return np.asarray(first, dtype=np.float64)
    return np.vstack([v.as_array() for v in vectors]).mean(axis=0)


def smooth_vectors(vectors: Sequence[ProbVector]) -> ProbVector:
    return ProbVector(mean_probs(vectors), vectors[0].class_names)


def mucs_smooth(item: TestItem, cfg: MucsConfig, model_fn: ModelFn, *, lexicon: Optional[Lexicon] = None,
                original: Optional[ProbVector] = None, max_workers: int = 1) -> SmoothResult:
    """Smooth one item's prediction over its mutants.

    Failed mutant queries are dropped. If every query fails the original
    prediction is kept (queried via ``model_fn`` when ``original`` is None)
    and the result is flagged as a fallback.
    """
    mutants = generate_mutants(item, cfg, lexicon)

    def query(m: Mutant):
        try:
            return model_fn(m.prompt), None
        except Exception as exc:  # noqa: BLE001 - any model failure drops the mutant
            return None, f"mutant {m.mutant_index}: {type(exc).__name__}: {exc}"

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            answers = list(pool.map(query, mutants))
    else:
        answers = [query(m) for m in mutants]

    vectors = [v for v, _ in answers if v is not None]
    failures = [err for _, err in answers if err is not None]
    mutant_set = MutantPredictionSet(item.id, tuple(vectors))
    if vectors:
        probs = smooth_vectors(vectors)
        source = "smoothed"
    else:
        log.warning("item %s: all %d mutant queries failed, keeping original prediction", item.id, len(mutants))
        probs = original if original is not None else model_fn(item.prompt)
        source = "original"
    record = PredictionRecord(item.id, probs, source, item.true_label)
    return SmoothResult(record, mutant_set, mutants, failures)
