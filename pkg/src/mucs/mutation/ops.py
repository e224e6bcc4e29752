"""Operator registry and mutant construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from mucs.mutation import code_ops, text_ops
from mucs.mutation.lexicon import Lexicon, default_lexicon
from mucs.mutation.tokenize import brace_balance

log = logging.getLogger(__name__)

TEXT_OPS = (
    "synonym_replacement",
    "random_deletion",
    "random_insertion",
    "random_swap",
    "punctuation_insertion",
)
CODE_OPS = ("print_adding", "local_variable_adding", "dead_if_adding", "duplication")
ALL_OPS = TEXT_OPS + CODE_OPS


@dataclass(frozen=True)
class MutationOp:
    kind: str
    n: int = 1
    t_delete: float = 0.01

    def __post_init__(self):
        if self.kind not in ALL_OPS:
            raise ValueError(f"unknown mutation operator {self.kind!r}")
        if self.n < 1:
            raise ValueError("operator n must be positive")
        if not 0.0 <= self.t_delete <= 1.0:
            raise ValueError("t_delete must be in [0, 1]")

    @property
    def is_code_op(self) -> bool:
        return self.kind in CODE_OPS

    def apply(self, prompt: str, rng: np.random.Generator, kind: str = "text",
              lexicon: Optional[Lexicon] = None) -> str:
        if self.is_code_op and kind != "code":
            raise ValueError(f"{self.kind} applies to code prompts only")
        lexicon = default_lexicon() if lexicon is None else lexicon
        k = self.kind
        if k == "synonym_replacement":
            out = text_ops.synonym_replacement(prompt, self.n, lexicon, rng)
        elif k == "random_deletion":
            out = text_ops.random_deletion(prompt, self.t_delete, rng)
        elif k == "random_insertion":
            out = text_ops.random_insertion(prompt, self.n, lexicon, rng)
        elif k == "random_swap":
            out = text_ops.random_swap(prompt, rng)
        elif k == "punctuation_insertion":
            out = text_ops.punctuation_insertion(prompt, self.n, rng)
        else:
            out = getattr(code_ops, k)(prompt, rng)
        if kind == "code" and not self.is_code_op and out != prompt:
            # e.g. deleting `b` from `a/b*c` would open a block comment
            if brace_balance(out) != brace_balance(prompt):
                log.debug("%s changed brace structure of a code prompt, identity", k)
                return prompt
        return out


def as_op(op) -> MutationOp:
    if isinstance(op, MutationOp):
        return op
    if isinstance(op, dict):
        return MutationOp(**op)
    return MutationOp(str(op))


def default_op_pool(kind: str = "text") -> Tuple[MutationOp, ...]:
    names = TEXT_OPS + CODE_OPS if kind == "code" else TEXT_OPS
    return tuple(MutationOp(n) for n in names)


def make_mutant(prompt: str, k: int, op_pool: Sequence, rng: np.random.Generator, kind: str = "text",
                lexicon: Optional[Lexicon] = None) -> Tuple[str, Tuple[str, ...]]:
    """Apply ``k`` operators drawn uniformly, with replacement, in sequence.

    Returns the mutant and the chain of operator names that produced it.
    """
    if k < 1:
        raise ValueError("K must be at least 1")
    pool = [as_op(op) for op in op_pool]
    if not pool:
        raise ValueError("operator pool is empty")
    if kind != "code" and any(op.is_code_op for op in pool):
        raise ValueError("code refactoring operators need code prompts")
    chain = []
    current = prompt
    for _ in range(k):
        op = pool[int(rng.integers(len(pool)))]
        current = op.apply(current, rng, kind, lexicon)
        chain.append(op.kind)
    return current, tuple(chain)
