"""Prompt mutation operators and mutation-based confidence smoothing."""

from mucs.mutation import code_ops, text_ops
from mucs.mutation.code_ops import dead_if_adding, duplication, local_variable_adding, print_adding
from mucs.mutation.lexicon import Lexicon, default_lexicon
from mucs.mutation.ops import ALL_OPS, CODE_OPS, TEXT_OPS, MutationOp, default_op_pool, make_mutant
from mucs.mutation.smoothing import (
    MucsConfig,
    Mutant,
    SmoothResult,
    generate_mutants,
    mean_probs,
    mucs_smooth,
    smooth_vectors,
)
from mucs.mutation.text_ops import (
    punctuation_insertion,
    random_deletion,
    random_insertion,
    random_swap,
    synonym_replacement,
)
from mucs.mutation.tokenize import TokenizedPrompt, brace_balance, count_words, detokenize, scan_code, tokenize

__all__ = [
    "ALL_OPS", "CODE_OPS", "TEXT_OPS", "Lexicon", "MucsConfig", "Mutant", "MutationOp", "SmoothResult",
    "TokenizedPrompt", "brace_balance", "code_ops", "count_words", "dead_if_adding", "default_lexicon", "default_op_pool", "detokenize",
    "duplication", "generate_mutants", "local_variable_adding", "make_mutant", "mean_probs", "mucs_smooth",
    "print_adding", "punctuation_insertion", "random_deletion", "random_insertion", "random_swap",
    "scan_code", "smooth_vectors", "synonym_replacement", "text_ops", "tokenize",
]
