"""Word-level text augmentation operators.

All operators take the prompt string and a ``numpy.random.Generator`` and
return a new string; an operator that cannot apply returns its input
unchanged and logs why.
"""

from __future__ import annotations

import logging

import numpy as np

from mucs.mutation.lexicon import Lexicon, match_case
from mucs.mutation.tokenize import PUNCT, SPACE, WORD, Token, detokenize, tokenize, word_positions

log = logging.getLogger(__name__)

PUNCTUATION_MARKS = (".", ",", ";", ":", "?", "!")


def synonym_replacement(prompt: str, n: int, lexicon: Lexicon, rng: np.random.Generator) -> str:
    tokens = tokenize(prompt)
    covered = [i for i in word_positions(tokens) if lexicon.covers(tokens[i].text)]
    if not covered:
        log.debug("synonym_replacement: no lexicon-covered word, identity")
        return prompt
    picks = rng.choice(len(covered), size=min(n, len(covered)), replace=False)
    for p in sorted(int(x) for x in picks):
        i = covered[p]
        syns = lexicon.synonyms(tokens[i].text)
        syn = syns[int(rng.integers(len(syns)))]
        tokens[i] = Token(match_case(tokens[i].text, syn), WORD)
    return detokenize(tokens)


def random_deletion(prompt: str, t_delete: float, rng: np.random.Generator) -> str:
    """Drop each word when its uniform draw falls below ``t_delete``.

    At least one word always survives. A deleted word takes one adjacent
    same-line whitespace run with it; line breaks are never removed.
    """
    tokens = tokenize(prompt)
    words = word_positions(tokens)
    if len(words) < 2:
        log.debug("random_deletion: fewer than 2 words, identity")
        return prompt
    draws = rng.random(len(words))
    drop = draws < t_delete
    if drop.all():
        drop[int(rng.integers(len(words)))] = False
    if not drop.any():
        return prompt
    deleted = {words[j] for j in np.flatnonzero(drop)}
    out = []
    skip_space = False
    for i, tok in enumerate(tokens):
        if i in deleted:
            if out and out[-1].is_inline_space:
                out.pop()
            else:
                skip_space = True
            continue
        if skip_space and tok.is_inline_space:
            skip_space = False
            continue
        skip_space = False
        out.append(tok)
    return detokenize(out)


def _insert_at_gap(tokens, words, gap: int, new_tokens):
    # gap g < W means "before word g"; gap W means "after the last word"
    if gap < len(words):
        at = words[gap]
        return tokens[:at] + new_tokens + tokens[at:]
    at = words[-1] + 1
    return tokens[:at] + new_tokens + tokens[at:]


def random_insertion(prompt: str, n: int, lexicon: Lexicon, rng: np.random.Generator) -> str:
    tokens = tokenize(prompt)
    covered = [tokens[i].text for i in word_positions(tokens) if lexicon.covers(tokens[i].text)]
    if not covered:
        log.debug("random_insertion: no lexicon-covered word, identity")
        return prompt
    picks = rng.choice(len(covered), size=min(n, len(covered)), replace=False)
    for p in picks:
        syns = lexicon.synonyms(covered[int(p)])
        syn = syns[int(rng.integers(len(syns)))]
        words = word_positions(tokens)
        gap = int(rng.integers(len(words) + 1))
        if gap < len(words):
            new = [Token(syn, WORD), Token(" ", SPACE)]
        else:
            new = [Token(" ", SPACE), Token(syn, WORD)]
        tokens = _insert_at_gap(tokens, words, gap, new)
    return detokenize(tokens)


def random_swap(prompt: str, rng: np.random.Generator) -> str:
    tokens = tokenize(prompt)
    words = word_positions(tokens)
    if len(words) < 2:
        log.debug("random_swap: fewer than 2 words, identity")
        return prompt
    a, b = (int(x) for x in rng.choice(len(words), size=2, replace=False))
    i, j = words[a], words[b]
    tokens[i], tokens[j] = tokens[j], tokens[i]
    return detokenize(tokens)


def punctuation_insertion(prompt: str, n: int, rng: np.random.Generator) -> str:
    tokens = tokenize(prompt)
    if not word_positions(tokens):
        log.debug("punctuation_insertion: no words, identity")
        return prompt
    for _ in range(n):
        words = word_positions(tokens)
        mark = PUNCTUATION_MARKS[int(rng.integers(len(PUNCTUATION_MARKS)))]
        gap = int(rng.integers(len(words) + 1))
        tokens = _insert_at_gap(tokens, words, gap, [Token(mark, PUNCT)])
    return detokenize(tokens)
