"""Flat-file synonym lexicon.

Format: UTF-8, one record per line, ``word<TAB>syn1,syn2,...``. Blank lines
and lines starting with ``#`` are ignored. Lookups are case-insensitive and
multi-word synonyms are dropped so replacements never change the word count.
"""

from __future__ import annotations

import logging
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

log = logging.getLogger(__name__)


class Lexicon:
    def __init__(self, entries: Optional[Mapping[str, object]] = None):
        self._entries: Dict[str, Tuple[str, ...]] = {}
        for word, syns in (entries or {}).items():
            if isinstance(syns, str):
                syns = [syns]
            clean = tuple(s.strip() for s in syns if s.strip() and not any(ch.isspace() for ch in s.strip()))
            if clean:
                self._entries[word.strip().lower()] = clean

    def synonyms(self, word: str) -> Tuple[str, ...]:
        return self._entries.get(word.lower(), ())

    def covers(self, word: str) -> bool:
        return word.lower() in self._entries

    def __len__(self):
        return len(self._entries)

    def __contains__(self, word):
        return self.covers(word)

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "Lexicon":
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise ValueError(f"{source}:{lineno}: expected 'word<TAB>syn1,syn2,...'")
            word, syns = line.split("\t", 1)
            entries[word] = [s for s in syns.split(",")]
        return cls(entries)

    @classmethod
    def load(cls, path) -> "Lexicon":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))


def match_case(template: str, word: str) -> str:
    if template.isupper() and len(template) > 1:
        return word.upper()
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


_default = None


def default_lexicon() -> Lexicon:
    global _default
    if _default is None:
        text = resources.files("mucs").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
        _default = Lexicon.parse(text, "mucs/data/lexicon.tsv")
    return _default
