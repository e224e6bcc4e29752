"""Lossless prompt tokenisation and a brace-aware line scanner for Java-like code."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List

_TOKEN_RE = re.compile(r"\s+|\w+|[^\w\s]", re.UNICODE)

WORD = "word"
PUNCT = "punct"
SPACE = "whitespace"


@dataclass(frozen=True)
class Token:
    text: str
    kind: str

    @property
    def is_word(self) -> bool:
        return self.kind == WORD

    @property
    def is_inline_space(self) -> bool:
        return self.kind == SPACE and "\n" not in self.text and "\r" not in self.text


def tokenize(text: str) -> List[Token]:
    out = []
    for m in _TOKEN_RE.finditer(text):
        s = m.group(0)
        if s.isspace():
            kind = SPACE
        elif s[0].isalnum() or s[0] == "_":
            kind = WORD
        else:
            kind = PUNCT
        out.append(Token(s, kind))
    return out


def detokenize(tokens) -> str:
    return "".join(t.text for t in tokens)


def word_positions(tokens) -> List[int]:
    return [i for i, t in enumerate(tokens) if t.is_word]


def count_words(text: str) -> int:
    return sum(1 for t in tokenize(text) if t.is_word)


# --------------------------------------------------------------------------
# code lines
# --------------------------------------------------------------------------

ASSIGNMENT = "assignment"
DECLARATION = "declaration"
OTHER = "other"

_KEYWORDS = {
    "if", "else", "for", "while", "do", "switch", "case", "default", "return", "throw", "break",
    "continue", "try", "catch", "finally", "new", "assert", "synchronized", "package", "import",
}
_ASSIGN_RE = re.compile(r"^[\w\s.<>\[\],?]*?[\w\]]\s*(?:>>>|<<|>>|[+\-*/%&|^])?=(?!=).*;$")
_DECL_RE = re.compile(r"^(?:final\s+)?[\w.<>\[\],?]+(?:\s+[\w.<>\[\],?]+)*\s+\w+(?:\s*,\s*\w+)*\s*;$")
_TYPE_DECL_RE = re.compile(r"\b(class|interface|enum|record)\s+\w+")


@dataclass(frozen=True)
class CodeLine:
    text: str           # including its line terminator, if any
    depth_before: int   # brace depth at the start of the line
    depth_after: int    # brace depth at the end of the line
    statement: str      # assignment | declaration | other
    in_comment: bool    # line ends inside a block comment

    @property
    def body(self) -> str:
        return self.text.rstrip("\r\n")

    @property
    def indent(self) -> str:
        b = self.body
        return b[: len(b) - len(b.lstrip())]


def classify_statement(code: str) -> str:
    s = code.strip()
    if not s.endswith(";"):
        return OTHER
    first = re.match(r"\w+", s)
    if first is None or first.group(0) in _KEYWORDS:
        return OTHER
    if _ASSIGN_RE.match(s) and "(" not in s.split("=", 1)[0]:
        return ASSIGNMENT
    if _DECL_RE.match(s):
        return DECLARATION
    return OTHER


def _strip_code(line: str, in_block: bool):
    """Return the line's code with strings and comments blanked, plus comment state."""
    out = []
    i = 0
    n = len(line)
    while i < n:
        if in_block:
            end = line.find("*/", i)
            if end < 0:
                return "".join(out), True
            i = end + 2
            in_block = False
            out.append(" ")
            continue
        c = line[i]
        if line.startswith("//", i):
            break
        if line.startswith("/*", i):
            in_block = True
            i += 2
            continue
        if c in "\"'":
            j = i + 1
            while j < n and line[j] != c:
                j += 2 if line[j] == "\\" else 1
            out.append(c + c)
            i = j + 1
            continue
        out.append(c)
        i += 1
    return "".join(out), in_block


def scan_code(code: str) -> List[CodeLine]:
    lines = code.splitlines(keepends=True)
    result = []
    depth = 0
    in_block = False
    for line in lines:
        stripped, in_block_after = _strip_code(line.rstrip("\r\n"), in_block)
        before = depth
        depth += stripped.count("{") - stripped.count("}")
        statement = OTHER if in_block else classify_statement(stripped)
        result.append(CodeLine(line, before, depth, statement, in_block_after))
        in_block = in_block_after
    return result


def code_text(lines) -> str:
    return "".join(line.text for line in lines)


def brace_balance(code: str) -> int:
    lines = scan_code(code)
    return lines[-1].depth_after if lines else 0


def body_depth(lines) -> int:
    """Minimum brace depth of a statement inside a method body.

    Input that declares a type at top level (``class Foo {``) puts method
    bodies at depth 2; a bare method snippet puts them at depth 1.
    """
    for line in lines:
        if line.depth_before == 0 and _TYPE_DECL_RE.search(line.body):
            return 2
    return 1


@dataclass(frozen=True)
class TokenizedPrompt:
    tokens: tuple
    lines: tuple = ()

    @classmethod
    def from_text(cls, text: str, kind: str = "text") -> "TokenizedPrompt":
        lines = tuple(scan_code(text)) if kind == "code" else ()
        return cls(tuple(tokenize(text)), lines)

    @property
    def text(self) -> str:
        return detokenize(self.tokens)
