"""Semantics-preserving code refactorings for Java-shaped prompts.

Each operator inserts one statement block below a randomly chosen eligible
line, or duplicates one assignment. Existing lines are never edited. When no
line qualifies the operator returns its input unchanged.
"""

from __future__ import annotations

import logging
import re
import string

import numpy as np

from mucs.mutation.tokenize import ASSIGNMENT, CodeLine, body_depth, code_text, scan_code

log = logging.getLogger(__name__)

_CONTENT_CHARS = string.ascii_letters + string.digits
_CONTINUATION_RE = re.compile(r"^\s*(else|catch|finally|while)\b")
# lines opening a block whose body cannot take a plain statement
_NO_STATEMENT_AFTER_RE = re.compile(r"\b(switch|enum|class|interface|new)\b|=\s*\{\s*$|^\s*(case\b|default\s*:)")


def _next_code_line(lines, i):
    for line in lines[i + 1:]:
        if line.body.strip():
            return line
    return None


def eligible_lines(lines) -> list:
    """Indices of lines a new statement may follow."""
    min_depth = body_depth(lines)
    out = []
    for i, line in enumerate(lines):
        body = line.body.strip()
        if line.in_comment or not body or line.depth_after < min_depth:
            continue
        if not body.endswith((";", "{", "}")):
            continue
        if body.endswith("{") and _NO_STATEMENT_AFTER_RE.search(body):
            continue
        if body.endswith(";") and line.depth_before != line.depth_after:
            continue
        if body.startswith("for") and body.endswith(";"):
            continue
        nxt = _next_code_line(lines, i)
        if nxt is not None and _CONTINUATION_RE.match(nxt.body):
            continue
        out.append(i)
    return out


def _newline(lines) -> str:
    for line in lines:
        if line.text.endswith("\r\n"):
            return "\r\n"
    return "\n"


def _indent_unit(lines) -> str:
    for line in lines:
        ind = line.indent
        if ind:
            return "\t" if ind.startswith("\t") else " " * min(len(ind), 4)
    return "    "


def _insert_after(lines, i, block_lines) -> str:
    nl = _newline(lines)
    line = lines[i]
    indent = line.indent + (_indent_unit(lines) if line.body.rstrip().endswith("{") else "")
    head = code_text(lines[: i + 1])
    if not head.endswith(("\n", "\r")):
        head += nl
    block = "".join(indent + b + nl for b in block_lines)
    tail = code_text(lines[i + 1:])
    if not tail and not lines[i].text.endswith(("\n", "\r")):
        # keep the original "no trailing newline" shape
        block = block[: -len(nl)]
    return head + block + tail


def _fresh_name(code: str, prefix: str, rng: np.random.Generator) -> str:
    counter = int(rng.integers(0, 10_000))
    while re.search(rf"\b{prefix}{counter}\b", code):
        counter += 1
    return f"{prefix}{counter}"


def _random_content(rng: np.random.Generator, size: int = 8) -> str:
    return "".join(_CONTENT_CHARS[int(i)] for i in rng.integers(len(_CONTENT_CHARS), size=size))


def _pick(candidates, rng):
    return candidates[int(rng.integers(len(candidates)))]


def print_adding(code: str, rng: np.random.Generator) -> str:
    lines = scan_code(code)
    cands = eligible_lines(lines)
    if not cands:
        log.debug("print_adding: no eligible line, identity")
        return code
    i = _pick(cands, rng)
    return _insert_after(lines, i, [f'System.out.println("{_random_content(rng)}");'])


def local_variable_adding(code: str, rng: np.random.Generator) -> str:
    lines = scan_code(code)
    cands = eligible_lines(lines)
    if not cands:
        log.debug("local_variable_adding: no eligible line, identity")
        return code
    i = _pick(cands, rng)
    name = _fresh_name(code, "mucsVar", rng)
    return _insert_after(lines, i, [f"int {name} = {int(rng.integers(0, 1000))};"])


def dead_if_adding(code: str, rng: np.random.Generator) -> str:
    lines = scan_code(code)
    cands = eligible_lines(lines)
    if not cands:
        log.debug("dead_if_adding: no eligible line, identity")
        return code
    i = _pick(cands, rng)
    name = _fresh_name(code, "mucsDead", rng)
    unit = _indent_unit(lines)
    block = ["if (false) {", f"{unit}int {name} = {int(rng.integers(0, 1000))};", "}"]
    return _insert_after(lines, i, block)


def assignment_lines(lines) -> list:
    min_depth = body_depth(lines)
    return [
        i for i, line in enumerate(lines)
        if line.statement == ASSIGNMENT and not line.in_comment
        and line.depth_before == line.depth_after and line.depth_after >= min_depth
    ]


def duplication(code: str, rng: np.random.Generator) -> str:
    lines = scan_code(code)
    cands = assignment_lines(lines)
    if not cands:
        log.debug("duplication: no assignment line, identity")
        return code
    i = _pick(cands, rng)
    line: CodeLine = lines[i]
    nl = _newline(lines)
    head = code_text(lines[: i + 1])
    if not head.endswith(("\n", "\r")):
        head += nl
        copy = line.body
    else:
        copy = line.text
    return head + copy + code_text(lines[i + 1:])
