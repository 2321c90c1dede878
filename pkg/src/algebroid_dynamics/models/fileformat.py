"""Reader for ``.model`` files.

A file is a sequence of ``[section]`` headers followed by ``key = value``
lines.  A value is either a bare scalar (expression text, number, boolean
or name) or a bracketed array, row-major and arbitrarily nested, which may
continue over several lines until its brackets balance.  ``#`` starts a
comment.  Array cells can also be set one at a time with 1-based indices,
``c[3][1][2] = 1``.  The full grammar is in docs/model-format.md.

Every scalar keeps the line and column where it started so that later
stages (expression parsing, shape checks) can point at the offending text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ModelParseError

_HEADER = re.compile(r"\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]\s*$")
_KEY = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)((?:\s*\[\s*\d+\s*\])*)\s*=")
_INDEX = re.compile(r"\[\s*(\d+)\s*\]")


@dataclass(frozen=True)
class Leaf:
    text: str
    line: int
    column: int

    def error(self, message, offset=0):
        return ModelParseError(message, self.line, self.column + offset)


@dataclass(frozen=True)
class Entry:
    section: str
    key: str
    index: tuple     # 0-based cell index for ``key[i][j] = ...`` lines, else ()
    value: object    # Leaf or nested list of Leaf
    line: int
    column: int


def _strip_comment(text):
    cut = text.find("#")
    return text if cut < 0 else text[:cut]


class _Cursor:
    """Character stream over a (possibly multi-line) value with positions."""

    def __init__(self, chunks):
        # chunks: list of (text, line, first column)
        self.chars = [(ch, ln, col + k) for text, ln, col in chunks for k, ch in enumerate(text + "\n")]
        self.pos = 0

    def peek(self):
        while self.pos < len(self.chars) and self.chars[self.pos][0].isspace():
            self.pos += 1
        return self.chars[self.pos][0] if self.pos < len(self.chars) else ""

    def here(self):
        if self.pos < len(self.chars):
            return self.chars[self.pos][1:]
        ch, ln, col = self.chars[-1]
        return ln, col

    def fail(self, message):
        line, col = self.here()
        return ModelParseError(message, line, col)

    def array(self):
        self.peek()
        assert self.chars[self.pos][0] == "["
        self.pos += 1
        items = []
        if self.peek() == "]":
            self.pos += 1
            return items
        while True:
            items.append(self.array() if self.peek() == "[" else self.cell())
            ch = self.peek()
            if ch == ",":
                self.pos += 1
                if self.peek() == "]":  # trailing comma
                    self.pos += 1
                    return items
            elif ch == "]":
                self.pos += 1
                return items
            elif ch == "":
                raise self.fail("unterminated array")
            else:
                raise self.fail(f"expected ',' or ']', found {ch!r}")

    def cell(self):
        self.peek()
        start = self.pos
        depth = 0
        while self.pos < len(self.chars):
            ch = self.chars[self.pos][0]
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif depth == 0 and ch in ",]":
                break
            elif ch in "[":
                raise self.fail("unexpected '[' inside an array cell")
            self.pos += 1
        text = "".join(c for c, _, _ in self.chars[start:self.pos]).strip()
        if not text:
            raise self.fail("empty array cell")
        _, line, col = self.chars[start]
        return Leaf(_unquote(text), line, col)


def _unquote(text):
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _depth(text):
    return text.count("[") - text.count("]")


def read_entries(source: str):
    """Tokenise a model file into Entry records (no semantic checks)."""
    entries = []
    section = None
    lines = source.splitlines()
    k = 0
    while k < len(lines):
        lineno = k + 1
        raw = _strip_comment(lines[k])
        k += 1
        text = raw.strip()
        if not text:
            continue
        indent = len(raw) - len(raw.lstrip())
        if text.startswith("[") and "=" not in text:
            match = _HEADER.match(text)
            if not match:
                raise ModelParseError("malformed section header", lineno, indent + 1)
            section = match.group(1)
            continue
        match = _KEY.match(text)
        if not match:
            raise ModelParseError("expected 'key = value' or '[section]'", lineno, indent + 1)
        if section is None:
            raise ModelParseError("entry before the first section header", lineno, indent + 1)
        key = match.group(1)
        index = tuple(int(i) - 1 for i in _INDEX.findall(match.group(2)))
        if any(i < 0 for i in index):
            raise ModelParseError("indices are 1-based", lineno, indent + 1)
        vcol = indent + match.end() + 1
        rest = raw[indent + match.end():]
        vcol += len(rest) - len(rest.lstrip())
        rest = rest.strip()
        if not rest:
            raise ModelParseError(f"missing value for {key!r}", lineno, vcol)
        if rest.startswith("["):
            chunks = [(rest, lineno, vcol)]
            depth = _depth(rest)
            while depth > 0:
                if k >= len(lines):
                    raise ModelParseError("unterminated array", lineno, vcol)
                more = _strip_comment(lines[k])
                chunks.append((more, k + 1, 1))
                depth += _depth(more)
                k += 1
            cur = _Cursor(chunks)
            value = cur.array()
            if cur.peek():
                raise cur.fail("unexpected text after array")
        else:
            value = Leaf(_unquote(rest), lineno, vcol)
        entries.append(Entry(section, key, index, value, lineno, indent + 1))
    return entries
