"""Closed-form coefficient expressions over x1, x2.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?          # right associative, -x^2 = -(x^2)
    atom   := NUMBER | 'x1' | 'x2' | NAME '(' args ')' | '(' expr ')'

Functions: sin cos exp abs (one argument), min max (two or more) and
chi(x1a, x1b, x2a, x2b), the indicator of the closed box
[x1a, x1b] x [x2a, x2b].
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from plaplab.errors import InvalidArgument

__all__ = ["Expression", "parse_expression"]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)

_UNARY = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}
_VARIADIC = {"min": np.minimum, "max": np.maximum}


def _tokenize(s: str):
    out, pos = [], 0
    while pos < len(s):
        if s[pos:].strip() == "":
            break
        m = _TOKEN.match(s, pos)
        if m is None:
            off = pos + len(s[pos:]) - len(s[pos:].lstrip())
            raise InvalidArgument(f"unexpected character {s[off]!r} at offset {off}")
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(s)))
    return out


def _chi(x1, x2, a, b, c, d):
    return ((x1 >= a) & (x1 <= b) & (x2 >= c) & (x2 <= d)).astype(float)


class _Parser:
    def __init__(self, s: str):
        self.toks = _tokenize(s)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def fail(self, what):
        kind, text, off = self.tok
        found = "end of input" if kind == "end" else repr(text)
        raise InvalidArgument(f"expected {what}, found {found} at offset {off}")

    def eat(self, text):
        if self.tok[1] != text or self.tok[0] == "end":
            self.fail(repr(text))
        self.i += 1

    def parse(self):
        node = self.expr()
        if self.tok[0] != "end":
            self.fail("operator or end of input")
        return node

    def expr(self):
        node = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.tok[1]
            self.i += 1
            rhs = self.term()
            node = (np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.tok[1]
            self.i += 1
            rhs = self.unary()
            node = (np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self):
        if self.tok[0] == "op" and self.tok[1] in ("+", "-"):
            op = self.tok[1]
            self.i += 1
            inner = self.unary()
            return inner if op == "+" else (np.negative, inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.i += 1
            return (np.power, base, self.unary())
        return base

    def atom(self):
        kind, text, off = self.tok
        if kind == "num":
            self.i += 1
            return ("const", float(text))
        if kind == "op" and text == "(":
            self.i += 1
            node = self.expr()
            self.eat(")")
            return node
        if kind == "name":
            self.i += 1
            if text in ("x1", "x2"):
                return ("var", 0 if text == "x1" else 1)
            if text not in _UNARY and text not in _VARIADIC and text != "chi":
                raise InvalidArgument(f"unknown name {text!r} at offset {off}")
            self.eat("(")
            args = [self.expr()]
            while self.tok[0] == "op" and self.tok[1] == ",":
                self.i += 1
                args.append(self.expr())
            self.eat(")")
            n = len(args)
            if text in _UNARY and n != 1:
                raise InvalidArgument(f"{text} takes 1 argument, got {n} (offset {off})")
            if text in _VARIADIC and n < 2:
                raise InvalidArgument(f"{text} takes at least 2 arguments, got {n} (offset {off})")
            if text == "chi" and n != 4:
                raise InvalidArgument(f"chi takes 4 arguments, got {n} (offset {off})")
            return ("call", text, args)
        self.fail("number, variable, function or '('")


def _eval(node, x1, x2):
    head = node[0]
    if head == "const":
        return np.full_like(x1, node[1])
    if head == "var":
        return x1 if node[1] == 0 else x2
    if head == "call":
        name, args = node[1], [_eval(a, x1, x2) for a in node[2]]
        if name in _UNARY:
            return _UNARY[name](args[0])
        if name == "chi":
            return _chi(x1, x2, *args)
        out = args[0]
        for a in args[1:]:
            out = _VARIADIC[name](out, a)
        return out
    fn, *args = node
    return fn(*(_eval(a, x1, x2) for a in args))


@dataclass(frozen=True, eq=False)
class Expression:
    """Parsed expression; call with coordinate arrays or an (N, 2) point array."""

    source: str
    tree: tuple

    def __call__(self, x1, x2=None) -> np.ndarray:
        if x2 is None:
            pts = np.asarray(x1, dtype=float)
            x1, x2 = pts[..., 0], pts[..., 1]
        x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
        with np.errstate(all="ignore"):
            return np.asarray(_eval(self.tree, x1, x2), dtype=float)

    def at_cells(self, mesh) -> np.ndarray:
        return self(mesh.centroids)

    def at_vertices(self, mesh) -> np.ndarray:
        return self(mesh.vertices)


def parse_expression(s: str) -> Expression:
    """Parse ``s``; syntax errors raise InvalidArgument naming the offset."""
    if not isinstance(s, str):
        raise InvalidArgument(f"expression must be a string, got {type(s).__name__}")
    return Expression(s, _Parser(s).parse())
