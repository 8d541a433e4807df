"""Text front end for STL rules.

Grammar (loosest binding first)::

    formula  := or ( '->' formula )?            right associative
    or       := and ( '||' and )*
    and      := since ( '&&' since )*
    since    := unary ( 'S' unary )*             left associative
    unary    := '!' unary
              | ('G' | 'F') '[' bound ',' bound ']' unary
              | '(' formula ')'
              | IDENT ( cmp threshold )?
    cmp      := '<' | '<=' | '>' | '>=' | '=' | '=='
    threshold:= ['-'] NUMBER | '?' IDENT | IDENT
    bound    := NUMBER | 't0' | 'te'

Unicode spellings from the usual STL notation are accepted too
(``∧ ∨ ¬ ⇒ □ ◇ ≤ ≥``, slots ``β1`` and ``λ10``). A primed signal
``BG'`` reads as the derivative signal ``dBG``. ``te`` is the end of
the trace (an infinite upper bound).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable

from .ast import (
    And,
    Atom,
    Const,
    Eventually,
    Formula,
    Globally,
    Implies,
    Not,
    Or,
    Prop,
    Since,
    Slot,
    signals,
)


class STLSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownSignalError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


_SYMBOLS = {
    "->": "IMPLIES", "=>": "IMPLIES", "⇒": "IMPLIES", "→": "IMPLIES",
    "&&": "AND", "∧": "AND", "&": "AND",
    "||": "OR", "∨": "OR", "|": "OR",
    "!": "NOT", "¬": "NOT", "~": "NOT",
    "<=": "CMP", ">=": "CMP", "≤": "CMP", "≥": "CMP", "==": "CMP", "=": "CMP", "<": "CMP", ">": "CMP",
    "(": "LPAREN", ")": "RPAREN", "[": "LBRACK", "]": "RBRACK", ",": "COMMA", "-": "MINUS",
    "□": "ALWAYS", "◇": "EVENTUALLY", "♦": "EVENTUALLY",
}
_CMP_CANON = {"≤": "<=", "≥": ">=", "=": "=="}
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+) |
    (?P<nl>\n) |
    (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?) |
    (?P<slot>\?[A-Za-z_][A-Za-z0-9_]*|β\d+|λ\d+) |
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*'?) |
    (?P<sym>->|=>|&&|\|\||<=|>=|==|[⇒→∧&∨|!¬~≤≥=<>()\[\],\-□◇♦])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if not m:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "number":
            tokens.append(Token("NUMBER", value, line, col))
        elif kind == "slot":
            tokens.append(Token("SLOT", value, line, col))
        elif kind == "ident":
            tokens.append(Token("IDENT", value, line, col))
        elif kind == "sym":
            tokens.append(Token(_SYMBOLS[value], value, line, col))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


def slot_name(text: str) -> str:
    if text.startswith("?"):
        return text[1:]
    if text.startswith("β"):
        return "b" + text[1:]
    return "lambda" + text[1:]


def signal_name(ident: str) -> str:
    return "d" + ident[:-1] if ident.endswith("'") else ident


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise STLSyntaxError(message, tok.line, tok.column)

    def take(self, kind: str) -> Token:
        tok = self.tok
        if tok.kind != kind:
            self.error(f"expected {kind}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.formula()
        if self.tok.kind != "EOF":
            self.error(f"unexpected {self.tok.text!r}")
        return f

    def formula(self) -> Formula:
        left = self.disjunction()
        if self.tok.kind == "IMPLIES":
            self.i += 1
            return Implies(left, self.formula())
        return left

    def disjunction(self) -> Formula:
        parts = [self.conjunction()]
        while self.tok.kind == "OR":
            self.i += 1
            parts.append(self.conjunction())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conjunction(self) -> Formula:
        parts = [self.since()]
        while self.tok.kind == "AND":
            self.i += 1
            parts.append(self.since())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def since(self) -> Formula:
        left = self.unary()
        while self.tok.kind == "IDENT" and self.tok.text == "S":
            self.i += 1
            left = Since(left, self.unary())
        return left

    def _is_temporal(self) -> bool:
        tok = self.tok
        if tok.kind in ("ALWAYS", "EVENTUALLY"):
            return True
        return tok.kind == "IDENT" and tok.text in ("G", "F") and self.tokens[self.i + 1].kind == "LBRACK"

    def unary(self) -> Formula:
        tok = self.tok
        if tok.kind == "NOT":
            self.i += 1
            return Not(self.unary())
        if self._is_temporal():
            self.i += 1
            is_g = tok.text in ("G", "□")
            if self.tok.kind == "LBRACK":
                self.i += 1
                lo = self.bound()
                self.take("COMMA")
                hi = self.bound()
                self.take("RBRACK")
            else:
                lo, hi = 0.0, math.inf
            child = self.unary()
            try:
                return Globally(lo, hi, child) if is_g else Eventually(lo, hi, child)
            except ValueError as exc:
                self.error(str(exc), tok)
        if tok.kind == "LPAREN":
            self.i += 1
            f = self.formula()
            self.take("RPAREN")
            return f
        if tok.kind == "IDENT":
            if tok.text == "S":
                self.error("'S' needs a left operand", tok)
            self.i += 1
            name = signal_name(tok.text)
            if self.tok.kind == "CMP":
                op = self.tok.text
                self.i += 1
                return Atom(name, _CMP_CANON.get(op, op), self.threshold())
            return Prop(name)
        self.error(f"unexpected {tok.text or 'end of input'!r}")

    def bound(self) -> float:
        tok = self.tok
        if tok.kind == "NUMBER":
            self.i += 1
            return float(tok.text)
        if tok.kind == "IDENT" and tok.text in ("t0", "te", "inf"):
            self.i += 1
            return 0.0 if tok.text == "t0" else math.inf
        self.error("expected interval bound")

    def threshold(self):
        tok = self.tok
        if tok.kind == "MINUS":
            self.i += 1
            num = self.take("NUMBER")
            return -float(num.text)
        if tok.kind == "NUMBER":
            self.i += 1
            return float(tok.text)
        if tok.kind == "SLOT":
            self.i += 1
            return Slot(slot_name(tok.text))
        if tok.kind == "IDENT":
            self.i += 1
            return Const(tok.text)
        self.error("expected threshold")


def parse(text: str, known_signals: Iterable[str] | None = None) -> Formula:
    """Parse ``text``; with ``known_signals`` given, unknown signal names are rejected."""
    f = _Parser(text).parse()
    if known_signals is not None:
        unknown = signals(f) - set(known_signals)
        if unknown:
            raise UnknownSignalError(f"unknown signal(s): {', '.join(sorted(unknown))}")
    return f


def parse_rule_file(text: str, known_signals: Iterable[str] | None = None) -> list[Formula]:
    """One formula per non-empty line; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append(parse(line, known_signals))
        except STLSyntaxError as exc:
            raise STLSyntaxError(str(exc).rsplit(" (line", 1)[0], lineno, exc.column) from None
    return out


# -- printing ----------------------------------------------------------------

_PREC = {Implies: 1, Or: 2, And: 3, Since: 4}
_ASCII = {"and": " && ", "or": " || ", "implies": " -> ", "not": "!", "since": " S ", "G": "G", "F": "F"}
_PAPER = {"and": "∧", "or": "∨", "implies": "⇒", "not": "¬", "since": " S ", "G": "G", "F": "F"}


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _threshold(thr, paper: bool) -> str:
    if isinstance(thr, Slot):
        if paper and re.fullmatch(r"b\d+", thr.name):
            return "β" + thr.name[1:]
        if paper and re.fullmatch(r"lambda\d+", thr.name):
            return "λ" + thr.name[6:]
        return "?" + thr.name
    if isinstance(thr, Const):
        return thr.name
    return _num(thr)


def _signal(name: str, paper: bool) -> str:
    if paper and name in ("dBG", "dIOB"):
        return name[1:] + "'"
    return name


def _bounds(lo: float, hi: float) -> str:
    if lo == 0 and math.isinf(hi):
        return "[t0,te]"
    return f"[{_num(lo)},{'te' if math.isinf(hi) else _num(hi)}]"


def to_text(f: Formula, style: str = "ascii") -> str:
    """Render ``f``; ``parse(to_text(f)) == f`` for both styles."""
    paper = style == "paper"
    sym = _PAPER if paper else _ASCII

    def prec(g):
        return _PREC.get(type(g), 5)

    def wrap(g, need: bool) -> str:
        s = render(g)
        return f"({s})" if need else s

    def render(g) -> str:
        if isinstance(g, Atom):
            op = g.op
            if paper and op == "==":
                op = "="
            space = "" if paper else " "
            return f"{_signal(g.signal, paper)}{space}{op}{space}{_threshold(g.threshold, paper)}"
        if isinstance(g, Prop):
            return _signal(g.signal, paper)
        if isinstance(g, Not):
            return sym["not"] + wrap(g.child, not isinstance(g.child, Prop))
        if isinstance(g, (Globally, Eventually)):
            op = sym["G"] if isinstance(g, Globally) else sym["F"]
            return f"{op}{_bounds(g.lo, g.hi)}({render(g.child)})"
        if isinstance(g, (And, Or)):
            joiner = sym["and"] if isinstance(g, And) else sym["or"]
            p = prec(g)
            return joiner.join(wrap(c, prec(c) <= p) for c in g.children)
        if isinstance(g, Implies):
            return wrap(g.left, prec(g.left) <= 1) + sym["implies"] + wrap(g.right, prec(g.right) < 1)
        if isinstance(g, Since):
            return wrap(g.left, prec(g.left) < 4) + sym["since"] + wrap(g.right, prec(g.right) <= 4)
        raise TypeError(f"not a formula: {g!r}")

    return render(f)
