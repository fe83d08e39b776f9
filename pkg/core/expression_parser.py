"""
Parser de expresiones para coeficientes y funciones de Lyapunov.

Gramática (precedencia ^ > menos unario > *,/ > +,-; ^ asociativo a derecha):
    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ['^' factor]
    atom   := number | ident | '(' expr ')' | func '(' expr ')'
Identificadores: t, x1, x2, pi.
"""
import math
import re
from dataclasses import dataclass
from typing import List, Tuple

from core.errors import ArityError, ExpressionSyntaxError, UnknownIdentifierError


VARIABLES = ("t", "x1", "x2")
CONSTANTS = ("pi",)
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh", "abs")
# sign solo aparece como derivada de abs; se imprime y se vuelve a parsear
INTERNAL_FUNCTIONS = ("sign",)


# ---------- Nodos del árbol ----------

@dataclass(frozen=True)
class Expr:
    """Nodo base del árbol de sintaxis."""

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Const(Expr):
    name: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


# ---------- Tokenizador ----------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)

_EOF = "EOF"


def _tokenize(source: str) -> List[Tuple[str, str, int]]:
    """Divide la fuente en tokens (tipo, texto, offset en bytes)."""
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExpressionSyntaxError(
                f"Carácter inesperado {source[pos]!r}",
                _byte_offset(source, pos), source)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), _byte_offset(source, pos)))
        pos = m.end()
    tokens.append((_EOF, "", _byte_offset(source, len(source))))
    return tokens


def _byte_offset(source: str, char_pos: int) -> int:
    return len(source[:char_pos].encode("utf-8"))


class _Parser:
    """Descenso recursivo sobre la lista de tokens."""

    def __init__(self, source: str):
        self._source = source
        self._tokens = _tokenize(source)
        self._pos = 0

    def _peek(self) -> Tuple[str, str, int]:
        return self._tokens[self._pos]

    def _advance(self) -> Tuple[str, str, int]:
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def _expect(self, text: str) -> None:
        kind, value, offset = self._peek()
        if value != text or kind == _EOF:
            found = "fin de la expresión" if kind == _EOF else repr(value)
            raise ExpressionSyntaxError(
                f"Se esperaba {text!r}, se encontró {found}",
                offset, self._source)
        self._advance()

    def parse(self) -> Expr:
        node = self._expr()
        kind, value, offset = self._peek()
        if kind != _EOF:
            raise ExpressionSyntaxError(
                f"Token sobrante {value!r}", offset, self._source)
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while self._peek()[1] in ("+", "-") and self._peek()[0] == "op":
            op = self._advance()[1]
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._factor()
        while self._peek()[1] in ("*", "/") and self._peek()[0] == "op":
            op = self._advance()[1]
            node = BinOp(op, node, self._factor())
        return node

    def _factor(self) -> Expr:
        if self._peek()[0] == "op" and self._peek()[1] == "-":
            self._advance()
            return Neg(self._factor())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self._peek()[0] == "op" and self._peek()[1] == "^":
            self._advance()
            return BinOp("^", base, self._factor())
        return base

    def _atom(self) -> Expr:
        kind, value, offset = self._peek()
        if kind == "number":
            self._advance()
            number = float(value)
            if not math.isfinite(number):
                raise ExpressionSyntaxError(
                    f"Literal numérico fuera de rango {value!r}", offset, self._source)
            return Num(number)
        if kind == "ident":
            self._advance()
            return self._identifier(value, offset)
        if kind == "op" and value == "(":
            self._advance()
            node = self._expr()
            self._expect(")")
            return node
        found = "fin de la expresión" if kind == _EOF else repr(value)
        raise ExpressionSyntaxError(
            f"Se esperaba un operando, se encontró {found}",
            offset, self._source)

    def _identifier(self, name: str, offset: int) -> Expr:
        if name in VARIABLES:
            return Var(name)
        if name in CONSTANTS:
            return Const(name)
        if name in FUNCTIONS or name in INTERNAL_FUNCTIONS:
            kind, value, next_offset = self._peek()
            if value != "(":
                raise ArityError(
                    f"La función {name!r} requiere exactamente 1 argumento",
                    next_offset, self._source)
            self._advance()
            arg = self._expr()
            kind, value, next_offset = self._peek()
            if value == ",":
                raise ArityError(
                    f"La función {name!r} requiere exactamente 1 argumento",
                    next_offset, self._source)
            self._expect(")")
            return Call(name, arg)
        raise UnknownIdentifierError(
            f"Identificador desconocido {name!r}", offset, self._source)


def parse_expr(source: str) -> Expr:
    """
    Parsea el texto de una expresión.

    Args:
        source: Texto no vacío sobre el alfabeto declarado

    Returns:
        Árbol de sintaxis (nodos inmutables)
    """
    if source is None or not source.strip():
        raise ExpressionSyntaxError("Expresión vacía", 0, source or "")
    return _Parser(source).parse()


# ---------- Impresión ----------

def _format_number(value: float) -> str:
    if value < 0:
        return f"(-{repr(-float(value))})"
    return repr(float(value))


def to_source(e: Expr) -> str:
    """Serializa un árbol a texto que vuelve a parsear al mismo árbol."""
    if isinstance(e, Num):
        return _format_number(e.value)
    if isinstance(e, (Var, Const)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    raise TypeError(f"Nodo no soportado: {type(e).__name__}")


def free_variables(e: Expr) -> frozenset:
    """Variables que aparecen en la expresión."""
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, (Num, Const)):
        return frozenset()
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, Call):
        return free_variables(e.arg)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    raise TypeError(f"Nodo no soportado: {type(e).__name__}")
