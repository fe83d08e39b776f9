"""
Evaluación vectorizada y derivación simbólica de expresiones.
"""
import math
from functools import singledispatch
from typing import Mapping, Union

import numpy as np

from core.errors import ExpressionEvaluationError
from core.expression_parser import (
    BinOp, Call, Const, Expr, Neg, Num, Var, VARIABLES
)

ArrayLike = Union[float, np.ndarray]

ZERO = Num(0.0)
ONE = Num(1.0)

_CONSTANT_VALUES = {"pi": math.pi}


# ---------- Evaluación ----------

def evaluate(e: Expr, env: Mapping[str, ArrayLike]) -> ArrayLike:
    """
    Evalúa la expresión con broadcasting de numpy.

    Args:
        e: Expresión
        env: Valores de t, x1, x2 (escalares o arreglos)

    Returns:
        float si todas las entradas son escalares, ndarray en otro caso
    """
    arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
    with np.errstate(over="raise", divide="raise", invalid="raise"):
        try:
            value = _eval(e, arrays)
        except FloatingPointError as exc:
            raise ExpressionEvaluationError(
                f"Desborde o valor inválido al evaluar {e}: {exc}",
                _first_location(arrays)) from exc
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value)
    return value


def _first_location(env: Mapping[str, np.ndarray]) -> dict:
    return {k: float(np.ravel(v)[0]) for k, v in env.items() if np.size(v)}


def _domain_error(func: str, arg: np.ndarray, env: Mapping[str, np.ndarray]):
    bad = np.argwhere(np.broadcast_to(arg, np.broadcast(arg, *env.values()).shape) <= 0)
    location = {}
    if bad.size:
        idx = tuple(bad[0])
        shape = np.broadcast(arg, *env.values()).shape
        for name, values in env.items():
            location[name] = float(np.broadcast_to(values, shape)[idx])
    raise ExpressionEvaluationError(
        f"{func} de un argumento no positivo", location)


@singledispatch
def _eval(e: Expr, env):
    raise TypeError(f"Nodo no soportado: {type(e).__name__}")


@_eval.register
def _(e: Num, env):
    return np.float64(e.value)


@_eval.register
def _(e: Const, env):
    return np.float64(_CONSTANT_VALUES[e.name])


@_eval.register
def _(e: Var, env):
    if e.name not in env:
        raise ExpressionEvaluationError(f"Variable {e.name!r} sin valor")
    return env[e.name]


@_eval.register
def _(e: Neg, env):
    return np.negative(_eval(e.operand, env))


@_eval.register
def _(e: BinOp, env):
    left = _eval(e.left, env)
    right = _eval(e.right, env)
    if e.op == "+":
        return np.add(left, right)
    if e.op == "-":
        return np.subtract(left, right)
    if e.op == "*":
        return np.multiply(left, right)
    if e.op == "/":
        return np.divide(left, right)
    if e.op == "^":
        return np.power(left, right)
    raise TypeError(f"Operador desconocido {e.op!r}")


@_eval.register
def _(e: Call, env):
    arg = np.asarray(_eval(e.arg, env), dtype=float)
    if e.func in ("log", "sqrt") and np.any(arg <= 0):
        _domain_error(e.func, arg, env)
    return _UNARY[e.func](arg)


_UNARY = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
    "sign": np.sign,
}


# ---------- Constructores con simplificación ----------

def _is_num(e: Expr, value: float = None) -> bool:
    return isinstance(e, Num) and (value is None or e.value == value)


def num(value: float) -> Expr:
    if value < 0:
        return Neg(Num(-value))
    return Num(float(value))


def _const_value(e: Expr):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg) and isinstance(e.operand, Num):
        return -e.operand.value
    return None


def add(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return num(va + vb)
    if va == 0:
        return b
    if vb == 0:
        return a
    if isinstance(b, Neg):
        return sub(a, b.operand)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return num(va - vb)
    if vb == 0:
        return a
    if va == 0:
        return neg(b)
    if a == b:
        return ZERO
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va is not None and vb is not None:
        return num(va * vb)
    if va == 0 or vb == 0:
        return ZERO
    if va == 1:
        return b
    if vb == 1:
        return a
    if va == -1:
        return neg(b)
    if vb == -1:
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    va, vb = _const_value(a), _const_value(b)
    if va == 0:
        return ZERO
    if vb == 1:
        return a
    if va is not None and vb is not None and vb != 0:
        return num(va / vb)
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    vb = _const_value(b)
    if vb == 0:
        return ONE
    if vb == 1:
        return a
    return BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    va = _const_value(a)
    if va is not None:
        return num(-va)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def call(func: str, a: Expr) -> Expr:
    return Call(func, a)


# ---------- Derivación ----------

def differentiate(e: Expr, var: str) -> Expr:
    """
    Derivada simbólica respecto de t, x1 o x2.
    Convención: d/du abs(u) = sign(u), con sign(0) = 0.
    """
    if var not in VARIABLES:
        raise ValueError(f"Variable de derivación no válida: {var!r}")
    return _diff(e, var)


@singledispatch
def _diff(e: Expr, var: str) -> Expr:
    raise TypeError(f"Nodo no soportado: {type(e).__name__}")


@_diff.register
def _(e: Num, var):
    return ZERO


@_diff.register
def _(e: Const, var):
    return ZERO


@_diff.register
def _(e: Var, var):
    return ONE if e.name == var else ZERO


@_diff.register
def _(e: Neg, var):
    return neg(_diff(e.operand, var))


@_diff.register
def _(e: BinOp, var):
    a, b = e.left, e.right
    da, db = _diff(a, var), _diff(b, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
    if e.op == "^":
        if _is_constant(b, var):
            # n * a^(n-1) * a'
            return mul(mul(b, power(a, sub(b, ONE))), da)
        return mul(e, add(mul(db, call("log", a)), div(mul(b, da), a)))
    raise TypeError(f"Operador desconocido {e.op!r}")


@_diff.register
def _(e: Call, var):
    u = e.arg
    du = _diff(u, var)
    if _is_num(du, 0.0):
        return ZERO
    if e.func == "sin":
        outer = call("cos", u)
    elif e.func == "cos":
        outer = neg(call("sin", u))
    elif e.func == "exp":
        outer = e
    elif e.func == "log":
        return div(du, u)
    elif e.func == "sqrt":
        return div(du, mul(Num(2.0), e))
    elif e.func == "tanh":
        outer = sub(ONE, power(e, Num(2.0)))
    elif e.func == "abs":
        outer = call("sign", u)
    elif e.func == "sign":
        return ZERO
    else:
        raise TypeError(f"Función desconocida {e.func!r}")
    return mul(outer, du)


def _is_constant(e: Expr, var: str) -> bool:
    from core.expression_parser import free_variables
    return var not in free_variables(e)


def gradient(e: Expr, d: int) -> tuple:
    """Gradiente espacial (derivadas respecto de x1..xd)."""
    return tuple(differentiate(e, f"x{i + 1}") for i in range(d))


def hessian(e: Expr, d: int) -> tuple:
    """Matriz hessiana espacial como tupla de tuplas."""
    grad = gradient(e, d)
    return tuple(tuple(differentiate(grad[i], f"x{j + 1}") for j in range(d))
                 for i in range(d))


def is_zero(e: Expr) -> bool:
    """True si la expresión es la constante cero."""
    return _const_value(e) == 0
