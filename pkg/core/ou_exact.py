"""
Soluciones exactas del Ornstein-Uhlenbeck periódico en d=1.

Con U(r,s) = exp(∫_s^r a):
    media    = U(t,s)·x + ∫_s^t f(r) U(r,s) dr
    varianza = 2 ∫_s^t q(r) U(r,s)² dr
y G(t,s)φ(x) = E φ(media + √varianza·Z), Z normal estándar.
"""
import warnings
from typing import Callable, Tuple, Union

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from core.errors import QuadratureError, TimeGridError
from core.expression_parser import Expr, free_variables
from core.symbolic import evaluate
from models.lab_models import OUParams

QUAD_TOL = 1e-10
HERMITE_NODES = 80


def _scalar(e: Expr, r: float) -> float:
    return float(evaluate(e, {'t': r}))


def _quad(func: Callable[[float], float], lo: float, hi: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter('error', IntegrationWarning)
        try:
            value, _ = quad(func, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        except IntegrationWarning as exc:
            raise QuadratureError(f"Cuadratura sin convergencia en [{lo}, {hi}]: {exc}") from exc
    return float(value)


def _log_U(p: OUParams, r: float, s: float) -> float:
    """log U(r,s) = ∫_s^r a(u) du."""
    if 't' not in free_variables(p.a):
        return _scalar(p.a, s) * (r - s)
    if r == s:
        return 0.0
    return _quad(lambda u: _scalar(p.a, u), s, r)


def _U(p: OUParams, r: float, s: float) -> float:
    return float(np.exp(_log_U(p, r, s)))


def _mean_part(p: OUParams, s: float, t: float) -> float:
    return _quad(lambda r: _scalar(p.f, r) * _U(p, r, s), s, t)


def _variance_part(p: OUParams, s: float, t: float) -> float:
    return 2.0 * _quad(lambda r: _scalar(p.q, r) * _U(p, r, s) ** 2, s, t)


def ou_exact_moments(p: OUParams, s: float, t: float, x: float) -> Tuple[float, float]:
    """
    Media y varianza de la ley p_{t,s,x}.

    Returns:
        (media, varianza); t = s retorna (x, 0)
    """
    if t < s:
        raise TimeGridError(f"Se requiere s <= t (s={s}, t={t})")
    if t == s:
        return float(x), 0.0
    mean = _U(p, t, s) * x + _mean_part(p, s, t)
    var = _variance_part(p, s, t)
    return float(mean), float(var)


def ou_exact_measure(p: OUParams, s: float) -> Tuple[float, float]:
    """
    Media c_s y varianza σ²_s de la medida periódica μ_s.

    La cola se suma exactamente como serie geométrica por períodos con razón
    ρ = U(s+T, s).
    """
    T = p.period
    rho = _U(p, s + T, s)
    if rho >= 1.0:
        raise QuadratureError(
            f"La media de a sobre un período es >= 0 (ρ={rho:.6g}): la medida no existe")
    mean = _mean_part(p, s, s + T) / (1.0 - rho)
    var = _variance_part(p, s, s + T) / (1.0 - rho ** 2)
    return float(mean), float(var)


def ou_measure_consistency(p: OUParams, s: float, t: float) -> Tuple[float, float]:
    """
    Residuos de c_s = U(t,s)c_t + m(t,s) y σ²_s = U(t,s)²σ²_t + v(t,s).
    """
    c_s, v_s = ou_exact_measure(p, s)
    c_t, v_t = ou_exact_measure(p, t)
    u = _U(p, t, s)
    m, v = ou_exact_moments(p, s, t, 0.0)
    return abs(c_s - (u * c_t + m)), abs(v_s - (u ** 2 * v_t + v))


def ou_expectation(p: OUParams, s: float, t: float, x,
                   phi: Union[Expr, Callable[[np.ndarray], np.ndarray]]) -> np.ndarray:
    """
    G(t,s)φ(x) = E φ(media + √varianza·Z) por cuadratura de Gauss-Hermite.

    Args:
        x: Punto o arreglo de puntos
        phi: Expresión en x1 o función vectorizada
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    u = _U(p, t, s) if t > s else 1.0
    shift, var = ou_exact_moments(p, s, t, 0.0)
    means = u * xs + shift

    if isinstance(phi, Expr):
        def func(y):
            return np.broadcast_to(evaluate(phi, {'x1': y, 't': t}), y.shape)
    else:
        func = phi

    if var == 0.0:
        values = np.asarray(func(means), dtype=float)
    else:
        z, w = np.polynomial.hermite_e.hermegauss(HERMITE_NODES)
        w = w / np.sqrt(2.0 * np.pi)
        y = means[:, None] + np.sqrt(var) * z[None, :]
        values = np.asarray(func(y), dtype=float) @ w
    return values if np.ndim(x) else float(values[0])
