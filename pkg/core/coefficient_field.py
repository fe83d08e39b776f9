"""
Construcción, evaluación y validación de campos de coeficientes periódicos.
"""
from dataclasses import replace
from typing import Sequence

import numpy as np

from core.errors import ConfigError, ExpressionEvaluationError
from core.expression_parser import Expr, parse_expr
from core.logger import logger
from core.symbolic import add, evaluate, gradient, hessian, is_zero, mul
from models.lab_models import CoefficientField, FieldValidationReport

PERIODICITY_TOLERANCE = 1e-12
N_TIME_SAMPLES = 64


def build_field(d: int, T: float, Q: Sequence[Sequence[str]],
                b: Sequence[str]) -> CoefficientField:
    """
    Parsea las expresiones de un campo y verifica su estructura.

    Args:
        d: Dimensión (1 o 2)
        T: Período
        Q: Matriz d×d de textos de expresión
        b: Vector de d textos de expresión

    Returns:
        CoefficientField sin validar (eta0 = 0)
    """
    if d not in (1, 2):
        raise ConfigError(f"Dimensión no soportada: {d} (solo 1 o 2)")
    if not T > 0:
        raise ConfigError(f"El período debe ser positivo: {T}")
    if len(Q) != d or any(len(row) != d for row in Q):
        raise ConfigError(f"Q debe ser una matriz {d}x{d}")
    if len(b) != d:
        raise ConfigError(f"b debe tener {d} componentes")

    Q_expr = tuple(tuple(parse_expr(src) for src in row) for row in Q)
    b_expr = tuple(parse_expr(src) for src in b)

    if d == 2:
        for i, j in ((0, 1), (1, 0)):
            if not is_zero(Q_expr[i][j]):
                raise ConfigError(
                    f"Q[{i}][{j}] debe ser 0: en d=2 solo se admite difusión diagonal")
    return CoefficientField(d=d, T=float(T), Q=Q_expr, b=b_expr)


def evaluate_on(e: Expr, t, X: np.ndarray) -> np.ndarray:
    """Evalúa una expresión en los puntos X (forma (N, d)) al tiempo t."""
    X = np.atleast_2d(X)
    env = {f"x{i + 1}": X[:, i] for i in range(X.shape[1])}
    env['t'] = t
    value = evaluate(e, env)
    shape = np.broadcast(np.asarray(t), X[:, 0]).shape
    return np.array(np.broadcast_to(value, shape), dtype=float)


def diffusion_at(c: CoefficientField, t, X: np.ndarray) -> np.ndarray:
    """Matrices Q(t, x) con forma (N, d, d)."""
    X = np.atleast_2d(X)
    n = np.broadcast(np.asarray(t), X[:, 0]).shape[0]
    out = np.empty((n, c.d, c.d))
    for i in range(c.d):
        for j in range(c.d):
            out[:, i, j] = evaluate_on(c.Q[i][j], t, X)
    return out


def drift_at(c: CoefficientField, t, X: np.ndarray) -> np.ndarray:
    """Vectores b(t, x) con forma (N, d)."""
    return np.column_stack([evaluate_on(bi, t, X) for bi in c.b])


def _sample_points(d: int, sample_R: float, n_samples: int) -> np.ndarray:
    axis = np.linspace(-sample_R, sample_R, n_samples)
    if d == 1:
        return axis.reshape(-1, 1)
    x1, x2 = np.meshgrid(axis, axis, indexing='ij')
    return np.column_stack([x1.ravel(), x2.ravel()])


def validate_field(c: CoefficientField, sample_R: float,
                   n_samples: int = 41) -> FieldValidationReport:
    """
    Muestrea la elipticidad y la periodicidad del campo.

    Toma 64 tiempos uniformes en [0, T) y una malla uniforme en
    [-sample_R, sample_R]^d. Acepta si eta0 > 0 y la violación relativa de
    periodicidad es <= 1e-12.

    Returns:
        FieldValidationReport con el campo actualizado (eta0 fijado)
    """
    if not sample_R > 0:
        raise ConfigError(f"sample_R debe ser positivo: {sample_R}")

    X = _sample_points(c.d, sample_R, n_samples)
    times = np.arange(N_TIME_SAMPLES) * c.T / N_TIME_SAMPLES
    entries = [c.Q[i][j] for i in range(c.d) for j in range(c.d)] + list(c.b)

    eta0 = np.inf
    eta_witness = None
    worst_violation = 0.0
    violation_witness = None
    errors = []

    for t in times:
        try:
            Qs = diffusion_at(c, t, X)
            eig = np.linalg.eigvalsh(Qs)[:, 0]
            k = int(np.argmin(eig))
            if eig[k] < eta0:
                eta0 = float(eig[k])
                eta_witness = _location(t, X[k])

            for e in entries:
                now = evaluate_on(e, t, X)
                later = evaluate_on(e, t + c.T, X)
                scale = np.maximum(np.maximum(np.abs(now), np.abs(later)), 1.0)
                rel = np.abs(now - later) / scale
                k = int(np.argmax(rel))
                if rel[k] > worst_violation:
                    worst_violation = float(rel[k])
                    violation_witness = _location(t, X[k])
        except ExpressionEvaluationError as exc:
            errors.append(str(exc))
            logger.warning("Error de evaluación al validar el campo: %s", exc)

    eta0 = max(eta0, 0.0) if np.isfinite(eta0) else 0.0
    periodic = worst_violation <= PERIODICITY_TOLERANCE
    accepted = eta0 > 0 and periodic and not errors

    witness = None
    if not accepted:
        witness = eta_witness if eta0 <= 0 else violation_witness

    logger.info("Campo validado: eta0=%.6g, periodicidad=%.3g, aceptado=%s",
                eta0, worst_violation, accepted)
    return FieldValidationReport(
        accepted=accepted,
        eta0=eta0,
        max_periodicity_violation=worst_violation,
        witness=witness,
        errors=errors,
        samples=len(times) * len(X),
        field=replace(c, eta0=eta0),
    )


def _location(t: float, x: np.ndarray) -> dict:
    loc = {'t': float(t)}
    for i, xi in enumerate(np.atleast_1d(x)):
        loc[f'x{i + 1}'] = float(xi)
    return loc


# ---------- Operador A(t) ----------

def operator_expression(c: CoefficientField, f: Expr) -> Expr:
    """Expresión simbólica de A(t)f = Tr(Q D²f) + ⟨b, ∇f⟩."""
    grad = gradient(f, c.d)
    hess = hessian(f, c.d)
    result = None
    for i in range(c.d):
        for j in range(c.d):
            term = mul(c.Q[i][j], hess[i][j])
            result = term if result is None else add(result, term)
    for i in range(c.d):
        result = add(result, mul(c.b[i], grad[i]))
    return result


def apply_operator(c: CoefficientField, f: Expr, t, x):
    """
    Evalúa (A(t)f)(x) con derivadas simbólicas.

    Args:
        c: Campo de coeficientes
        f: Función dos veces diferenciable
        t: Tiempo (escalar o arreglo)
        x: Punto (escalar en d=1) o arreglo de puntos (N, d)

    Returns:
        float para un punto, ndarray para varios
    """
    expr = operator_expression(c, f)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 0 or (X.ndim == 1 and X.shape[0] == c.d)
    X = X.reshape(-1, c.d)
    values = evaluate_on(expr, t, X)
    return float(values[0]) if single else values
