"""
Jerarquía de errores del laboratorio.
Los errores de configuración terminan la CLI con código 2 y los numéricos
con código 3.
"""
from typing import Optional


class LabError(Exception):
    """Raíz de todos los errores del laboratorio."""


# ---------- Configuración (código de salida 2) ----------

class ConfigError(LabError, ValueError):
    """Error en los datos de entrada: expresiones o archivo de configuración."""


class ExpressionSyntaxError(ConfigError):
    """Error de sintaxis en una expresión, con el offset en bytes."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        self.detail = message
        super().__init__(f"{message} (offset {offset})")


class UnknownIdentifierError(ExpressionSyntaxError):
    """Identificador fuera del alfabeto {t, x1, x2, pi} o función desconocida."""


class ArityError(ExpressionSyntaxError):
    """Función llamada con un número de argumentos distinto de uno."""


class ConfigSchemaError(ConfigError):
    """El archivo de configuración no cumple el esquema JSON."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# ---------- Numéricos (código de salida 3) ----------

class NumericalError(LabError, ArithmeticError):
    """Fallo numérico durante un experimento."""


class ExpressionEvaluationError(NumericalError):
    """Evaluación fuera del dominio (log/sqrt de no positivos, desbordes)."""

    def __init__(self, message: str, location: Optional[dict] = None):
        self.location = location or {}
        where = ", ".join(f"{k}={v:.6g}" for k, v in self.location.items())
        super().__init__(f"{message} en ({where})" if where else message)


class TimeGridError(NumericalError):
    """Tiempos no alineados con la malla temporal de paso dt."""


class GridMismatchError(NumericalError):
    """Vectores nodales definidos sobre mallas distintas."""


class PropagationError(NumericalError):
    """Falló la resolución lineal de un paso del esquema."""

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} (paso {step})")


class SupportViolationError(NumericalError):
    """La función de prueba no tiene soporte dentro de |x| <= R/2."""


class QuadratureError(NumericalError):
    """La cuadratura adaptativa no alcanzó la tolerancia pedida."""


class DegenerateSpectrumError(NumericalError):
    """Brecha espectral menor que 1e-8: el autovalor principal no es simple."""


class SizeOverflowError(NumericalError):
    """Demasiados nodos para materializar una matriz densa."""
