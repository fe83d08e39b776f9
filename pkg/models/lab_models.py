"""
Modelos de datos del laboratorio de operadores de evolución.
Campos de coeficientes, mallas, núcleos de transición, familias de medidas
y reportes espectrales.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.expression_parser import Expr


# ---------- Campo de coeficientes ----------

@dataclass(frozen=True)
class CoefficientField:
    """Datos del operador A(t): difusión Q, deriva b, período T."""
    d: int
    T: float
    Q: Tuple[Tuple[Expr, ...], ...]
    b: Tuple[Expr, ...]
    eta0: float = 0.0          # se completa con validate_field

    @property
    def diffusion_diagonal(self) -> Tuple[Expr, ...]:
        return tuple(self.Q[i][i] for i in range(self.d))


@dataclass
class FieldValidationReport:
    """Resultado de validate_field."""
    accepted: bool
    eta0: float
    max_periodicity_violation: float
    witness: Optional[Dict[str, float]] = None
    errors: List[str] = field(default_factory=list)
    samples: int = 0
    field: Optional[CoefficientField] = None

    def to_dict(self) -> dict:
        return {
            'accepted': self.accepted,
            'eta0': self.eta0,
            'max_periodicity_violation': self.max_periodicity_violation,
            'witness': self.witness,
            'errors': list(self.errors),
            'samples': self.samples,
        }


@dataclass(frozen=True)
class OUParams:
    """Ornstein-Uhlenbeck dependiente del tiempo en d=1: q(t)φ'' + (a(t)x + f(t))φ'."""
    a: Expr
    f: Expr
    q: Expr
    period: float = 1.0


# ---------- Mallas y funciones de prueba ----------

@dataclass(frozen=True)
class Grid:
    """Malla tensorial uniforme sobre [-R, R]^d con el origen como nodo."""
    d: int
    R: float
    h: float

    def __post_init__(self):
        if self.h <= 0 or self.R <= 0:
            raise ValueError("La malla requiere R > 0 y h > 0")
        if self.d not in (1, 2):
            raise ValueError(f"Dimensión no soportada: {self.d}")
        half = self.R / self.h
        if abs(half - round(half)) > 1e-9 * max(1.0, half):
            raise ValueError(f"R={self.R} no es múltiplo de h={self.h}")

    @property
    def n_axis(self) -> int:
        """Nodos por eje (impar)."""
        return 2 * int(round(self.R / self.h)) + 1

    @property
    def size(self) -> int:
        return self.n_axis ** self.d

    @cached_property
    def axis(self) -> np.ndarray:
        half = int(round(self.R / self.h))
        return np.arange(-half, half + 1) * self.h

    @cached_property
    def points(self) -> np.ndarray:
        """Coordenadas de los nodos, forma (N, d), orden C."""
        if self.d == 1:
            return self.axis.reshape(-1, 1)
        x1, x2 = np.meshgrid(self.axis, self.axis, indexing='ij')
        return np.column_stack([x1.ravel(), x2.ravel()])

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.points ** 2, axis=1))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        n = self.n_axis
        idx = np.indices((n,) * self.d).reshape(self.d, -1)
        return np.any((idx == 0) | (idx == n - 1), axis=0)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def core_mask(self, fraction: float = 0.5) -> np.ndarray:
        """Nodos interiores con |x| <= fraction·R (bola inscrita)."""
        return (~self.boundary_mask) & (self.radius <= fraction * self.R + 1e-12)

    def core(self, fraction: float = 0.5) -> np.ndarray:
        return np.flatnonzero(self.core_mask(fraction))

    def env(self) -> Dict[str, np.ndarray]:
        """Variables espaciales para evaluar expresiones en los nodos."""
        return {f"x{i + 1}": self.points[:, i] for i in range(self.d)}

    def index_of(self, point) -> int:
        """Índice del nodo más cercano a un punto."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        k = np.clip(np.rint((p + self.R) / self.h).astype(int), 0, self.n_axis - 1)
        return int(np.ravel_multi_index(tuple(k), (self.n_axis,) * self.d))

    def nested_offsets(self, other: 'Grid') -> np.ndarray:
        """
        Índices en `other` de los nodos de esta malla.
        Requiere el mismo h y R <= other.R.
        """
        if abs(self.h - other.h) > 1e-12 or self.d != other.d or self.R > other.R + 1e-12:
            raise ValueError("Mallas no anidadas")
        shift = int(round((other.R - self.R) / self.h))
        idx = np.indices((self.n_axis,) * self.d).reshape(self.d, -1) + shift
        return np.ravel_multi_index(tuple(idx), (other.n_axis,) * self.d)


@dataclass
class TestFunction:
    """Función de prueba: expresión en x o valores nodales con su malla."""
    __test__ = False

    expr: Optional[Expr] = None
    values: Optional[np.ndarray] = None
    grid: Optional[Grid] = None
    name: str = ""
    bounded: bool = True
    compact_support: bool = False

    def __post_init__(self):
        if self.expr is None and self.values is None:
            raise ValueError("TestFunction requiere expr o values")
        if self.values is not None and self.grid is None:
            raise ValueError("Los valores nodales deben llevar su malla")

    def on_grid(self, grid: Grid, t: float = 0.0) -> np.ndarray:
        from core.errors import GridMismatchError
        from core.symbolic import evaluate
        if self.values is not None:
            if self.grid != grid:
                raise GridMismatchError(
                    f"La función {self.name!r} está definida sobre otra malla")
            return np.asarray(self.values, dtype=float)
        env = grid.env()
        env['t'] = t
        return np.broadcast_to(evaluate(self.expr, env), (grid.size,)).astype(float)


# ---------- Lyapunov ----------

@dataclass(frozen=True)
class LyapunovData:
    """Función de Lyapunov W y constantes de las condiciones de deriva."""
    W: Expr
    c: float = 1.0             # g(s) = c·s^gamma
    gamma: float = 2.0
    R0: Optional[float] = None
    lam: Optional[float] = None
    a: Optional[float] = None
    cc: Optional[float] = None
    tail: bool = False         # W solo vale para |x| >= R0; en la malla se suaviza

    def g(self, s):
        return self.c * np.power(s, self.gamma)


@dataclass
class MarginReport:
    """Resultado de un chequeo muestreado: sup del margen y su testigo."""
    condition: str
    accepted: Optional[bool]
    sup_margin: float = float('nan')
    witness: Optional[Dict[str, float]] = None
    samples: int = 0
    error: str = ""
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            'condition': self.condition,
            'accepted': self.accepted,
            'sup_margin': self.sup_margin,
            'witness': self.witness,
            'samples': self.samples,
        }
        if self.error:
            out['error'] = self.error
        out.update(self.extras)
        return out


@dataclass
class ComparisonSolution:
    """Solución de ζ' = -c·ζ^γ con su forma cerrada y la cota C(δ)."""
    c: float
    gamma: float
    zeta0: float
    times: np.ndarray
    values: np.ndarray
    closed_form: np.ndarray

    def bound(self, delta: float) -> float:
        """C(δ) = [c(γ-1)δ]^(-1/(γ-1)), independiente de ζ0."""
        if delta <= 0 or self.gamma <= 1:
            return float('inf')
        return float((self.c * (self.gamma - 1.0) * delta) ** (-1.0 / (self.gamma - 1.0)))

    def at(self, s: float) -> float:
        return float(np.interp(s, self.times, self.values))

    @property
    def max_relative_error(self) -> float:
        return float(np.max(np.abs(self.values - self.closed_form)
                            / np.abs(self.closed_form)))


@dataclass
class InequalityReport:
    """Resultado de supersolution_check: márgenes mínimos por desigualdad."""
    supersolution_margin: float
    beta_margin: float
    tolerance: float
    nodes: int
    correction_C: float = 0.0

    @property
    def holds(self) -> bool:
        return (self.supersolution_margin >= -self.tolerance
                and self.beta_margin >= -self.tolerance)

    def to_dict(self) -> dict:
        return {
            'supersolution_margin': self.supersolution_margin,
            'beta_margin': self.beta_margin,
            'tolerance': self.tolerance,
            'nodes': self.nodes,
            'correction_C': self.correction_C,
            'holds': self.holds,
        }


# ---------- Evolución ----------

@dataclass
class PropagationResult:
    """Valores nodales de G(t,s)φ."""
    grid: Grid
    s: float
    t: float
    values: np.ndarray
    positivity_guaranteed: bool = True


@dataclass
class TransitionRow:
    """Medida discreta p_{t,s,x}: pesos por nodo y masa absorbida."""
    grid: Grid
    index: int
    weights: np.ndarray
    defect: float

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Media y varianza por coordenada, condicionadas a la masa retenida."""
        m = self.total
        pts = self.grid.points
        mean = self.weights @ pts / m
        var = self.weights @ (pts - mean) ** 2 / m
        return mean, var

    def mass_in_ball(self, rho: float) -> float:
        return float(np.sum(self.weights[self.grid.radius <= rho + 1e-12]))


# ---------- Medidas ----------

def weighted_lp_norm(weights: np.ndarray, values: np.ndarray, p: float) -> float:
    """(Σ_i w_i |v_i|^p)^(1/p) para pesos de probabilidad w."""
    return float((weights @ np.abs(values) ** p) ** (1.0 / p))


@dataclass
class EvolutionMeasureFamily:
    """Familia T-periódica {μ_s} en una malla de fases."""
    grid: Grid
    period: float
    dt: float
    phases: np.ndarray
    weights: np.ndarray            # (m, N) pesos de probabilidad en toda la malla
    lambda1: float
    normalizations: np.ndarray     # por paso k del período
    spot_checks: Dict[float, float] = field(default_factory=dict)
    mismatch: bool = False

    def phase_index(self, s: float) -> int:
        from core.errors import TimeGridError
        phase = s % self.period
        spacing = self.period / len(self.phases)
        j = int(round(phase / spacing))
        if abs(j * spacing - phase) > 1e-9 * max(1.0, self.period):
            raise TimeGridError(f"La fase {s} no pertenece a la malla de fases")
        return j % len(self.phases)

    def weights_at(self, s: float) -> np.ndarray:
        return self.weights[self.phase_index(s)]

    def mean(self, s: float, values: np.ndarray) -> float:
        """m_sφ = ⟨w^(s), φ⟩."""
        return float(self.weights_at(s) @ values)

    def normalization_product(self, s: float, t: float) -> float:
        """Producto de normalizaciones de los pasos entre s y t."""
        n_period = len(self.normalizations)
        k_s = int(round(s / self.dt))
        k_t = int(round(t / self.dt))
        ks = np.arange(k_s, k_t) % n_period
        return float(np.prod(self.normalizations[ks]))


# ---------- Espectral ----------

@dataclass
class SpectralReport:
    """Datos de Floquet dominantes de V(s) sobre los nodos interiores."""
    s: float
    period: float
    lambda1: float
    lambda2_abs: float
    psi: np.ndarray
    w: np.ndarray
    residuals: Dict[str, float] = field(default_factory=dict)
    degenerate: bool = False
    method: str = "dense"

    @property
    def gap_ratio(self) -> float:
        return self.lambda2_abs / self.lambda1

    @property
    def omega0(self) -> float:
        if self.lambda2_abs <= 0:
            return float('-inf')
        return float(np.log(self.gap_ratio) / self.period)

    def to_dict(self) -> dict:
        return {
            's': self.s,
            'lambda1': self.lambda1,
            'lambda2_abs': self.lambda2_abs,
            'gap_ratio': self.gap_ratio,
            'omega0': self.omega0,
            'degenerate': self.degenerate,
            'method': self.method,
            'residuals': dict(self.residuals),
        }


@dataclass
class DecayFit:
    """Ajuste log-lineal de una curva de error e_k."""
    tag: str
    rate: Optional[float]
    k_range: Optional[Tuple[int, int]]
    r_squared: float
    reliable: bool
    status: str = "ok"


@dataclass
class DecayReport:
    """Tasas de decaimiento ajustadas por norma y la referencia ω0."""
    omega0: float
    fits: Dict[str, DecayFit]
    curves: Dict[str, np.ndarray]
    ks: np.ndarray
    phi_name: str = ""

    def to_dict(self) -> dict:
        return {
            'phi': self.phi_name,
            'omega0': self.omega0,
            'fits': {
                tag: {
                    'rate': f.rate,
                    'k_range': list(f.k_range) if f.k_range else None,
                    'r_squared': f.r_squared,
                    'reliable': f.reliable,
                    'status': f.status,
                }
                for tag, f in self.fits.items()
            },
        }


# ---------- Monte Carlo ----------

@dataclass
class MCEstimate:
    """Estimación de E φ(Z_t) con error estándar de pares antitéticos."""
    mean: float
    stderr: float
    n: int
    seed: int
    em_dt: float
    exploded: int = 0
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            'mean': self.mean,
            'stderr': self.stderr,
            'n': self.n,
            'seed': self.seed,
            'em_dt': self.em_dt,
            'exploded': self.exploded,
            'flagged': self.flagged,
            'representation': 'reversed-schedule',
        }
