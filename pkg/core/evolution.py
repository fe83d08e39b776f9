"""
Discretización de A(t) y realización del operador de evolución G(t,s).

Diferencias finitas sobre mallas tensoriales con Dirichlet homogéneo en el
borde de la caja y esquema theta en el tiempo (Euler implícito por defecto).
"""
import threading
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from core.coefficient_field import drift_at, evaluate_on, operator_expression
from core.errors import (
    ConfigError, GridMismatchError, PropagationError, SizeOverflowError,
    SupportViolationError, TimeGridError
)
from core.expression_parser import Expr
from core.logger import logger
from models.lab_models import (
    CoefficientField, Grid, PropagationResult, TestFunction, TransitionRow
)
from models.report_models import ConvergenceReport, ResidualReport

DENSE_LIMIT = 2000
TIME_TOLERANCE = 1e-9
DRIFT_SCHEMES = ("hybrid", "upwind")


# ---------- Generador ----------

def assemble_generator(c: CoefficientField, grid: Grid, t: float,
                       drift_scheme: str = "hybrid") -> sp.csr_matrix:
    """
    Matriz del generador sobre todos los nodos de la malla.

    Segundas derivadas centradas; la deriva es centrada donde |b|h < 2q y
    upwind en otro caso, de modo que los elementos fuera de la diagonal son
    no negativos. La diagonal cierra cada fila con suma cero; en los nodos de
    borde los vecinos ausentes se omiten.
    """
    if drift_scheme not in DRIFT_SCHEMES:
        raise ConfigError(f"Esquema de deriva desconocido: {drift_scheme!r}")
    if c.d != grid.d:
        raise GridMismatchError(f"Campo en d={c.d} y malla en d={grid.d}")

    N, n, h = grid.size, grid.n_axis, grid.h
    X = grid.points
    B = drift_at(c, t, X)
    idx = np.indices((n,) * grid.d).reshape(grid.d, -1)
    nodes = np.arange(N)

    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    for i in range(grid.d):
        stride = n ** (grid.d - 1 - i)
        q = evaluate_on(c.Q[i][i], t, X)
        b = B[:, i]
        if drift_scheme == "hybrid":
            central = np.abs(b) * h < 2.0 * q
        else:
            central = np.zeros(N, dtype=bool)
        lower = q / h ** 2 + np.where(central, -b / (2 * h), np.maximum(-b, 0.0) / h)
        upper = q / h ** 2 + np.where(central, b / (2 * h), np.maximum(b, 0.0) / h)
        diag -= lower + upper

        has_lower = idx[i] > 0
        has_upper = idx[i] < n - 1
        rows.extend([nodes[has_lower], nodes[has_upper]])
        cols.extend([nodes[has_lower] - stride, nodes[has_upper] + stride])
        vals.extend([lower[has_lower], upper[has_upper]])

    off = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N))
    return (off + sp.diags(diag)).tocsr()


# ---------- Resolvedor ----------

class _StepFactor:
    """Factorización LU de (I - θ dt L(t_{k+1})) y parte explícita."""

    def __init__(self, lu, explicit: Optional[sp.csr_matrix]):
        self.lu = lu
        self.explicit = explicit


class EvolutionSolver:
    """
    Cadena de factores de un paso para un campo, una malla y un dt.

    Las factorizaciones se indexan por la fase del paso (k mod T/dt), por lo
    que V(s+T) reutiliza exactamente los factores de V(s).
    """

    def __init__(self, field: CoefficientField, grid: Grid, dt: float,
                 theta: float = 1.0, drift_scheme: str = "hybrid"):
        if theta not in (1.0, 0.5):
            raise ConfigError(f"theta debe ser 1 o 0.5, no {theta}")
        if not dt > 0:
            raise ConfigError(f"dt debe ser positivo: {dt}")
        n_period = int(round(field.T / dt))
        if n_period < 1 or abs(n_period * dt - field.T) > TIME_TOLERANCE * field.T:
            raise TimeGridError(f"dt={dt} no divide el período T={field.T}")
        if drift_scheme not in DRIFT_SCHEMES:
            raise ConfigError(f"Esquema de deriva desconocido: {drift_scheme!r}")

        self.field = field
        self.grid = grid
        self.dt = float(dt)
        self.theta = float(theta)
        self.drift_scheme = drift_scheme
        self.n_period = n_period
        self.interior = grid.interior
        self._factors: Dict[int, _StepFactor] = {}
        self._period_maps: Dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self._period_lock = threading.Lock()

        if self.theta != 1.0:
            logger.warning("Crank-Nicolson (theta=0.5): positividad no garantizada")

    @property
    def positivity_guaranteed(self) -> bool:
        return self.theta == 1.0

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    # ---------- Tiempos ----------

    def step_index(self, time: float) -> int:
        """Índice k con t_k = k·dt; falla si el tiempo no está en la malla."""
        k = int(round(time / self.dt))
        if abs(k * self.dt - time) > TIME_TOLERANCE * max(1.0, abs(time)):
            raise TimeGridError(f"t={time} no está alineado con dt={self.dt}")
        return k

    def phase_time(self, k: int) -> float:
        return (k % self.n_period) * self.dt

    # ---------- Generadores ----------

    def free_generator(self, t: float) -> sp.csr_matrix:
        return assemble_generator(self.field, self.grid, t, self.drift_scheme)

    def truncated_generator(self, t: float) -> sp.csc_matrix:
        """Generador restringido a nodos interiores (Dirichlet homogéneo)."""
        L = self.free_generator(t)
        return L[self.interior][:, self.interior].tocsc()

    def _factor(self, k: int) -> _StepFactor:
        phase = k % self.n_period
        factor = self._factors.get(phase)
        if factor is not None:
            return factor
        with self._lock:
            factor = self._factors.get(phase)
            if factor is None:
                factor = self._assemble_factor(phase)
                self._factors[phase] = factor
        return factor

    def _assemble_factor(self, phase: int) -> _StepFactor:
        n = self.n_interior
        eye = sp.identity(n, format='csc')
        L_next = self.truncated_generator((phase + 1) * self.dt)
        try:
            lu = splu((eye - self.theta * self.dt * L_next).tocsc())
        except RuntimeError as exc:
            raise PropagationError(f"Factorización singular: {exc}", phase) from exc
        explicit = None
        if self.theta != 1.0:
            L_now = self.truncated_generator(phase * self.dt)
            explicit = (eye + (1.0 - self.theta) * self.dt * L_now).tocsr()
        logger.debug("Factor de fase %d ensamblado (%d nodos)", phase, n)
        return _StepFactor(lu, explicit)

    # ---------- Pasos ----------

    def step(self, u: np.ndarray, k: int) -> np.ndarray:
        """Avanza valores interiores de t_k a t_{k+1}."""
        factor = self._factor(k)
        rhs = u if factor.explicit is None else factor.explicit @ u
        out = factor.lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(out)):
            raise PropagationError("Solución no finita", k)
        return out

    def step_transpose(self, v: np.ndarray, k: int) -> np.ndarray:
        """Aplica la traspuesta del paso t_k -> t_{k+1}."""
        factor = self._factor(k)
        out = factor.lu.solve(np.asarray(v, dtype=float), trans='T')
        if factor.explicit is not None:
            out = factor.explicit.T @ out
        if not np.all(np.isfinite(out)):
            raise PropagationError("Solución traspuesta no finita", k)
        return out

    def propagator(self, s: float, t: float) -> 'Propagator':
        return Propagator(self, s, t)

    def propagate(self, values: np.ndarray, s: float, t: float) -> np.ndarray:
        return self.propagator(s, t).apply(values)

    def period_map(self, s: float) -> np.ndarray:
        """V(s) = G(s+T, s) denso sobre los nodos interiores."""
        k = self.step_index(s)
        phase = k % self.n_period
        cached = self._period_maps.get(phase)
        if cached is not None:
            return cached
        if self.n_interior > DENSE_LIMIT:
            raise SizeOverflowError(
                f"{self.n_interior} nodos interiores superan el límite denso {DENSE_LIMIT}")
        # Lock propio: los pasos toman _lock al factorizar
        with self._period_lock:
            V = self._period_maps.get(phase)
            if V is None:
                P = Propagator(self, s, s + self.field.T)
                V = P.apply_interior(np.eye(self.n_interior))
                logger.info("Mapa de período V(%.4g) ensamblado (%d nodos)", s, self.n_interior)
                self._period_maps[phase] = V
        return V


class Propagator:
    """Realización discreta de G(t,s) como cadena de factores."""

    def __init__(self, solver: EvolutionSolver, s: float, t: float):
        self.solver = solver
        self.k_s = solver.step_index(s)
        self.k_t = solver.step_index(t)
        if self.k_t < self.k_s:
            raise TimeGridError(f"Se requiere s <= t (s={s}, t={t})")
        self.s = self.k_s * solver.dt
        self.t = self.k_t * solver.dt
        self._kernel: Optional[np.ndarray] = None

    @property
    def grid(self) -> Grid:
        return self.solver.grid

    @property
    def steps(self) -> int:
        return self.k_t - self.k_s

    def apply_interior(self, u: np.ndarray) -> np.ndarray:
        for k in range(self.k_s, self.k_t):
            u = self.solver.step(u, k)
        return np.array(u, dtype=float, copy=True)

    def apply_transpose_interior(self, v: np.ndarray) -> np.ndarray:
        for k in reversed(range(self.k_s, self.k_t)):
            v = self.solver.step_transpose(v, k)
        return np.array(v, dtype=float, copy=True)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """G(t,s)φ sobre todos los nodos; el borde vale 0."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.grid.size:
            raise GridMismatchError(
                f"Vector de {values.shape[0]} valores para una malla de {self.grid.size} nodos")
        out = np.zeros(values.shape)
        out[self.solver.interior] = self.apply_interior(values[self.solver.interior])
        return out

    def apply_transpose(self, weights: np.ndarray) -> np.ndarray:
        """Lleva una medida en t a su imagen en s por la cadena traspuesta."""
        weights = np.asarray(weights, dtype=float)
        if weights.shape[0] != self.grid.size:
            raise GridMismatchError("Pesos sobre una malla distinta")
        out = np.zeros(weights.shape)
        out[self.solver.interior] = self.apply_transpose_interior(
            weights[self.solver.interior])
        return out

    def kernel_row(self, i: int) -> TransitionRow:
        """Fila i del núcleo: cadena traspuesta aplicada a e_i."""
        N = self.grid.size
        if not 0 <= i < N:
            raise IndexError(f"Nodo {i} fuera de rango [0, {N})")
        if self._kernel is not None:
            row = self._kernel[i].copy()
        else:
            e = np.zeros(N)
            e[i] = 1.0
            row = self.apply_transpose(e) if not self.grid.boundary_mask[i] else np.zeros(N)
        weights = np.where(row < 0, 0.0, row)
        defect = float(np.clip(1.0 - weights.sum(), 0.0, 1.0))
        return TransitionRow(grid=self.grid, index=i, weights=weights, defect=defect)

    def dense_kernel(self) -> np.ndarray:
        """Matriz K[i][j] ≈ p_{t,s,x_i}({x_j}) sobre todos los nodos."""
        if self._kernel is not None:
            return self._kernel
        n = self.solver.n_interior
        if n > DENSE_LIMIT:
            raise SizeOverflowError(
                f"{n} nodos interiores superan el límite denso {DENSE_LIMIT}")
        K_int = self.apply_interior(np.eye(n))
        N = self.grid.size
        K = np.zeros((N, N))
        K[np.ix_(self.solver.interior, self.solver.interior)] = K_int
        self._kernel = K
        return K


# ---------- Operaciones ----------

def propagate(c: CoefficientField, grid: Grid, s: float, t: float, dt: float,
              theta: float, phi: TestFunction,
              drift_scheme: str = "hybrid") -> PropagationResult:
    """
    Calcula G(t,s)φ en los nodos de la malla.

    Returns:
        PropagationResult con la bandera de positividad garantizada
    """
    solver = EvolutionSolver(c, grid, dt, theta, drift_scheme)
    values = solver.propagate(phi.on_grid(grid, s), s, t)
    return PropagationResult(grid=grid, s=solver.step_index(s) * dt,
                             t=solver.step_index(t) * dt, values=values,
                             positivity_guaranteed=solver.positivity_guaranteed)


def _battery_values(grid: Grid, battery: Iterable) -> List[np.ndarray]:
    out = []
    for phi in battery:
        if isinstance(phi, TestFunction):
            out.append(phi.on_grid(grid))
        else:
            out.append(np.asarray(phi, dtype=float))
    return out


def chapman_kolmogorov_check(solver: EvolutionSolver, s: float, r: float,
                             t: float, battery: Sequence) -> ResidualReport:
    """max |G(t,s)φ - G(t,r)G(r,s)φ| sobre la batería y los nodos."""
    if not solver.step_index(s) <= solver.step_index(r) <= solver.step_index(t):
        raise TimeGridError(f"Se requiere s <= r <= t (s={s}, r={r}, t={t})")
    direct = solver.propagator(s, t)
    first = solver.propagator(s, r)
    second = solver.propagator(r, t)
    residual = 0.0
    for values in _battery_values(solver.grid, battery):
        diff = direct.apply(values) - second.apply(first.apply(values))
        residual = max(residual, float(np.max(np.abs(diff))))
    return ResidualReport('chapman_kolmogorov', residual, 1e-10,
                          {'s': s, 'r': r, 't': t})


def expanding_domain_study(c: CoefficientField, s: float, t: float, dt: float,
                           phi: TestFunction, R_ladder: Sequence[float], h: float,
                           theta: float = 1.0,
                           drift_scheme: str = "hybrid") -> ConvergenceReport:
    """
    Soluciones u_R sobre cajas crecientes con el mismo h, comparadas en el
    núcleo común |x| <= R_min/2.
    """
    radii = sorted(float(R) for R in R_ladder)
    try:
        grids = [Grid(c.d, R, h) for R in radii]
        base = grids[0]
        core = base.core()
        maps = [base.nested_offsets(g) for g in grids]
    except ValueError as exc:
        raise GridMismatchError(f"Mallas no anidadas: {exc}") from exc

    solutions = []
    for grid, offsets in zip(grids, maps):
        solver = EvolutionSolver(c, grid, dt, theta, drift_scheme)
        u = solver.propagate(phi.on_grid(grid, s), s, t)
        solutions.append(u[offsets[core]])
        logger.info("Dominio R=%.4g resuelto (%d nodos)", grid.R, grid.size)

    origin = int(np.argmin(base.radius[core]))
    increments = []
    violation = 0.0
    for small, large in zip(solutions, solutions[1:]):
        violation = max(violation, float(np.max(small - large)))
        increments.append(float(np.max(np.abs(large - small))))
    return ConvergenceReport(
        radii=radii,
        increments=increments,
        monotone_violation=max(violation, 0.0),
        core_values_at_origin=[float(u[origin]) for u in solutions],
    )


def derivative_relation_check(solver: EvolutionSolver, s: float, t: float,
                              phi: Expr, delta: Optional[float] = None,
                              tolerance: float = 0.05) -> ResidualReport:
    """
    Residuo de D_s G(t,s)φ + G(t,s)A(s)φ con diferencias centradas en s.

    Raises:
        SupportViolationError: si φ no se anula fuera de |x| <= R/2
    """
    grid = solver.grid
    delta = solver.dt if delta is None else delta
    env_phi = TestFunction(expr=phi).on_grid(grid, s)
    outside = grid.radius > grid.R / 2 + 1e-12
    scale = float(np.max(np.abs(env_phi))) if env_phi.size else 0.0
    if np.any(outside) and float(np.max(np.abs(env_phi[outside]))) > 1e-6 * scale:
        raise SupportViolationError(
            f"φ no tiene soporte en |x| <= {grid.R / 2:g}: "
            f"máximo fuera = {np.max(np.abs(env_phi[outside])):.3g}")

    a_phi = evaluate_on(operator_expression(solver.field, phi), s, grid.points)
    up = solver.propagate(env_phi, s + delta, t)
    down = solver.propagate(env_phi, s - delta, t)
    mid = solver.propagate(a_phi, s, t)
    core = grid.core()
    residual = float(np.max(np.abs((up - down) / (2 * delta) + mid)[core]))
    constant = residual / (delta + grid.h ** 2)
    return ResidualReport('derivative_relation', residual, tolerance,
                          {'C': constant, 'delta': delta, 'h': grid.h})


def derivative_refinement_study(c: CoefficientField, R: float, h: float,
                                dt: float, s: float, t: float, phi: Expr,
                                levels: int = 1, theta: float = 1.0) -> Dict[str, list]:
    """Residuos bajo h -> h/2, dt -> dt/4 y sus cocientes sucesivos."""
    residuals = []
    for level in range(levels + 1):
        grid = Grid(c.d, R, h / 2 ** level)
        solver = EvolutionSolver(c, grid, dt / 4 ** level, theta)
        residuals.append(derivative_relation_check(solver, s, t, phi).residual)
    ratios = [a / b if b > 0 else float('inf')
              for a, b in zip(residuals, residuals[1:])]
    return {'residuals': residuals, 'ratios': ratios}


def smooth_indicator(radius: np.ndarray, r_in: float, r_out: float) -> np.ndarray:
    """1 para |x| <= r_in, 0 para |x| >= r_out, smoothstep en medio."""
    z = np.clip((r_out - radius) / (r_out - r_in), 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


def indicator_lower_bound(P: Propagator, R_ind: float,
                          width: Optional[float] = None) -> ResidualReport:
    """
    Verifica G(t,s)φ >= p_{t,s,x}(B(0,R_ind)) para φ continua con
    1_{B(0,R_ind)} <= φ, y reporta el ínfimo de G(t,s)φ en el núcleo.
    """
    grid = P.grid
    width = max(2 * grid.h, 0.1 * R_ind) if width is None else width
    phi = smooth_indicator(grid.radius, R_ind, R_ind + width)
    K = P.dense_kernel()
    mass_in = K[:, grid.radius <= R_ind + 1e-12].sum(axis=1)
    g_phi = P.apply(phi)
    violation = float(np.max(mass_in - g_phi))
    core = grid.core()
    return ResidualReport('indicator_lower_bound', max(violation, 0.0), 1e-12,
                          {'inf_core': float(np.min(g_phi[core])),
                           'min_core_mass': float(np.min(mass_in[core]))})


def strict_positivity(P: Propagator, phi: np.ndarray) -> float:
    """δ = min del núcleo de G(t,s)φ para φ >= 0 no nula."""
    values = P.apply(phi)
    return float(np.min(values[P.grid.core()]))
