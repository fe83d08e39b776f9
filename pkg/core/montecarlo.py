"""
Oráculo estocástico de G(t,s)φ(x) por Euler-Maruyama con calendario invertido.

G(t,s)φ(x) = E φ(Z_t) con dZ_τ = b(s+t-τ, Z)dτ + sqrt(2Q(s+t-τ, Z)) dB_τ,
Z_s = x. La representación se valida contra las fórmulas cerradas del OU.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import linregress

from core.coefficient_field import diffusion_at, drift_at
from core.errors import ConfigError, TimeGridError
from core.evolution import EvolutionSolver
from core.expression_parser import Expr
from core.logger import logger
from core.ou_exact import ou_expectation
from core.symbolic import evaluate
from models.lab_models import CoefficientField, Grid, MCEstimate, OUParams, TransitionRow
from models.report_models import CheckRecord

EXPLOSION_RADIUS = 1e8
EXPLOSION_FRACTION = 1e-4
BLOCK_PAIRS = 4096
ACCEPTANCE_PATHS = 1_000_000
ACCEPTANCE_EM_DT = 1e-3

TestFn = Union[Expr, Callable[[np.ndarray], np.ndarray]]


@dataclass
class MCSimulation:
    """Puntos finales de pares antitéticos; estima E φ(Z_t) para cualquier φ."""
    field: CoefficientField
    s: float
    t: float
    x: np.ndarray
    n: int
    em_dt: float
    seed: int
    endpoints: np.ndarray      # (n, d); el par k ocupa las filas 2k y 2k+1
    alive: np.ndarray          # False para trayectorias explotadas

    @property
    def exploded(self) -> int:
        return int(np.count_nonzero(~self.alive))

    @property
    def flagged(self) -> bool:
        return self.exploded > EXPLOSION_FRACTION * self.n

    def _values(self, phi: TestFn) -> np.ndarray:
        X = np.where(self.alive[:, None], self.endpoints, 0.0)
        if isinstance(phi, Expr):
            env = {f"x{i + 1}": X[:, i] for i in range(X.shape[1])}
            env['t'] = self.t
            return np.broadcast_to(evaluate(phi, env), (self.n,)).astype(float)
        return np.asarray(phi(X), dtype=float).reshape(self.n)

    def _units(self, values: np.ndarray) -> np.ndarray:
        """Medias de par; un par con una trayectoria explotada se descarta."""
        n_pairs = self.n // 2
        paired = values[:2 * n_pairs].reshape(n_pairs, 2)
        paired_alive = self.alive[:2 * n_pairs].reshape(n_pairs, 2).all(axis=1)
        units = paired.mean(axis=1)[paired_alive]
        if self.n % 2 and self.alive[-1]:
            units = np.append(units, values[-1])
        return units

    def estimate(self, phi: TestFn) -> MCEstimate:
        """E φ(Z_t) con error estándar std(medias de par)/√(n/2)."""
        units = self._units(self._values(phi))
        if units.size == 0:
            mean, stderr = float('nan'), float('inf')
        elif units.size == 1:
            mean, stderr = float(units[0]), float('inf')
        else:
            mean = float(units.mean())
            stderr = float(units.std(ddof=1) / np.sqrt(units.size))
        return MCEstimate(mean=mean, stderr=stderr, n=self.n, seed=self.seed,
                          em_dt=self.em_dt, exploded=self.exploded, flagged=self.flagged)


def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


def _simulate_block(c: CoefficientField, s: float, t: float, x: np.ndarray,
                    n_steps: int, em_dt: float, seed: int, block: int,
                    n_paths: int):
    rng = _block_generator(seed, block)
    n_pairs = (n_paths + 1) // 2
    Z = np.tile(x, (2 * n_pairs, 1))
    alive = np.ones(2 * n_pairs, dtype=bool)
    sqrt_dt = np.sqrt(em_dt)
    for k in range(n_steps):
        xi = rng.standard_normal((n_pairs, c.d))
        noise = np.empty_like(Z)
        noise[0::2] = xi
        noise[1::2] = -xi
        if not alive.any():
            continue
        tau = s + t - (s + k * em_dt)
        live = Z[alive]
        b = drift_at(c, tau, live)
        q = np.diagonal(diffusion_at(c, tau, live), axis1=1, axis2=2)
        sigma = np.sqrt(2.0 * np.maximum(q, 0.0))
        Z[alive] = live + b * em_dt + sigma * sqrt_dt * noise[alive]
        blown = alive & (np.max(np.abs(Z), axis=1) > EXPLOSION_RADIUS)
        alive &= ~blown
    return Z[:n_paths], alive[:n_paths]


def simulate(c: CoefficientField, s: float, t: float, x, n: int, em_dt: float,
             seed: int, parallel: bool = False, max_workers: Optional[int] = None) -> MCSimulation:
    """
    Simula n trayectorias en pares antitéticos.

    Los números aleatorios vienen de Philox con clave (seed, bloque), de modo
    que la ejecución paralela por bloques reproduce la serial bit a bit.

    Raises:
        TimeGridError: si em_dt no divide t - s
    """
    if n < 1:
        raise ConfigError(f"Se requiere al menos una trayectoria: n={n}")
    if t < s:
        raise TimeGridError(f"Se requiere s <= t (s={s}, t={t})")
    n_steps = int(round((t - s) / em_dt))
    if abs(n_steps * em_dt - (t - s)) > 1e-9 * max(1.0, t - s):
        raise TimeGridError(f"em_dt={em_dt} no divide t-s={t - s}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (c.d,):
        raise ConfigError(f"Punto inicial de dimensión {x.shape}, se esperaba ({c.d},)")

    block_paths = 2 * BLOCK_PAIRS
    sizes = [min(block_paths, n - start) for start in range(0, n, block_paths)]

    def run(block: int):
        return _simulate_block(c, s, t, x, n_steps, em_dt, seed, block, sizes[block])

    if parallel and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, range(len(sizes))))
    else:
        results = [run(block) for block in range(len(sizes))]

    endpoints = np.concatenate([r[0] for r in results])
    alive = np.concatenate([r[1] for r in results])
    sim = MCSimulation(field=c, s=s, t=t, x=x, n=n, em_dt=em_dt, seed=seed,
                       endpoints=endpoints, alive=alive)
    if sim.flagged:
        logger.warning("%d de %d trayectorias explotaron (|Z| > %.0e)",
                       sim.exploded, n, EXPLOSION_RADIUS)
    logger.info("MC: %d trayectorias, %d pasos de %.3g, semilla %d", n, n_steps, em_dt, seed)
    return sim


# ---------- Núcleo empírico ----------

def empirical_kernel(sim: MCSimulation, grid: Grid) -> TransitionRow:
    """
    Histograma de puntos finales sobre los nodos de la malla. La masa fuera
    de la caja y las trayectorias explotadas forman el defecto.
    """
    edges = [np.concatenate(([grid.axis[0] - grid.h / 2], grid.axis + grid.h / 2))] * grid.d
    counts, _ = np.histogramdd(sim.endpoints[sim.alive], bins=edges)
    weights = counts.ravel() / sim.n
    defect = float(max(0.0, 1.0 - weights.sum()))
    return TransitionRow(grid=grid, index=grid.index_of(sim.x), weights=weights, defect=defect)


def tail_mass(sim: MCSimulation, rho: float):
    """Fracción de puntos finales fuera de B(0,ρ) y su error estándar binomial."""
    radius = np.linalg.norm(sim.endpoints, axis=1)
    outside = (~sim.alive) | (radius > rho)
    p = float(np.mean(outside))
    return p, float(np.sqrt(max(p * (1.0 - p), 0.0) / sim.n))


def endpoint_moments(sim: MCSimulation):
    """Media y varianza muestral de los puntos finales vivos, por coordenada."""
    live = sim.endpoints[sim.alive]
    return live.mean(axis=0), live.var(axis=0, ddof=1)


# ---------- Estudios ----------

def weak_order_study(c: CoefficientField, s: float, t: float, x, phi: TestFn,
                     exact: float, n: int, em_dts: Sequence[float] = (0.04, 0.02, 0.01, 0.005),
                     seed: int = 0, slope_range=(0.7, 1.3)) -> dict:
    """
    Pendiente log-log del error débil |E φ(Z_t) - exacto| frente a em_dt.
    """
    errors = []
    for dt in em_dts:
        est = simulate(c, s, t, x, n, dt, seed).estimate(phi)
        errors.append(abs(est.mean - exact))
    fit = linregress(np.log(em_dts), np.log(np.maximum(errors, 1e-300)))
    slope = float(fit.slope)
    lo, hi = slope_range
    logger.info("Orden débil: errores %s, pendiente %.3f", errors, slope)
    return {'em_dts': list(em_dts), 'errors': errors, 'slope': slope,
            'passed': bool(lo <= slope <= hi)}


def ou_triple_agreement(c: CoefficientField, solver: EvolutionSolver, ou_params: OUParams,
                        s: float, t: float,
                        battery: Sequence[Expr], names: Sequence[str], x0: float = 0.0,
                        n: int = ACCEPTANCE_PATHS, em_dt: float = ACCEPTANCE_EM_DT, seed: int = 0,
                        core_radius: float = 2.0, pde_tolerance: float = 5e-3,
                        mc_slack: float = 2e-3) -> List[CheckRecord]:
    """
    EDP frente a fórmula cerrada (sup sobre |x| <= core_radius) y MC frente
    a fórmula cerrada en x0, para cada φ de la batería.
    """
    grid = solver.grid
    core = np.nonzero((grid.radius <= core_radius) & ~grid.boundary_mask)[0]
    sim = simulate(c, s, t, [x0], n, em_dt, seed)
    env = grid.env()
    env['t'] = s
    checks = []
    for phi, name in zip(battery, names):
        values = np.broadcast_to(evaluate(phi, env), (grid.size,)).astype(float)
        pde = solver.propagate(values, s, t)
        exact = ou_expectation(ou_params, s, t, grid.points[core, 0], phi)
        pde_err = float(np.max(np.abs(pde[core] - exact)))
        checks.append(CheckRecord(f'pde_vs_exact[{name}]', pde_err, pde_tolerance,
                                  pde_err <= pde_tolerance))

        est = sim.estimate(phi)
        target = float(ou_expectation(ou_params, s, t, x0, phi))
        mc_err = abs(est.mean - target)
        tol = 3.0 * est.stderr + mc_slack
        checks.append(CheckRecord(f'mc_vs_exact[{name}]', mc_err, tol,
                                  bool(mc_err <= tol) and not est.flagged,
                                  f"media={est.mean:.6g}, exacto={target:.6g}, stderr={est.stderr:.3g}"))
    return checks
