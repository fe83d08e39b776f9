"""
Diagnósticos de estanqueidad (tightness), familias periódicas de medidas,
residuos de invariancia y normas L^p ponderadas.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.errors import ConfigError, DegenerateSpectrumError, TimeGridError
from core.evolution import EvolutionSolver, Propagator
from core.logger import logger
from core.lyapunov import lyapunov_on_grid
from core.spectral import floquet_data
from models.lab_models import (
    CoefficientField, EvolutionMeasureFamily, Grid, LyapunovData, TestFunction,
    weighted_lp_norm
)
from models.report_models import ResidualReport

SPOT_CHECK_TOLERANCE = 1e-6


# ---------- Tightness ----------

@dataclass
class TightnessProfile:
    """Radio ρ(ε) y perfil por punto base del núcleo."""
    eps: float
    rho: float
    profile: np.ndarray
    base_points: np.ndarray
    resolvable: bool = True
    h: float = 0.0

    def to_dict(self) -> dict:
        return {'eps': self.eps, 'rho': self.rho, 'resolvable': self.resolvable,
                'core_points': int(len(self.profile))}


def tightness_radius(P: Propagator, eps: float,
                     core_fraction: float = 0.5) -> TightnessProfile:
    """
    Menor radio de malla ρ tal que p_{t,s,x}(B(0,ρ)) >= 1-ε para todo x del
    núcleo. La masa absorbida en el borde cuenta como masa escapada.
    """
    if not 0 < eps < 1:
        raise ConfigError(f"eps debe estar en (0,1): {eps}")
    grid = P.grid
    K = P.dense_kernel()
    core = grid.core(core_fraction)
    order = np.argsort(grid.radius, kind='stable')
    radii_sorted = grid.radius[order]
    unique_radii = np.unique(radii_sorted)
    last = np.searchsorted(radii_sorted, unique_radii, side='right') - 1

    cumulative = np.cumsum(np.maximum(K[core][:, order], 0.0), axis=1)[:, last]
    inside = cumulative >= 1.0 - eps
    resolvable_rows = inside.any(axis=1)
    first = np.argmax(inside, axis=1)
    profile = np.where(resolvable_rows, unique_radii[first], np.inf)

    resolvable = bool(resolvable_rows.all())
    if not resolvable:
        logger.warning("ε=%g no es resoluble a R=%g: la masa absorbida excede ε",
                       eps, grid.R)
    rho = float(np.max(profile)) if resolvable else float(grid.R)
    return TightnessProfile(eps=eps, rho=rho, profile=profile,
                            base_points=grid.points[core], resolvable=resolvable,
                            h=grid.h)


def tightness_monotone_check(solver: EvolutionSolver, s: float, r: float,
                             times: Sequence[float], eps: float) -> ResidualReport:
    """Verifica ρ(ε, t) <= ρ(ε, r) + 2h para t >= r."""
    if r <= s:
        raise TimeGridError("El barrido debe comenzar en r > s")
    reference = tightness_radius(solver.propagator(s, r), eps).rho
    excess = 0.0
    rhos = {}
    for t in times:
        rho_t = tightness_radius(solver.propagator(s, t), eps).rho
        rhos[float(t)] = rho_t
        excess = max(excess, rho_t - reference)
    return ResidualReport('tightness_monotone', excess, 2 * solver.grid.h,
                          {'rho_r': reference, 'rho_t': rhos})


def tightness_dichotomy(c: CoefficientField, s: float, t: float, dt: float,
                        h: float, eps: float, R_ladder: Sequence[float] = (4.0, 8.0),
                        theta: float = 1.0) -> Dict[str, object]:
    """
    ρ(ε) bajo duplicación del dominio: estable (|Δρ| <= 2h) es TIGHT.
    """
    rhos = []
    for R in R_ladder:
        solver = EvolutionSolver(c, Grid(c.d, R, h), dt, theta)
        rhos.append(tightness_radius(solver.propagator(s, t), eps).rho)
    changes = [abs(b - a) for a, b in zip(rhos, rhos[1:])]
    stable = all(delta <= 2 * h + 1e-12 for delta in changes)
    verdict = 'TIGHT' if stable else 'NON-TIGHT'
    logger.info("Dicotomía de tightness: ρ=%s -> %s", rhos, verdict)
    return {'radii': list(R_ladder), 'rho': rhos, 'changes': changes,
            'verdict': verdict}


# ---------- Familia periódica de medidas ----------

def _normalize(w: np.ndarray) -> np.ndarray:
    w = np.where(w < 0, 0.0, w)
    total = w.sum()
    return w / total


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(a - b)))


def _walk_down(solver: EvolutionSolver, w_top: np.ndarray):
    """
    Recorre el período hacia atrás: w^(k) = normalize(S_k^T w^(k+1)).
    Retorna los pesos en cada paso y los factores de normalización.
    """
    n = solver.n_period
    weights = np.empty((n, len(w_top)))
    norms = np.empty(n)
    w = w_top
    for k in reversed(range(n)):
        v = solver.step_transpose(w, k)
        norms[k] = v.sum()
        w = _normalize(v)
        weights[k] = w
    return weights, norms


def periodic_measures(solver: EvolutionSolver, phase_count: int = 8,
                      spot_checks: int = 2) -> EvolutionMeasureFamily:
    """
    Familia T-periódica {μ_s}: vector de Perron izquierdo de V(0) bajado
    fase a fase con los factores traspuestos.

    Raises:
        DegenerateSpectrumError: si λ1 no es simple (brecha < 1e-8)
    """
    T = solver.field.T
    steps_per_phase = solver.n_period / phase_count
    if abs(steps_per_phase - round(steps_per_phase)) > 1e-9:
        raise TimeGridError(
            f"{phase_count} fases no son múltiplos de dt={solver.dt} en T={T}")
    steps_per_phase = int(round(steps_per_phase))

    report = floquet_data(solver.period_map(0.0), T, s=0.0)
    if report.degenerate:
        raise DegenerateSpectrumError(
            f"λ1 no es simple en V(0): λ1={report.lambda1:.6g}, |λ2|={report.lambda2_abs:.6g}")

    w0 = _normalize(report.w)
    step_weights, norms = _walk_down(solver, w0)

    grid = solver.grid
    phases = np.arange(phase_count) * T / phase_count
    weights = np.zeros((phase_count, grid.size))
    for j in range(phase_count):
        weights[j, solver.interior] = step_weights[j * steps_per_phase]

    family = EvolutionMeasureFamily(
        grid=grid, period=T, dt=solver.dt, phases=phases, weights=weights,
        lambda1=report.lambda1, normalizations=norms)

    for j in _spot_check_phases(phase_count, spot_checks):
        direct = floquet_data(solver.period_map(phases[j]), T, s=phases[j])
        tv = total_variation(_normalize(direct.w), weights[j, solver.interior])
        family.spot_checks[float(phases[j])] = tv
        if tv > SPOT_CHECK_TOLERANCE:
            family.mismatch = True
            logger.warning("Fase %.4g: discrepancia TV=%.3g con el autovector directo",
                           phases[j], tv)
    logger.info("Familia de medidas: %d fases, λ1=%.10g, Π normalizaciones=%.10g",
                phase_count, report.lambda1, float(np.prod(norms)))
    return family


def _spot_check_phases(phase_count: int, count: int) -> List[int]:
    if count <= 0 or phase_count < 2:
        return []
    picks = np.linspace(0, phase_count, count + 2)[1:-1]
    return sorted({int(round(p)) % phase_count for p in picks} - {0}) or [phase_count // 2]


# ---------- Residuos y cotas ----------

def invariance_residual(F: EvolutionMeasureFamily, P: Propagator,
                        battery: Sequence[np.ndarray],
                        tolerance: float = 1e-6) -> ResidualReport:
    """
    max |⟨w^(t), G(t,s)φ⟩ - ⟨w^(s), φ⟩| sobre la batería; también el residuo
    normalizado por el producto de normalizaciones entre s y t.
    """
    w_s = F.weights_at(P.s)
    w_t = F.weights_at(P.t)
    product = F.normalization_product(P.s, P.t)
    raw = 0.0
    normalized = 0.0
    scale = 1.0
    for phi in battery:
        lhs = float(w_t @ P.apply(phi))
        rhs = float(w_s @ phi)
        raw = max(raw, abs(lhs - rhs))
        normalized = max(normalized, abs(lhs / product - rhs))
        scale = max(scale, float(np.max(np.abs(phi))))
    return ResidualReport('invariance', raw, tolerance * scale,
                          {'normalized': normalized, 'defect': 1.0 - product,
                           's': P.s, 't': P.t})


def lyapunov_mean_bound(F: EvolutionMeasureFamily, L: LyapunovData,
                        solver: Optional[EvolutionSolver] = None,
                        s: float = 0.0, t: float = 1.0,
                        tolerance: float = 1e-6) -> Dict[str, object]:
    """
    ⟨w^(s), W⟩ <= min W + a/cc en cada fase y G(t,s)W <= W + a/cc en el núcleo.
    """
    grid = F.grid
    w_nodes = lyapunov_on_grid(L, grid)
    offset = float(L.a) / float(L.cc)
    bound = float(np.min(w_nodes)) + offset
    means = [float(w @ w_nodes) for w in F.weights]
    out = {'means': means, 'bound': bound,
           'mean_ok': all(m <= bound + tolerance for m in means)}
    if solver is not None:
        core = grid.core()
        g_w = solver.propagate(w_nodes, s, t)
        excess = float(np.max(g_w[core] - (w_nodes[core] + offset)))
        out['pointwise_excess'] = excess
        out['pointwise_ok'] = excess <= tolerance
    return out


def lp_norm(F: EvolutionMeasureFamily, s: float, phi: np.ndarray, p: float) -> float:
    """(Σ_i w_i |φ_i|^p)^(1/p) con los pesos de la fase s."""
    if p < 1:
        raise ConfigError(f"p debe ser >= 1: {p}")
    return weighted_lp_norm(F.weights_at(s), phi, p)


def lp_contraction(F: EvolutionMeasureFamily, P: Propagator,
                   battery: Sequence[np.ndarray],
                   p_list: Sequence[float] = (1.0, 2.0, 4.0),
                   tolerance: float = 1e-10) -> List[ResidualReport]:
    """
    ‖G(t,s)φ‖_{L^p(μ_t)} <= ‖φ‖_{L^p(μ_s)} sobre la batería, un reporte por p.
    El residuo es el máximo exceso del lado izquierdo.
    """
    reports = []
    for p in p_list:
        excess = -np.inf
        scale = 1.0
        for phi in battery:
            lhs = lp_norm(F, P.t, P.apply(phi), p)
            rhs = lp_norm(F, P.s, phi, p)
            excess = max(excess, lhs - rhs)
            scale = max(scale, rhs)
        reports.append(ResidualReport(f"lp_contraction[{p:g}]", float(excess),
                                      tolerance * scale, {'p': p, 's': P.s, 't': P.t}))
    return reports


def fokker_planck_residual(F: EvolutionMeasureFamily,
                           solver: EvolutionSolver) -> Dict[str, object]:
    """
    Residuo de D_s μ_s + A(s)^* μ_s = 0 entre fases consecutivas (trapecio
    en s), relativo a ‖A^* μ‖_1.
    """
    interior = solver.interior
    m = len(F.phases)
    spacing = F.period / m
    residuals = []
    for j in range(m):
        s0, s1 = F.phases[j], F.phases[j] + spacing
        w0 = F.weights[j, interior]
        w1 = F.weights[(j + 1) % m, interior]
        a0 = solver.truncated_generator(s0).T @ w0
        a1 = solver.truncated_generator(s1).T @ w1
        adjoint = 0.5 * (a0 + a1)
        res = (w1 - w0) / spacing + adjoint
        scale = max(float(np.sum(np.abs(adjoint))), 1e-300)
        residuals.append(float(np.sum(np.abs(res))) / scale)
    return {'residuals': residuals, 'max': max(residuals), 'phases': m}


def uniqueness_probe(F: EvolutionMeasureFamily, solver: EvolutionSolver,
                     n_starts: int = 5, seed: int = 0,
                     max_iter: int = 1000, tol: float = 1e-15) -> Dict[str, object]:
    """
    Iteración de potencias desde vectores positivos aleatorios; compara la
    familia resultante con F fase a fase en variación total.
    """
    V = solver.period_map(0.0)
    rng = np.random.default_rng(seed)
    steps_per_phase = solver.n_period // len(F.phases)
    worst = 0.0
    iterations = []
    for _ in range(n_starts):
        w = _normalize(rng.uniform(0.1, 1.0, size=V.shape[0]))
        for it in range(max_iter):
            nxt = _normalize(V.T @ w)
            change = total_variation(nxt, w)
            w = nxt
            if change < tol:
                break
        iterations.append(it + 1)
        step_weights, _ = _walk_down(solver, w)
        for j in range(len(F.phases)):
            tv = total_variation(step_weights[j * steps_per_phase],
                                 F.weights[j, solver.interior])
            worst = max(worst, tv)
    return {'max_tv': worst, 'iterations': iterations, 'starts': n_starts}


def family_to_frame(F: EvolutionMeasureFamily) -> pd.DataFrame:
    """Tabla (fase, coordenadas, peso, densidad = peso/h^d)."""
    grid = F.grid
    cell = grid.h ** grid.d
    frames = []
    for phase, w in zip(F.phases, F.weights):
        data = {'phase': np.full(grid.size, phase)}
        for i in range(grid.d):
            data[f'x{i + 1}'] = grid.points[:, i]
        data['weight'] = w
        data['density'] = w / cell
        frames.append(pd.DataFrame(data))
    return pd.concat(frames, ignore_index=True)


def lebesgue_lp_probe(c: CoefficientField, s: float, t: float, dt: float,
                      h: float, phi, p: float,
                      R_ladder: Sequence[float] = (2.0, 4.0, 8.0)) -> Dict[str, object]:
    """
    ‖G(t,s)φ‖_{L^p(dx)} sobre dominios crecientes. El crecimiento con R indica
    que el operador no preserva L^p(dx).
    """
    norms = []
    for R in R_ladder:
        grid = Grid(c.d, R, h)
        solver = EvolutionSolver(c, grid, dt)
        values = solver.propagate(TestFunction(expr=phi).on_grid(grid, s), s, t)
        norms.append(float((h ** c.d * np.sum(np.abs(values) ** p)) ** (1.0 / p)))
    growth = [b / a if a > 0 else float('inf') for a, b in zip(norms, norms[1:])]
    return {'radii': list(R_ladder), 'norms': norms, 'growth': growth, 'p': p}
