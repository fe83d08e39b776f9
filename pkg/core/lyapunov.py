"""
Chequeos muestreados de condiciones de tipo Lyapunov, ecuación de
comparación ζ' = -g(ζ) y desigualdades de supersolución sobre la malla.

Los chequeos son falsificadores: reportan el supremo muestreado del margen
y su testigo (t, x); nunca lanzan excepción por una desigualdad fallida.
"""
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from core.coefficient_field import (
    diffusion_at, drift_at, evaluate_on, operator_expression
)
from core.errors import ConfigError, ExpressionEvaluationError
from core.evolution import EvolutionSolver, smooth_indicator
from core.logger import logger
from models.lab_models import (
    CoefficientField, ComparisonSolution, Grid, InequalityReport,
    LyapunovData, MarginReport
)
from models.report_models import ResidualReport

STRICT_MARGIN = 1e-9
ZERO_MARGIN = 1e-12


@dataclass(frozen=True)
class SampleSpec:
    """Muestreo: tiempos uniformes en [0,T) y escaleras radiales geométricas."""
    R_domain: float = 8.0
    n_times: int = 64
    n_radial: int = 48
    r_min: float = 1e-2
    n_angles: int = 8

    @property
    def R_check(self) -> float:
        return 4.0 * self.R_domain

    def times(self, T: float) -> np.ndarray:
        return np.arange(self.n_times) * T / self.n_times

    def points(self, d: int, r_lo: float, include_origin: bool) -> np.ndarray:
        """Puntos en orden lexicográfico sobre la escalera [r_lo, R_check]."""
        radii = np.geomspace(r_lo, self.R_check, self.n_radial)
        if d == 1:
            pts = np.concatenate([-radii, radii]).reshape(-1, 1)
        else:
            angles = 2 * np.pi * np.arange(self.n_angles) / self.n_angles
            pts = np.array([(r * np.cos(a), r * np.sin(a))
                            for r in radii for a in angles])
        if include_origin:
            pts = np.vstack([np.zeros((1, d)), pts])
        order = np.lexsort(pts.T[::-1])
        return pts[order]


def _sweep(condition: str, c: CoefficientField, spec: SampleSpec,
           X: np.ndarray,
           margin_fn: Callable[[float, np.ndarray], Tuple[np.ndarray, float]]
           ) -> Tuple[Optional[MarginReport], float, dict, float]:
    """
    Evalúa margin_fn en todos los tiempos; retorna el sup, su testigo y la
    escala del chequeo. El primer máximo en orden (t, x) gana los empates.
    """
    sup = -np.inf
    witness = None
    scale = 1.0
    try:
        for t in spec.times(c.T):
            margin, local_scale = margin_fn(t, X)
            scale = max(scale, local_scale)
            k = int(np.argmax(margin))
            if margin[k] > sup:
                sup = float(margin[k])
                witness = {'t': float(t)}
                witness.update({f'x{i + 1}': float(v) for i, v in enumerate(X[k])})
    except ExpressionEvaluationError as exc:
        logger.warning("%s: error de evaluación %s", condition, exc)
        report = MarginReport(condition=condition, accepted=None,
                              witness=exc.location or None, error=str(exc),
                              samples=len(X) * spec.n_times)
        return report, sup, witness, scale
    return None, sup, witness, scale


def _operator_margin(c: CoefficientField, L: LyapunovData,
                     combine: Callable[[np.ndarray, np.ndarray], np.ndarray]):
    AW = operator_expression(c, L.W)

    def margin_fn(t, X):
        aw = evaluate_on(AW, t, X)
        w = evaluate_on(L.W, t, X)
        m = combine(aw, w)
        return m, float(np.max(np.abs(aw))) if aw.size else 1.0
    return margin_fn


def _lower_radius(L: LyapunovData, spec: SampleSpec) -> Tuple[float, bool]:
    if L.tail:
        if L.R0 is None:
            raise ConfigError("Una W de cola requiere R0")
        return L.R0, False
    return spec.r_min, True


def check_drift_bound(c: CoefficientField, L: LyapunovData,
                      spec: SampleSpec = SampleSpec()) -> MarginReport:
    """
    Hipótesis de deriva: sup muestreado de A(s)W - λW < 0.
    La desigualdad estricta exige sup < -1e-9·max(1, escala).
    """
    if L.lam is None:
        raise ConfigError("check_drift_bound requiere lambda")
    r_lo, origin = _lower_radius(L, spec)
    X = spec.points(c.d, r_lo, origin)
    lam = float(L.lam)
    base = _operator_margin(c, L, lambda aw, w: aw - lam * w)

    def margin_fn(t, X):
        m, s = base(t, X)
        w = evaluate_on(L.W, t, X)
        return m, max(s, float(np.max(np.abs(lam * w))))

    report, sup, witness, scale = _sweep('drift_bound', c, spec, X, margin_fn)
    if report is not None:
        return report
    accepted = sup < -STRICT_MARGIN * scale
    return MarginReport(condition='drift_bound', accepted=accepted,
                        sup_margin=sup, witness=witness,
                        samples=len(X) * spec.n_times, extras={'lambda': lam})


def scan_drift_lambda(c: CoefficientField, L: LyapunovData,
                      spec: SampleSpec = SampleSpec(),
                      lambdas: Sequence[float] = tuple(range(0, 51))
                      ) -> Tuple[Optional[float], MarginReport]:
    """Menor λ entero aceptado por check_drift_bound, o None."""
    report = None
    for lam in lambdas:
        report = check_drift_bound(c, _with(L, lam=float(lam)), spec)
        if report.error:
            return None, report
        if report.accepted:
            logger.info("Deriva aceptada con lambda*=%g", lam)
            return float(lam), report
    return None, report


def _with(L: LyapunovData, **changes) -> LyapunovData:
    return replace(L, **changes)


def check_dissipativity(c: CoefficientField, L: LyapunovData,
                        spec: SampleSpec = SampleSpec()) -> MarginReport:
    """
    Condición A(s)W <= a - cc·W. Emite las cotas W + a/cc y min W + a/cc.
    """
    if L.a is None or L.cc is None:
        raise ConfigError("check_dissipativity requiere a y cc")
    a, cc = float(L.a), float(L.cc)
    r_lo, origin = _lower_radius(L, spec)
    X = spec.points(c.d, r_lo, origin)
    margin_fn = _operator_margin(c, L, lambda aw, w: aw - a + cc * w)

    report, sup, witness, scale = _sweep('dissipativity', c, spec, X, margin_fn)
    if report is not None:
        return report
    w_min = float(np.min(evaluate_on(L.W, 0.0, X)))
    accepted = sup <= ZERO_MARGIN * scale
    return MarginReport(condition='dissipativity', accepted=accepted,
                        sup_margin=sup, witness=witness,
                        samples=len(X) * spec.n_times,
                        extras={'offset': a / cc,
                                'min_W': w_min,
                                'measure_bound': w_min + a / cc})


def check_superlinear(c: CoefficientField, L: LyapunovData,
                      spec: SampleSpec = SampleSpec()) -> MarginReport:
    """
    Condición A(s)W <= -g(W) para |x| en [R0, R_check], g(s) = c·s^γ.
    Con γ <= 1, 1/g no es integrable en infinito y se rechaza sin muestrear.
    """
    if L.gamma <= 1:
        return MarginReport(condition='superlinear', accepted=False, samples=0,
                            extras={'reason': '1/g no integrable (gamma <= 1)'})
    if L.R0 is None:
        raise ConfigError("check_superlinear requiere R0")
    X = spec.points(c.d, L.R0, False)
    margin_fn = _operator_margin(
        c, L, lambda aw, w: aw + L.g(np.maximum(w, 0.0)))

    report, sup, witness, scale = _sweep('superlinear', c, spec, X, margin_fn)
    if report is not None:
        return report
    return MarginReport(condition='superlinear',
                        accepted=sup <= ZERO_MARGIN * scale,
                        sup_margin=sup, witness=witness,
                        samples=len(X) * spec.n_times,
                        extras={'R0': L.R0, 'gamma': L.gamma})


def check_log_drift(c: CoefficientField, c_rate: float, gamma: float, R0: float,
                    spec: SampleSpec = SampleSpec()) -> MarginReport:
    """
    Tr Q + ⟨b,x⟩ - (2/|x|²)⟨Qx,x⟩ <= -c|x|²(log|x|)^γ para |x| >= R0.
    """
    if gamma <= 1 or R0 <= 1 or c_rate <= 0:
        raise ConfigError("check_log_drift requiere gamma > 1, R0 > 1 y c > 0")
    X = spec.points(c.d, R0, False)
    r2 = np.sum(X ** 2, axis=1)
    rhs = -c_rate * r2 * np.log(np.sqrt(r2)) ** gamma

    def margin_fn(t, X):
        Q = diffusion_at(c, t, X)
        b = drift_at(c, t, X)
        trace = np.trace(Q, axis1=1, axis2=2)
        qxx = np.einsum('ni,nij,nj->n', X, Q, X)
        lhs = trace + np.sum(b * X, axis=1) - 2.0 * qxx / r2
        return lhs - rhs, float(np.max(np.abs(lhs)))

    report, sup, witness, scale = _sweep('log_drift', c, spec, X, margin_fn)
    if report is not None:
        return report
    return MarginReport(condition='log_drift', accepted=sup <= ZERO_MARGIN * scale,
                        sup_margin=sup, witness=witness,
                        samples=len(X) * spec.n_times,
                        extras={'c': c_rate, 'gamma': gamma, 'R0': R0})


# ---------- Ecuación de comparación ----------

def solve_comparison(zeta0: float, c: float, gamma: float, horizon: float,
                     dt: float) -> ComparisonSolution:
    """
    Integra ζ' = -c·ζ^γ con Runge-Kutta explícito (RK45, rtol 1e-10) y
    adjunta la forma cerrada.
    """
    if not zeta0 > 0:
        raise ConfigError(f"zeta0 debe ser positivo: {zeta0}")
    if not dt > 0 or horizon < 0:
        raise ConfigError("Se requiere dt > 0 y horizonte >= 0")
    n = int(round(horizon / dt))
    times = np.arange(n + 1) * dt

    if gamma == 1:
        closed = zeta0 * np.exp(-c * times)
    else:
        closed = (zeta0 ** (1.0 - gamma) + c * (gamma - 1.0) * times) ** (-1.0 / (gamma - 1.0))

    if n == 0:
        values = np.array([float(zeta0)])
    else:
        sol = solve_ivp(lambda s, z: -c * np.power(np.maximum(z, 0.0), gamma),
                        (0.0, times[-1]), [float(zeta0)], method='RK45',
                        t_eval=times, rtol=1e-10, atol=1e-14)
        if not sol.success:
            raise ExpressionEvaluationError(f"Integración de ζ fallida: {sol.message}")
        values = sol.y[0]
    return ComparisonSolution(c=c, gamma=gamma, zeta0=zeta0, times=times,
                              values=values, closed_form=closed)


# ---------- W sobre la malla ----------

def lyapunov_on_grid(L: LyapunovData, grid: Grid) -> np.ndarray:
    """
    Valores nodales de W. Una W de cola se suaviza a la constante W(R0)
    dentro de |x| < R0 (smoothstep en [R0/2, R0]).
    """
    if not L.tail:
        return evaluate_on(L.W, 0.0, grid.points)
    R0 = float(L.R0)
    anchor = np.zeros((1, grid.d))
    anchor[0, 0] = R0
    w_const = float(evaluate_on(L.W, 0.0, anchor)[0])
    values = np.full(grid.size, w_const)
    outer = grid.radius > R0 / 2
    tail = evaluate_on(L.W, 0.0, grid.points[outer])
    blend = smooth_indicator(grid.radius[outer], R0 / 2, R0)
    values[outer] = blend * w_const + (1.0 - blend) * tail
    return values


def operator_on_grid(solver: EvolutionSolver, L: LyapunovData, t: float,
                     w_nodes: Optional[np.ndarray] = None) -> np.ndarray:
    """
    A(t)W con el generador libre (sin truncar). En las filas de borde los
    vecinos fantasma se toman de la expresión analítica de W.
    """
    grid = solver.grid
    w_nodes = lyapunov_on_grid(L, grid) if w_nodes is None else w_nodes
    values = solver.free_generator(t) @ w_nodes
    boundary = grid.boundary_mask
    values[boundary] = evaluate_on(operator_expression(solver.field, L.W), t,
                                   grid.points[boundary])
    return values


def supersolution_check(solver: EvolutionSolver, L: LyapunovData,
                        r: float, s: float, t: float,
                        beta_interval: Optional[Tuple[float, float]] = None
                        ) -> InequalityReport:
    """
    Verifica en los nodos del núcleo |x| <= R/2:

        G(t,s)W - G(t,r)W >= -∫_r^s G(t,σ)A(σ)W dσ - tol
        β(b) - β(a) <= -∫_a^b g̃(β(σ)) dσ + tol,   β(σ) = G(t,t-σ)W

    con g̃ = g - C y C = max(0, sup(A W + g(W))). Las integrales usan la regla
    del rectángulo acoplada al paso implícito.
    """
    grid = solver.grid
    dt = solver.dt
    interior = solver.interior
    w_full = lyapunov_on_grid(L, grid)
    w_int = w_full[interior]
    core = grid.core()
    tol = 1e-3 * (1.0 + float(np.max(np.abs(w_full[core]))))

    k_r, k_s, k_t = (solver.step_index(v) for v in (r, s, t))
    if not k_r <= k_s <= k_t:
        raise ConfigError(f"Se requiere r <= s <= t (r={r}, s={s}, t={t})")

    # Primera desigualdad: Horner sobre los pasos de [r, s)
    acc = np.zeros(len(interior))
    for k in range(k_r, k_s):
        aw = operator_on_grid(solver, L, (k + 1) * dt, w_full)[interior]
        acc = solver.step(acc + aw, k)
    tail_prop = solver.propagator(s, t)
    integral = dt * tail_prop.apply_interior(acc)
    lhs = tail_prop.apply_interior(w_int) - solver.propagator(r, t).apply_interior(w_int)
    margin1 = lhs + integral                         # >= 0 esperado
    core_int = np.searchsorted(interior, core)
    supersolution_margin = float(np.min(margin1[core_int]))

    # Segunda desigualdad: filas del núcleo hacia atrás en σ
    a_sigma, b_sigma = beta_interval if beta_interval is not None else (0.0, solver.field.T / 2)
    m_a = int(round(a_sigma / dt))
    m_b = int(round(b_sigma / dt))
    correction = 0.0
    for m in range(m_a, m_b):
        aw = operator_on_grid(solver, L, (k_t - m) * dt, w_full)[interior]
        correction = max(correction, float(np.max(aw + L.g(np.maximum(w_int, 0.0)))))

    rows = np.zeros((len(interior), len(core_int)))
    rows[core_int, np.arange(len(core_int))] = 1.0
    beta = {}
    for m in range(0, m_b + 1):
        if m >= m_a:
            beta[m] = rows.T @ w_int
        if m < m_b:
            rows = solver.step_transpose(rows, k_t - m - 1)

    integral_g = np.zeros(len(core_int))
    for m in range(m_a, m_b):
        integral_g += dt * (L.g(np.maximum(beta[m + 1], 0.0)) - correction)
    margin2 = -integral_g - (beta[m_b] - beta[m_a])  # >= 0 esperado
    beta_margin = float(np.min(margin2))

    logger.info("Supersolución: márgenes %.3g / %.3g (tol %.3g, C=%.3g)",
                supersolution_margin, beta_margin, tol, correction)
    return InequalityReport(supersolution_margin=supersolution_margin,
                            beta_margin=beta_margin, tolerance=tol,
                            nodes=len(core_int), correction_C=correction)


def uniform_bound_check(solver: EvolutionSolver, L: LyapunovData, t: float,
                        delta: float, comparison: ComparisonSolution,
                        slack: float = 0.05) -> ResidualReport:
    """sup del núcleo de G(t,t-δ)W contra C(δ)·(1 + slack)."""
    w_full = lyapunov_on_grid(L, solver.grid)
    values = solver.propagate(w_full, t - delta, t)
    sup = float(np.max(values[solver.grid.core()]))
    bound = comparison.bound(delta)
    return ResidualReport('uniform_bound', sup, bound * (1.0 + slack),
                          {'delta': delta, 'C_delta': bound})
