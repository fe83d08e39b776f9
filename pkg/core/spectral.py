"""
Análisis espectral del mapa de período V(s) = G(s+T, s): datos de Floquet,
proyecciones espectrales, ajustes de decaimiento y firmas de compacidad.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator
from scipy.stats import linregress

from core.errors import ConfigError, DegenerateSpectrumError, SizeOverflowError
from core.evolution import DENSE_LIMIT, EvolutionSolver, Propagator
from core.logger import logger
from models.lab_models import (
    CoefficientField, DecayFit, DecayReport, Grid, SpectralReport, weighted_lp_norm
)
from models.report_models import ResidualReport

DENSE_EIG_LIMIT = 400
GAP_TOLERANCE = 1e-8
POWER_TOLERANCE = 1e-13
POWER_MAX_ITER = 20000
FIT_WINDOW = (1e-10, 1e-3)
MIN_FIT_POINTS = 4
MIN_R_SQUARED = 0.99
SINGULAR_CUTOFF = 1e-6
TRUNCATION_TOLERANCE = 1e-3

PeriodMap = Union[np.ndarray, LinearOperator]


# ---------- Mapa de período ----------

def assemble_period_map(solver: EvolutionSolver, s: float) -> PeriodMap:
    """
    V(s) sobre los nodos interiores. Por encima del límite denso retorna un
    operador sin matriz que aplica la cadena de factores.
    """
    if solver.n_interior <= DENSE_LIMIT:
        return solver.period_map(s)
    logger.info("V(%.4g): %d nodos, se usa el operador sin matriz", s, solver.n_interior)
    P = solver.propagator(s, s + solver.field.T)
    n = solver.n_interior
    return LinearOperator((n, n), matvec=P.apply_interior,
                          rmatvec=P.apply_transpose_interior, dtype=float)


def _operators(V: PeriodMap) -> Tuple[Callable, Callable]:
    if isinstance(V, np.ndarray):
        return (lambda x: V @ x), (lambda x: V.T @ x)
    return V.matvec, V.rmatvec


# ---------- Datos de Floquet ----------

def _fix_sign(v: np.ndarray) -> np.ndarray:
    return -v if v.sum() < 0 else v


def _power(apply: Callable, x: np.ndarray) -> np.ndarray:
    x = x / np.linalg.norm(x)
    for _ in range(POWER_MAX_ITER):
        y = apply(x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return x
        y = y / norm
        if np.linalg.norm(y - x) < POWER_TOLERANCE:
            return y
        x = y
    logger.warning("Iteración de potencias sin converger en %d pasos", POWER_MAX_ITER)
    return x


def _deflated_modulus(apply: Callable, psi: np.ndarray, w: np.ndarray,
                      seed: int) -> float:
    """|λ2| por iteración de potencias sobre el complemento de ψ1 (Hotelling)."""
    def project(v):
        return v - psi * (w @ v)

    rng = np.random.default_rng(seed)
    x = project(rng.standard_normal(len(psi)))
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return 0.0
    x /= norm
    history = []
    estimate = 0.0
    for _ in range(POWER_MAX_ITER):
        y = project(apply(x))
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        history.append(new)
        if abs(new - estimate) <= POWER_TOLERANCE * max(new, 1e-300):
            return new
        estimate = new
        x = y / new
    # par complejo: el cociente oscila; se usa la media geométrica final
    tail = np.asarray(history[-64:])
    logger.warning("|λ2| sin converger; media geométrica de las últimas %d razones",
                   len(tail))
    return float(np.exp(np.mean(np.log(tail))))


def floquet_data(V: PeriodMap, period: float, s: float = 0.0,
                 method: str = "auto", seed: int = 0) -> SpectralReport:
    """
    Par dominante de V(s) y módulo del segundo multiplicador.

    Args:
        V: Matriz densa u operador sin matriz sobre los nodos interiores
        period: Período T
        s: Fase de V
        method: 'dense', 'power' o 'auto' (denso hasta 400 nodos)
        seed: Semilla del arranque aleatorio de la deflación

    Returns:
        SpectralReport con w normalizado a suma 1 y ⟨w, ψ⟩ = 1
    """
    n = V.shape[0]
    if method == "auto":
        method = "dense" if isinstance(V, np.ndarray) and n <= DENSE_EIG_LIMIT else "power"
    if method == "dense" and not isinstance(V, np.ndarray):
        raise SizeOverflowError("El método denso requiere la matriz V explícita")
    if method not in ("dense", "power"):
        raise ConfigError(f"Método espectral desconocido: {method!r}")

    matvec, rmatvec = _operators(V)
    if method == "dense":
        values, left, right = scipy.linalg.eig(V, left=True, right=True)
        order = np.argsort(-np.abs(values), kind='stable')
        lead = order[0]
        lambda1 = float(values[lead].real)
        lambda2_abs = float(np.abs(values[order[1]])) if n > 1 else 0.0
        psi = _fix_sign(right[:, lead].real)
        w = _fix_sign(left[:, lead].real)
    else:
        start = np.ones(n)
        psi = _fix_sign(_power(matvec, start))
        w = _fix_sign(_power(rmatvec, start))
        lambda1 = float((w @ matvec(psi)) / (w @ psi))

    total = w.sum()
    w = w / (total if abs(total) > 1e-300 else np.linalg.norm(w))
    pairing = w @ psi
    psi = psi / pairing if abs(pairing) > 1e-300 else psi

    if method == "power":
        lambda2_abs = _deflated_modulus(matvec, psi, w, seed)

    gap = abs(lambda1) - lambda2_abs
    degenerate = bool(gap < GAP_TOLERANCE)
    scale = float(np.max(np.abs(matvec(np.ones(n))))) or 1.0
    residuals = {
        'right': float(np.max(np.abs(matvec(psi) - lambda1 * psi)) / (scale * np.max(np.abs(psi)))),
        'left': float(np.max(np.abs(rmatvec(w) - lambda1 * w)) / (scale * np.max(np.abs(w)))),
        'scale': scale,
        'min_psi_ratio': float(np.min(psi) / np.max(psi)) if np.max(psi) > 0 else 0.0,
    }
    if degenerate:
        logger.warning("V(%.4g): λ1=%.10g, |λ2|=%.10g, brecha degenerada", s, lambda1, lambda2_abs)
    else:
        logger.info("V(%.4g) [%s]: λ1=%.12g, |λ2|=%.12g", s, method, lambda1, lambda2_abs)
    return SpectralReport(s=float(s), period=float(period), lambda1=lambda1,
                          lambda2_abs=lambda2_abs, psi=psi, w=w, residuals=residuals,
                          degenerate=degenerate, method=method)


# ---------- Proyecciones ----------

@dataclass
class SpectralProjections:
    """P φ = ⟨w, φ⟩ ψ1 y Q = I − P sobre los nodos interiores."""
    psi: np.ndarray
    w: np.ndarray

    def P(self, v: np.ndarray) -> np.ndarray:
        return np.multiply.outer(self.psi, self.w @ v)

    def Q(self, v: np.ndarray) -> np.ndarray:
        return v - self.P(v)

    def matrix(self) -> np.ndarray:
        return np.outer(self.psi, self.w)

    def identity_residuals(self, V: np.ndarray) -> Dict[str, float]:
        """Residuos de P²=P, Q²=Q, P+Q=I y PV=VP relativos a la escala de V."""
        P = self.matrix()
        Q = np.eye(len(self.psi)) - P
        scale = max(1.0, float(np.max(np.abs(V))))
        return {
            'P2_minus_P': float(np.max(np.abs(P @ P - P))),
            'Q2_minus_Q': float(np.max(np.abs(Q @ Q - Q))),
            'P_plus_Q_minus_I': float(np.max(np.abs(P + Q - np.eye(len(P))))),
            'PV_minus_VP': float(np.max(np.abs(P @ V - V @ P))) / scale,
        }


def projections(S: SpectralReport) -> SpectralProjections:
    """
    Raises:
        DegenerateSpectrumError: si la brecha de S es degenerada
    """
    if S.degenerate:
        raise DegenerateSpectrumError(
            f"Proyecciones no definidas: brecha degenerada en s={S.s}")
    return SpectralProjections(psi=S.psi, w=S.w)


def intertwining_residual(solver: EvolutionSolver, S_s: SpectralReport,
                          S_t: SpectralReport, s: float, t: float,
                          battery: Sequence[np.ndarray]) -> ResidualReport:
    """max ‖P(t)G(t,s)φ − G(t,s)P(s)φ‖_∞ sobre la batería (valores en toda la malla)."""
    P_s, P_t = projections(S_s), projections(S_t)
    G = solver.propagator(s, t)
    residual = 0.0
    for values in battery:
        u = np.asarray(values, dtype=float)[solver.interior]
        left = P_t.P(G.apply_interior(u))
        right = G.apply_interior(P_s.P(u))
        scale = max(1.0, float(np.max(np.abs(u))))
        residual = max(residual, float(np.max(np.abs(left - right))) / scale)
    return ResidualReport('intertwining', residual, 1e-6, {'s': s, 't': t})


def phase_independence(solver: EvolutionSolver,
                       phases: Sequence[float]) -> ResidualReport:
    """Variación relativa de λ1 y |λ2| entre fases."""
    reports = [floquet_data(assemble_period_map(solver, p), solver.field.T, s=p)
               for p in phases]
    ref = reports[0]
    worst = 0.0
    for rep in reports[1:]:
        worst = max(worst,
                    abs(rep.lambda1 - ref.lambda1) / abs(ref.lambda1),
                    abs(rep.lambda2_abs - ref.lambda2_abs) / max(ref.lambda2_abs, 1e-300))
    return ResidualReport('phase_independence', worst, 1e-8, {
        'phases': [float(p) for p in phases],
        'lambda1': [r.lambda1 for r in reports],
        'lambda2_abs': [r.lambda2_abs for r in reports],
    })


def truncation_stability(c: CoefficientField, s: float, dt: float, h: float,
                         R: float, theta: float = 1.0) -> ResidualReport:
    """Cambio relativo de (λ1, |λ2|) al duplicar el dominio; marcado si > 1e-3."""
    reports = []
    for radius in (R, 2 * R):
        solver = EvolutionSolver(c, Grid(c.d, radius, h), dt, theta)
        reports.append(floquet_data(assemble_period_map(solver, s), c.T, s=s))
    small, large = reports
    change = max(abs(large.lambda1 - small.lambda1) / abs(large.lambda1),
                 abs(large.lambda2_abs - small.lambda2_abs) / max(large.lambda2_abs, 1e-300))
    if change > TRUNCATION_TOLERANCE:
        logger.warning("(λ1, |λ2|) no estabiliza al pasar de R=%g a R=%g: cambio %.3g",
                       R, 2 * R, change)
    return ResidualReport('truncation_stability', change, TRUNCATION_TOLERANCE, {
        'R': [R, 2 * R],
        'lambda1': [small.lambda1, large.lambda1],
        'lambda2_abs': [small.lambda2_abs, large.lambda2_abs],
    })


# ---------- Decaimiento ----------

def _fit_curve(tag: str, ks: np.ndarray, errors: np.ndarray, period: float) -> DecayFit:
    envelope = np.maximum.accumulate(errors[::-1])[::-1]
    lo, hi = FIT_WINDOW
    mask = (envelope >= lo) & (envelope <= hi)
    if mask.sum() < MIN_FIT_POINTS:
        logger.warning("Ventana de ajuste vacía para %s (%d puntos)", tag, int(mask.sum()))
        return DecayFit(tag=tag, rate=None, k_range=None, r_squared=float('nan'),
                        reliable=False, status='window_empty')
    fit = linregress(ks[mask] * period, np.log(envelope[mask]))
    r_squared = float(fit.rvalue ** 2)
    reliable = r_squared >= MIN_R_SQUARED
    if not reliable:
        logger.warning("Ajuste poco fiable para %s: R²=%.4f", tag, r_squared)
    return DecayFit(tag=tag, rate=float(fit.slope),
                    k_range=(int(ks[mask][0]), int(ks[mask][-1])),
                    r_squared=r_squared, reliable=reliable,
                    status='ok' if reliable else 'unreliable')


def decay_fit(solver: EvolutionSolver, S: SpectralReport, phi: np.ndarray,
              k_max: int, p_list: Sequence[float] = (2.0, 4.0), core_fraction: float = 0.5,
              phi_name: str = "") -> DecayReport:
    """
    Curvas e_k para G(s+kT, s)φ normalizado por fugas y ajuste log-lineal.

    Args:
        solver: Cadena de factores
        S: Datos de Floquet en la fase s (fijan s, ω0 y la medida μ_s)
        phi: Valores de φ en toda la malla
        k_max: Número de períodos
        p_list: Exponentes de las normas L^p(μ_s)

    Raises:
        DegenerateSpectrumError: si la brecha es degenerada
    """
    if S.degenerate:
        raise DegenerateSpectrumError("Ajuste de decaimiento rechazado: brecha degenerada")
    V = solver.period_map(S.s)
    grid = solver.grid
    core_local = grid.core_mask(core_fraction)[solver.interior]
    mu = np.where(S.w < 0, 0.0, S.w)
    mu = mu / mu.sum()

    u = np.asarray(phi, dtype=float)[solver.interior]
    m_s = float(mu @ u)
    ones = np.ones(solver.n_interior)
    tags = ['sup'] + [f'L{p:g}' for p in p_list]
    curves = {tag: np.empty(k_max) for tag in tags}
    for k in range(k_max):
        u = V @ u
        ones = V @ ones
        ratio = np.divide(u, ones, out=np.zeros_like(u), where=ones > 1e-300)
        err = ratio - m_s
        curves['sup'][k] = float(np.max(np.abs(err[core_local])))
        for p, tag in zip(p_list, tags[1:]):
            curves[tag][k] = weighted_lp_norm(mu, err, p)

    ks = np.arange(1, k_max + 1)
    fits = {tag: _fit_curve(tag, ks, curves[tag], S.period) for tag in tags}
    logger.info("Decaimiento %s: ω0=%.6g, tasas %s", phi_name or 'φ', S.omega0,
                {tag: f.rate for tag, f in fits.items()})
    return DecayReport(omega0=S.omega0, fits=fits, curves=curves, ks=ks, phi_name=phi_name)


# ---------- Compacidad ----------

def kernel_singular_cutoff(K: np.ndarray, rel: float = SINGULAR_CUTOFF) -> Tuple[Optional[int], np.ndarray]:
    """
    Primer índice k* con σ_k/σ_1 <= rel (número de valores singulares por
    encima del corte); None si no hay corte.
    """
    sigma = scipy.linalg.svdvals(K)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0, sigma
    ratios = sigma / sigma[0]
    below = np.nonzero(ratios <= rel)[0]
    return (int(below[0]) if below.size else None), ratios


def _greedy_net(columns: np.ndarray, p: float, eps: float) -> int:
    norms = np.sum(np.abs(columns) ** p, axis=0) ** (1.0 / p)
    centers = []
    for j in np.argsort(-norms, kind='stable'):
        col = columns[:, j]
        if not centers:
            centers.append(col)
            continue
        dist = np.sum(np.abs(np.asarray(centers) - col) ** p, axis=1) ** (1.0 / p)
        if dist.min() > eps:
            centers.append(col)
    return len(centers)


def lp_compactness_probe(P: Propagator, mu_s: np.ndarray, mu_t: np.ndarray,
                         p: float = 2.0, rel: float = SINGULAR_CUTOFF) -> Dict[str, object]:
    """
    Firma de compacidad de G(t,s): L^p(μ_s) -> L^p(μ_t).

    Con coordenadas isométricas a_j = μ_j^{1/p} φ_j el operador es
    D_t^{1/p} K D_s^{-1/p}. Para p=2 se usan sus valores singulares; para
    otros p, el tamaño de una ε-red voraz de sus columnas.
    """
    K = P.dense_kernel()
    mu_s = np.asarray(mu_s, dtype=float)
    mu_t = np.asarray(mu_t, dtype=float)
    rows = np.nonzero(mu_t > 1e-14 * mu_t.max())[0]
    cols = np.nonzero(mu_s > 1e-14 * mu_s.max())[0]
    A = (mu_t[rows, None] ** (1.0 / p)) * K[np.ix_(rows, cols)] * (mu_s[None, cols] ** (-1.0 / p))
    k_star, ratios = kernel_singular_cutoff(A, rel)
    result = {'p': p, 'nodes': int(len(cols)), 'k_star': k_star,
              'compact_signature': k_star is not None,
              'sigma_ratios': ratios}
    if p != 2.0:
        col_norms = np.sum(np.abs(A) ** p, axis=0) ** (1.0 / p)
        result['net_size'] = _greedy_net(A, p, 1e-3 * float(col_norms.max()))
    return result


def compactness_dichotomy(c: CoefficientField, s: float, t: float, dt: float,
                          h: float, R_ladder: Sequence[float] = (4.0, 8.0),
                          theta: float = 1.0) -> Dict[str, object]:
    """k* del núcleo sin pesos bajo duplicación del dominio: estable (|Δk*| <= 2) es COMPACT."""
    cutoffs = []
    for R in R_ladder:
        solver = EvolutionSolver(c, Grid(c.d, R, h), dt, theta)
        k_star, _ = kernel_singular_cutoff(solver.propagator(s, t).dense_kernel())
        cutoffs.append(k_star)
    stable = all(k is not None for k in cutoffs) and all(
        abs(b - a) <= 2 for a, b in zip(cutoffs, cutoffs[1:]))
    verdict = 'COMPACT' if stable else 'NON-COMPACT'
    logger.info("Dicotomía de compacidad: k*=%s -> %s", cutoffs, verdict)
    return {'radii': list(R_ladder), 'k_star': cutoffs, 'verdict': verdict}
