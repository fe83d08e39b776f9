"""
Orquestación de experimentos: cada subcomando de la CLI ejecuta los
experimentos de su tipo y produce veredictos con tolerancia.
"""
import platform
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy

from core.coefficient_field import validate_field
from core.errors import ConfigError, NumericalError
from core.evolution import (
    EvolutionSolver, chapman_kolmogorov_check, derivative_refinement_study,
    derivative_relation_check, expanding_domain_study, indicator_lower_bound,
    smooth_indicator, strict_positivity
)
from core.expression_parser import Expr, parse_expr, to_source
from core.logger import logger
from core.lyapunov import (
    SampleSpec, check_dissipativity, check_drift_bound, check_log_drift,
    check_superlinear, scan_drift_lambda, solve_comparison, supersolution_check,
    uniform_bound_check
)
from core.measures import (
    family_to_frame, fokker_planck_residual, invariance_residual,
    lebesgue_lp_probe, lp_contraction, lyapunov_mean_bound, periodic_measures,
    tightness_dichotomy, tightness_monotone_check, tightness_radius, total_variation,
    uniqueness_probe
)
from core.montecarlo import (
    ACCEPTANCE_EM_DT, ACCEPTANCE_PATHS, BLOCK_PAIRS, empirical_kernel, endpoint_moments,
    ou_triple_agreement, simulate, tail_mass, weak_order_study
)
from core.ou_exact import ou_exact_measure, ou_exact_moments, ou_expectation
from core.spectral import (
    assemble_period_map, compactness_dichotomy, decay_fit, floquet_data,
    intertwining_residual, lp_compactness_probe, phase_independence, projections,
    truncation_stability
)
from core.symbolic import differentiate, evaluate
from models.config_models import ExperimentConfig, ExperimentSpec, NumericsConfig
from models.lab_models import EvolutionMeasureFamily, LyapunovData, TestFunction
from models.report_models import ExperimentResult, RunReport

DEFAULT_BATTERY = {1: ("1", "x1", "x1^2", "sin(x1)"),
                   2: ("1", "x1", "x2^2", "sin(x1)*cos(x2)")}
FD_STEP = 1e-5
FD_TOLERANCE = 1e-6
RATE_TOLERANCE = 0.10


def _parse_param(source: str, where: str) -> Expr:
    try:
        return parse_expr(source)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _within(a: Optional[float], b: Optional[float], rel: float) -> bool:
    if a is None or b is None:
        return False
    return abs(a - b) <= rel * max(abs(a), abs(b))


def fd_agreement(e: Expr, d: int, X: np.ndarray, times: np.ndarray,
                 step: float = FD_STEP) -> float:
    """
    max |simbólica - diferencia centrada| / (1 + |simbólica|) sobre las
    muestras, para todas las variables t, x1..xd.
    """
    worst = 0.0
    for var in ['t'] + [f"x{i + 1}" for i in range(d)]:
        env = {f"x{i + 1}": X[:, i] for i in range(d)}
        env['t'] = times
        symbolic = np.broadcast_to(evaluate(differentiate(e, var), env), times.shape)
        up, down = dict(env), dict(env)
        up[var] = env[var] + step
        down[var] = env[var] - step
        fd = (np.broadcast_to(evaluate(e, up), times.shape)
              - np.broadcast_to(evaluate(e, down), times.shape)) / (2 * step)
        worst = max(worst, float(np.max(np.abs(symbolic - fd) / (1.0 + np.abs(symbolic)))))
    return worst


class ExperimentRunner:
    """
    Ejecuta los experimentos de una configuración. Los solvers y las familias
    de medidas se comparten entre experimentos de la misma corrida.
    """

    def __init__(self, cfg: ExperimentConfig, seed: Optional[int] = None,
                 refine: int = 0, parallel: bool = False):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.refine = int(refine)
        self.parallel = parallel
        self._solvers: Dict[tuple, EvolutionSolver] = {}
        self._families: Dict[tuple, EvolutionMeasureFamily] = {}
        self._lock = threading.RLock()
        self._timings: Dict[str, float] = {}

    # ---------- Recursos compartidos ----------

    def numerics(self, params: Optional[dict] = None) -> NumericsConfig:
        """Numéricos base con los reemplazos del experimento, refinados."""
        params = params or {}
        base = self.cfg.numerics
        num = replace(base,
                      R=float(params.get('R', base.R)),
                      h=float(params.get('h', base.h)),
                      dt=float(params.get('dt', base.dt)),
                      theta=float(params.get('theta', base.theta)))
        return num.refined(self.refine)

    def solver(self, params: Optional[dict] = None) -> EvolutionSolver:
        num = self.numerics(params)
        key = (num.R, num.h, num.dt, num.theta, num.drift_scheme)
        with self._lock:
            solver = self._solvers.get(key)
            if solver is None:
                try:
                    grid = num.grid(self.cfg.field.d)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
                solver = EvolutionSolver(self.cfg.field, grid, num.dt, num.theta,
                                         num.drift_scheme)
                self._solvers[key] = solver
        return solver

    def family(self, params: Optional[dict] = None,
               phase_count: int = 8) -> Tuple[EvolutionSolver, EvolutionMeasureFamily]:
        solver = self.solver(params)
        key = (id(solver), phase_count)
        with self._lock:
            family = self._families.get(key)
            if family is None:
                family = periodic_measures(solver, phase_count)
                self._families[key] = family
        return solver, family

    def battery(self, params: dict) -> List[Tuple[str, Expr]]:
        sources = params.get('battery', DEFAULT_BATTERY[self.cfg.field.d])
        return [(src, _parse_param(src, 'battery')) for src in sources]

    def lyapunov_data(self, item: dict) -> LyapunovData:
        """LyapunovData base de la configuración con los reemplazos de un chequeo."""
        base = self.cfg.lyapunov
        if 'W' in item:
            W = _parse_param(item['W'], 'lyapunov/W')
        elif base is not None:
            W = base.W
        else:
            raise ConfigError("El chequeo de Lyapunov requiere W")
        if base is None:
            base = LyapunovData(W=W)
        return replace(base, W=W,
                       tail=bool(item.get('tail', base.tail if 'W' not in item else False)),
                       R0=item.get('R0', base.R0),
                       lam=item.get('lambda', base.lam),
                       a=item.get('a', base.a),
                       cc=item.get('cc', base.cc),
                       c=float(item.get('c', base.c)),
                       gamma=float(item.get('gamma', base.gamma)))

    # ---------- Corrida ----------

    def run(self, subcommand: str) -> RunReport:
        specs = self.cfg.experiments_for(subcommand)
        started = time.perf_counter()
        if self.parallel and len(specs) > 1:
            with ThreadPoolExecutor() as pool:
                results = list(pool.map(self.run_experiment, specs))
        else:
            results = [self.run_experiment(spec) for spec in specs]
        return RunReport(config=self.cfg.source, subcommand=subcommand,
                         experiments=results,
                         provenance=self._provenance(time.perf_counter() - started))

    def run_experiment(self, spec: ExperimentSpec) -> ExperimentResult:
        result = ExperimentResult(name=spec.name, kind=spec.kind)
        handler = getattr(self, f"_run_{spec.kind}", None)
        if handler is None:
            result.error, result.error_kind = f"Tipo de experimento desconocido: {spec.kind}", 'config'
            return result
        logger.info("Experimento %s (%s)", spec.name, spec.kind)
        started = time.perf_counter()
        try:
            handler(spec, result)
        except ConfigError as exc:
            logger.error("Experimento %s: error de configuración: %s", spec.name, exc)
            result.error, result.error_kind = str(exc), 'config'
        except NumericalError as exc:
            logger.error("Experimento %s: fallo numérico: %s", spec.name, exc)
            result.error, result.error_kind = str(exc), 'numerical'
        self._timings[spec.name] = time.perf_counter() - started
        verdict = 'PASS' if result.passed else 'FAIL'
        logger.info("Experimento %s: %s (%d chequeos)", spec.name, verdict, len(result.checks))
        return result

    def _provenance(self, wall_time: float) -> dict:
        return {
            'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'pandas': pd.__version__,
            'seed': self.seed,
            'refine': self.refine,
            'parallel': self.parallel,
            'config_path': self.cfg.path,
            'wall_time': wall_time,
            'experiment_wall_times': dict(self._timings),
            'finished': datetime.now().isoformat(timespec='seconds'),
            'mc_representation': 'reversed-schedule',
        }

    def _expect(self, result: ExperimentResult, name: str, actual, expected) -> None:
        result.add(name, None, None, actual == expected,
                   f"obtenido={actual}, esperado={expected}")

    # ---------- validate ----------

    def _run_validate(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        num = self.numerics(p)
        sample_R = float(p.get('sample_R', num.R))
        report = validate_field(c, sample_R, int(p.get('n_samples', 41)))
        result.values['validation'] = report.to_dict()
        self._expect(result, 'field_accepted', report.accepted, spec.expect.get('accepted', True))
        if 'eta0' in spec.expect:
            diff = abs(report.eta0 - float(spec.expect['eta0']))
            result.add('eta0', diff, 1e-12, diff <= 1e-12, f"eta0={report.eta0}")
        if report.accepted:
            result.add('periodicity', report.max_periodicity_violation, 1e-12,
                       report.max_periodicity_violation <= 1e-12)

        exprs = [e for row in c.Q for e in row] + list(c.b)
        if self.cfg.lyapunov is not None:
            exprs.append(self.cfg.lyapunov.W)
        failures = [to_source(e) for e in exprs if parse_expr(to_source(e)) != e]
        result.add('parse_round_trip', len(failures), 0, not failures, "; ".join(failures))

        rng = np.random.default_rng(self.seed)
        n = int(p.get('derivative_samples', 1000))
        X = rng.uniform(-sample_R, sample_R, size=(n, c.d))
        times = rng.uniform(0.0, c.T, size=n)
        worst = max(fd_agreement(e, c.d, X, times) for e in list(c.b) + [e for row in c.Q for e in row])
        L = self.cfg.lyapunov
        if L is not None:
            if L.tail:
                r_lo = float(L.R0)
                radii = rng.uniform(r_lo, max(sample_R, 2 * r_lo), size=n)
                direction = rng.standard_normal((n, c.d))
                direction /= np.linalg.norm(direction, axis=1, keepdims=True)
                XW = direction * radii[:, None]
            else:
                XW = X
            worst = max(worst, fd_agreement(L.W, c.d, XW, times))
        result.add('symbolic_vs_fd', worst, FD_TOLERANCE, worst <= FD_TOLERANCE,
                   f"{n} muestras, paso {FD_STEP}")

    # ---------- lyapunov ----------

    def _default_lyapunov_checks(self) -> List[dict]:
        L = self.cfg.lyapunov
        if L is None:
            return []
        checks = []
        if L.lam is not None:
            checks.append({'check': 'drift'})
        if L.a is not None and L.cc is not None:
            checks.append({'check': 'dissipativity', 'expect': True})
        if L.R0 is not None and L.gamma > 1:
            checks.append({'check': 'superlinear', 'expect': True})
        return checks

    def _run_lyapunov(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        sampling = p.get('sampling', {})
        sample = SampleSpec(R_domain=float(sampling.get('R_domain', self.cfg.numerics.R)),
                            n_times=int(sampling.get('n_times', 64)),
                            n_radial=int(sampling.get('n_radial', 48)))
        margins = []
        for i, item in enumerate(p.get('checks', self._default_lyapunov_checks())):
            kind = item['check']
            label = item.get('name', f"{kind}[{i}]")
            if kind == 'log_drift':
                report = check_log_drift(c, float(item.get('c', 1.0)),
                                         float(item.get('gamma', 2.0)),
                                         float(item.get('R0', 2.0)), sample)
            elif kind == 'drift' and item.get('scan', self.lyapunov_data(item).lam is None):
                lam, report = scan_drift_lambda(c, self.lyapunov_data(item), sample)
                result.values[f'{label}_lambda_star'] = lam
                if 'expect_lambda' in item:
                    self._expect(result, label, lam, item['expect_lambda'])
                margins.append(dict(report.to_dict(), name=label))
                continue
            elif kind == 'drift':
                report = check_drift_bound(c, self.lyapunov_data(item), sample)
            elif kind == 'dissipativity':
                report = check_dissipativity(c, self.lyapunov_data(item), sample)
            elif kind == 'superlinear':
                report = check_superlinear(c, self.lyapunov_data(item), sample)
            else:
                raise ConfigError(f"Chequeo de Lyapunov desconocido: {kind!r}")
            margins.append(dict(report.to_dict(), name=label))
            expected = item.get('expect', True)
            detail = report.error or f"sup={report.sup_margin:.6g}, testigo={report.witness}"
            result.add(label, None if np.isnan(report.sup_margin) else report.sup_margin,
                       None, report.accepted is not None and report.accepted == expected, detail)
        result.values['margins'] = margins

        if 'comparison' in p:
            self._comparison(p['comparison'], result)
        if 'supersolution' in p:
            q = p['supersolution']
            solver = self.solver(q)
            L = self.lyapunov_data(q)
            report = supersolution_check(solver, L, float(q.get('r', 0.0)),
                                         float(q.get('s', 0.5)), float(q.get('t', 1.0)))
            result.values['supersolution'] = report.to_dict()
            result.add('supersolution', report.supersolution_margin, -report.tolerance,
                       report.supersolution_margin >= -report.tolerance)
            result.add('beta_inequality', report.beta_margin, -report.tolerance,
                       report.beta_margin >= -report.tolerance)
        if 'uniform_bound' in p:
            q = p['uniform_bound']
            solver = self.solver(q)
            L = self.lyapunov_data(q)
            delta = float(q.get('delta', 0.5))
            comparison = solve_comparison(float(q.get('zeta0', 100.0)), L.c, L.gamma,
                                          delta, delta / 100)
            report = uniform_bound_check(solver, L, float(q.get('t', self.cfg.field.T)),
                                         delta, comparison)
            result.values['uniform_bound'] = report.details
            result.checks.append(report.to_check())
        if 'pointwise_bound' in p:
            q = p['pointwise_bound']
            solver, family = self.family(q, int(q.get('phase_count', 8)))
            L = self.lyapunov_data(q)
            bound = lyapunov_mean_bound(family, L, solver, float(q.get('s', 0.0)),
                                        float(q.get('t', self.cfg.field.T)))
            result.values['lyapunov_bounds'] = bound
            result.add('pointwise_W_bound', bound['pointwise_excess'], 1e-6, bound['pointwise_ok'])
            result.add('measure_W_bound', max(bound['means']), bound['bound'], bound['mean_ok'])

    def _comparison(self, q: dict, result: ExperimentResult) -> None:
        c_rate = float(q.get('c', 1.0))
        gamma = float(q.get('gamma', 2.0))
        s = float(q.get('s', 0.5))
        rows = []
        for zeta0 in q.get('zeta0', [10.0, 100.0, 1e6]):
            sol = solve_comparison(float(zeta0), c_rate, gamma, s, float(q.get('dt', 1e-3)))
            err = sol.max_relative_error
            value = sol.at(s)
            bound = sol.bound(s)
            rows.append({'zeta0': zeta0, 'zeta': value, 'C': bound, 'rel_error': err})
            result.add(f'comparison_closed_form[{zeta0:g}]', err, 1e-6, err <= 1e-6)
            result.add(f'comparison_bound[{zeta0:g}]', value, bound, value <= bound + 1e-12)
        result.values['comparison'] = rows

    # ---------- solve ----------

    def _run_solve(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        solver = self.solver(p)
        grid = solver.grid
        dt = solver.dt
        s = float(p.get('s', 0.0))
        t = float(p.get('t', c.T))
        P = solver.propagator(s, t)

        contraction = -np.inf
        positivity = np.inf
        table = {f"x{i + 1}": grid.points[:, i] for i in range(c.d)}
        battery = self.battery(p)
        values_list = []
        for name, e in battery:
            phi = TestFunction(expr=e, name=name).on_grid(grid, s)
            out = P.apply(phi)
            values_list.append(phi)
            table[f"G[{name}]"] = out
            contraction = max(contraction, float(np.max(np.abs(out)) - np.max(np.abs(phi))))
            if np.all(phi >= 0):
                positivity = min(positivity, float(np.min(out)))
        result.frames['solution'] = pd.DataFrame(table)
        result.add('contraction', contraction, 1e-12, contraction <= 1e-12)
        if solver.positivity_guaranteed:
            result.add('positivity', positivity, -1e-12, positivity >= -1e-12)
        else:
            result.values['positivity_min'] = positivity

        r = round((s + t) / 2 / dt) * dt
        result.checks.append(chapman_kolmogorov_check(solver, s, r, t, values_list).to_check())

        K = P.dense_kernel()
        row_sums = K.sum(axis=1)
        result.add('kernel_row_sums', float(np.max(row_sums)), 1 + 1e-12,
                   float(np.max(row_sums)) <= 1 + 1e-12)
        if solver.positivity_guaranteed:
            result.add('kernel_entries', float(np.min(K)), -1e-14, float(np.min(K)) >= -1e-14)

        if self.cfg.ou is not None:
            self._ou_agreement(p, solver, s, t, battery, values_list, result)

        if 'expanding' in p:
            expanding = p['expanding']
            num = self.numerics(p)
            phi = TestFunction(expr=_parse_param(expanding.get('phi', 'exp(-x1^2)'), 'expanding/phi'))
            study = expanding_domain_study(c, s, t, num.dt, phi,
                                           expanding.get('R_ladder', [2.0, 4.0, 8.0]),
                                           num.h, num.theta, num.drift_scheme)
            result.values['expanding'] = study.to_dict()
            result.add('expanding_monotone', study.monotone_violation, 1e-12, study.monotone)
            result.add('expanding_increments_decrease', None, None, study.decreasing,
                       f"incrementos={study.increments}")

        if 'derivative' in p:
            self._derivative(p['derivative'], result)

    def _ou_agreement(self, p: dict, solver: EvolutionSolver, s: float, t: float,
                      battery, values_list, result: ExperimentResult) -> None:
        grid = solver.grid
        radius = float(p.get('ou_core_radius', 2.0))
        core = np.nonzero((grid.radius <= radius) & ~grid.boundary_mask)[0]
        tol = float(p.get('ou_tolerance', 5e-3))
        for (name, e), phi in zip(battery, values_list):
            pde = solver.propagate(phi, s, t)[core]
            exact = ou_expectation(self.cfg.ou, s, t, grid.points[core, 0], e)
            err = float(np.max(np.abs(pde - exact)))
            result.add(f'ou_closed_form[{name}]', err, tol, err <= tol)

    def _derivative(self, q: dict, result: ExperimentResult) -> None:
        c = self.cfg.field
        solver = self.solver(q)
        phi = _parse_param(q.get('phi', 'exp(-x1^2)'), 'derivative/phi')
        s = float(q.get('s', 0.5))
        t = float(q.get('t', 1.5))
        report = derivative_relation_check(solver, s, t, phi,
                                           tolerance=float(q.get('tolerance', 0.05)))
        result.values['derivative'] = report.details
        result.checks.append(report.to_check())
        levels = int(q.get('refine_levels', 0))
        if levels > 0:
            num = self.numerics(q)
            study = derivative_refinement_study(c, num.R, num.h, num.dt, s, t, phi,
                                                levels, num.theta)
            result.values['derivative_refinement'] = study
            for i, ratio in enumerate(study['ratios']):
                result.add(f'derivative_refinement_ratio[{i}]', ratio, None, 3.0 <= ratio <= 6.0)

    # ---------- kernel ----------

    def _run_kernel(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        solver = self.solver(p)
        grid = solver.grid
        s = float(p.get('s', 0.0))
        t = float(p.get('t', c.T))
        P = solver.propagator(s, t)
        nodes = p.get('nodes', [[0.0] * c.d, [grid.R / 4] + [0.0] * (c.d - 1)])

        table = {f"x{i + 1}": grid.points[:, i] for i in range(c.d)}
        rows = []
        for point in nodes:
            row = P.kernel_row(grid.index_of(point))
            mean, var = row.moments()
            rows.append({'x': list(map(float, grid.points[row.index])), 'total': row.total,
                         'defect': row.defect, 'mean': mean.tolist(), 'var': var.tolist()})
            table[f"p[{point}]"] = row.weights
            result.add(f'row_substochastic[{point}]', row.total, 1 + 1e-12, row.total <= 1 + 1e-12)
        result.values['rows'] = rows
        result.frames['kernel_rows'] = pd.DataFrame(table)

        R_ind = float(p.get('R_ind', grid.R / 4))
        report = indicator_lower_bound(P, R_ind)
        result.checks.append(report.to_check())
        result.values['indicator'] = report.details
        result.add('indicator_inf_core', report.details['inf_core'], 0.0,
                   report.details['inf_core'] > 0)

        bump = smooth_indicator(grid.radius, 0.0, float(p.get('bump_radius', grid.R / 8)))
        delta = strict_positivity(P, bump)
        result.values['strict_positivity'] = delta
        result.add('strict_positivity', delta, 0.0, delta > 0)

    # ---------- tightness ----------

    def _run_tightness(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        solver = self.solver(p)
        num = self.numerics(p)
        s = float(p.get('s', 0.0))
        t = float(p.get('t', c.T))
        eps = float(p.get('eps', 0.01))
        ladder = p.get('R_ladder', [4.0, 8.0])

        profile = tightness_radius(solver.propagator(s, t), eps)
        result.values['profile'] = profile.to_dict()
        frame = {f"x{i + 1}": profile.base_points[:, i] for i in range(c.d)}
        frame['rho'] = profile.profile
        result.frames['tightness_profile'] = pd.DataFrame(frame)

        dichotomy = tightness_dichotomy(c, s, t, num.dt, num.h, eps, ladder, num.theta)
        result.values['tightness'] = dichotomy
        if 'verdict' in spec.expect:
            self._expect(result, 'tightness_verdict', dichotomy['verdict'], spec.expect['verdict'])

        compact = compactness_dichotomy(c, s, t, num.dt, num.h, ladder, num.theta)
        result.values['compactness'] = compact
        if 'compactness' in spec.expect:
            self._expect(result, 'compactness_verdict', compact['verdict'],
                         spec.expect['compactness'])

        if 'monotone_times' in p:
            times = [float(v) for v in p['monotone_times']]
            report = tightness_monotone_check(solver, s, times[0], times[1:], eps)
            result.values['monotone'] = report.details
            result.checks.append(report.to_check())

        if 'lebesgue' in p:
            q = p['lebesgue']
            probe = lebesgue_lp_probe(c, s, t, num.dt, num.h,
                                      _parse_param(q.get('phi', '1'), 'lebesgue/phi'),
                                      float(q.get('p', 2.0)), q.get('R_ladder', [2.0, 4.0, 8.0]))
            result.values['lebesgue'] = probe
            if 'lebesgue_grows' in spec.expect:
                grows = probe['growth'][-1] > 1.05
                self._expect(result, 'lebesgue_grows', grows, spec.expect['lebesgue_grows'])

    # ---------- measures ----------

    def _run_measures(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        T = c.T
        phase_count = int(p.get('phase_count', 8))
        solver, F = self.family(p, phase_count)
        grid = solver.grid

        product = float(np.prod(F.normalizations))
        rel = abs(product - F.lambda1) / F.lambda1
        result.add('normalization_product', rel, 1e-8, rel <= 1e-8,
                   f"Π={product:.12g}, λ1={F.lambda1:.12g}")
        worst_tv = max(F.spot_checks.values(), default=0.0)
        result.add('phase_spot_checks', worst_tv, 1e-6, not F.mismatch)
        result.values['lambda1'] = F.lambda1
        result.values['spot_checks'] = {str(k): v for k, v in F.spot_checks.items()}

        battery = [TestFunction(expr=e).on_grid(grid) for _, e in self.battery(p)]
        for offset in p.get('offsets', [T / 4, T / 2, T, 2 * T]):
            report = invariance_residual(F, solver.propagator(0.0, float(offset)), battery)
            result.values[f'invariance[{offset:g}]'] = report.details
            check = report.to_check()
            check.name = f'invariance[{offset:g}]'
            result.checks.append(check)

        p_list = [float(v) for v in p.get('lp_exponents', [1, 2, 4])]
        contraction = lp_contraction(F, solver.propagator(0.0, T), battery, p_list)
        result.values['lp_contraction'] = {r.name: r.residual for r in contraction}
        result.checks.extend(r.to_check() for r in contraction)

        probe = uniqueness_probe(F, solver, int(p.get('n_starts', 5)), seed=self.seed)
        result.values['uniqueness'] = probe
        result.add('uniqueness', probe['max_tv'], 1e-8, probe['max_tv'] <= 1e-8)

        L = self.cfg.lyapunov
        if L is not None and L.a is not None and L.cc is not None and not L.tail:
            bound = lyapunov_mean_bound(F, L, solver, 0.0, T)
            result.values['lyapunov_bounds'] = bound
            result.add('measure_W_bound', max(bound['means']), bound['bound'], bound['mean_ok'])
            result.add('pointwise_W_bound', bound['pointwise_excess'], 1e-6, bound['pointwise_ok'])

        if 'fokker_planck' in p:
            q = p['fokker_planck']
            counts = q.get('phase_counts', [8, 16])
            residuals = []
            for m in counts:
                fp_solver, fp_family = self.family(q, int(m))
                residuals.append(fokker_planck_residual(fp_family, fp_solver)['max'])
            result.values['fokker_planck'] = dict(zip(map(str, counts), residuals))
            decreasing = all(b < a for a, b in zip(residuals, residuals[1:]))
            result.add('fokker_planck_decreasing', residuals[-1], residuals[0], decreasing,
                       f"residuos={residuals}")

        if self.cfg.ou is not None:
            c0, v0 = ou_exact_measure(self.cfg.ou, 0.0)
            w = F.weights_at(0.0)
            x = grid.points[:, 0]
            mean = float(w @ x)
            var = float(w @ (x - mean) ** 2)
            tol = float(p.get('ou_tolerance', 5e-3))
            result.add('ou_measure_mean', abs(mean - c0), tol, abs(mean - c0) <= tol,
                       f"media={mean:.6g}, exacta={c0:.6g}")
            result.add('ou_measure_variance', abs(var - v0), tol, abs(var - v0) <= tol,
                       f"varianza={var:.6g}, exacta={v0:.6g}")

        result.frames['measures'] = family_to_frame(F)

    # ---------- spectrum ----------

    def _run_spectrum(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        T = c.T
        solver = self.solver(p)
        grid = solver.grid
        s = float(p.get('s', 0.0))
        V = assemble_period_map(solver, s)
        S = floquet_data(V, T, s=s, method=p.get('method', 'auto'), seed=self.seed)
        result.values['floquet'] = S.to_dict()
        result.frames['eigenvectors'] = pd.DataFrame({
            **{f"x{i + 1}": grid.points[solver.interior, i] for i in range(c.d)},
            'psi': S.psi, 'w': S.w})

        result.add('lambda1_range', S.lambda1, 1.0, 0 < S.lambda1 <= 1.0 + 1e-12)
        result.add('gap_ratio', S.gap_ratio, 1.0, S.gap_ratio < 1.0)
        result.add('nondegenerate', None, None, not S.degenerate)
        for side in ('right', 'left'):
            result.add(f'eigen_residual_{side}', S.residuals[side], 1e-8,
                       S.residuals[side] <= 1e-8)
        core_local = grid.core_mask()[solver.interior]
        min_core = float(np.min(S.psi[core_local]))
        result.add('psi_positive_core', min_core, 0.0, min_core > 0)
        if S.degenerate:
            return

        if p.get('cross_method', True) and S.method == 'dense':
            other = floquet_data(V, T, s=s, method='power', seed=self.seed)
            for label, a, b in (('lambda1', S.lambda1, other.lambda1),
                                ('lambda2_abs', S.lambda2_abs, other.lambda2_abs)):
                diff = abs(a - b) / max(abs(a), 1e-300)
                result.add(f'dense_vs_power[{label}]', diff, 1e-8, diff <= 1e-8)

        phases = [float(v) for v in p.get('phases', [s, T / 2])]
        result.checks.append(phase_independence(solver, phases).to_check())

        pr = projections(S)
        if isinstance(V, np.ndarray):
            for name, value in pr.identity_residuals(V).items():
                result.add(f'projection[{name}]', value, 1e-8, value <= 1e-8)
        q_psi = float(np.max(np.abs(pr.Q(S.psi))) / np.max(np.abs(S.psi)))
        result.add('Q_psi', q_psi, 1e-10, q_psi <= 1e-10)

        battery = [TestFunction(expr=e).on_grid(grid) for _, e in self.battery(p)]
        t_int = s + float(p.get('intertwining_offset', T / 2))
        S_t = floquet_data(assemble_period_map(solver, t_int), T, s=t_int, seed=self.seed)
        result.checks.append(intertwining_residual(solver, S, S_t, s, t_int, battery).to_check())

        phase_count = int(p.get('phase_count', 8))
        _, F = self.family(p, phase_count)
        w_norm = S.w / S.w.sum()
        tv = total_variation(w_norm, F.weights_at(s)[solver.interior])
        result.add('left_vector_vs_measure', tv, 1e-8, tv <= 1e-8)

        if p.get('truncation', True):
            num = self.numerics(p)
            report = truncation_stability(c, s, num.dt, num.h, num.R, num.theta)
            result.values['truncation'] = report.details
            result.values['truncation_flagged'] = not report.passed
            if 'truncation_stable' in spec.expect:
                self._expect(result, 'truncation_stable', report.passed,
                             spec.expect['truncation_stable'])

        if 'lp_probe' in p:
            q = p['lp_probe']
            offset = float(q.get('t_offset', T))
            probes = []
            for power in q.get('p', [2.0]):
                probe = lp_compactness_probe(solver.propagator(s, s + offset),
                                             F.weights_at(s), F.weights_at(s + offset),
                                             float(power))
                probes.append({k: v for k, v in probe.items() if k != 'sigma_ratios'})
                if 'lp_compact' in spec.expect:
                    self._expect(result, f'lp_compact[p={power}]', probe['compact_signature'],
                                 spec.expect['lp_compact'])
            result.values['lp_probe'] = probes

    # ---------- decay ----------

    def _run_decay(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        solver = self.solver(p)
        grid = solver.grid
        s = float(p.get('s', 0.0))
        phi_src = p.get('phi', 'sin(x1)')
        phi = TestFunction(expr=_parse_param(phi_src, 'decay/phi')).on_grid(grid, s)
        S = floquet_data(assemble_period_map(solver, s), c.T, s=s, seed=self.seed)
        report = decay_fit(solver, S, phi, int(p.get('k_max', 30)),
                           [float(v) for v in p.get('p_list', [2.0, 4.0])],
                           phi_name=phi_src)
        result.values['decay'] = report.to_dict()
        frame = {'k': report.ks, 'time': report.ks * c.T}
        frame.update(report.curves)
        result.frames['decay_curves'] = pd.DataFrame(frame)
        result.values['omega0'] = report.omega0

        omega0 = report.omega0
        for tag, fit in report.fits.items():
            result.add(f'fit_reliable[{tag}]', fit.r_squared, 0.99, fit.reliable,
                       f"estado={fit.status}, rango={fit.k_range}")
            floor = omega0 - RATE_TOLERANCE * abs(omega0)
            result.add(f'rate_not_below_omega0[{tag}]', fit.rate, floor,
                       fit.rate is not None and fit.rate >= floor)
        sup = report.fits['sup'].rate
        result.add('sup_rate_vs_omega0', sup, omega0, _within(sup, omega0, RATE_TOLERANCE))
        for a, b in combinations(report.fits.values(), 2):
            result.add(f'p_independence[{a.tag},{b.tag}]', a.rate, b.rate,
                       _within(a.rate, b.rate, RATE_TOLERANCE))

        ones = np.ones(grid.size)
        constant = decay_fit(solver, S, ones, int(p.get('k_constant', 5)), [], phi_name='1')
        worst = float(np.max(constant.curves['sup']))
        result.add('constant_datum', worst, 1e-8, worst <= 1e-8)

    # ---------- mc ----------

    def _run_mc(self, spec: ExperimentSpec, result: ExperimentResult) -> None:
        p = spec.params
        c = self.cfg.field
        solver = self.solver(p)
        grid = solver.grid
        s = float(p.get('s', 0.0))
        t = float(p.get('t', c.T))
        x = [float(v) for v in p.get('x', [0.0] * c.d)]
        n = int(p.get('n', ACCEPTANCE_PATHS))
        em_dt = float(p.get('em_dt', ACCEPTANCE_EM_DT))
        seed = int(p.get('seed', self.seed))
        slack = float(p.get('mc_slack', 2e-3))
        pde_tolerance = float(p.get('pde_tolerance', 5e-3))
        battery = self.battery(p)

        sim = simulate(c, s, t, x, n, em_dt, seed, parallel=self.parallel)
        # El primer bloque se regenera con la misma clave (seed, 0)
        again = simulate(c, s, t, x, min(n, 2 * BLOCK_PAIRS), em_dt, seed)
        result.add('deterministic', None, None,
                   np.array_equal(sim.endpoints[:len(again.endpoints)], again.endpoints))
        result.add('explosions', sim.exploded, 1e-4 * n, not sim.flagged)

        idx = grid.index_of(x)
        estimates = {}
        for name, e in battery:
            est = sim.estimate(e)
            pde = float(solver.propagate(TestFunction(expr=e).on_grid(grid, s), s, t)[idx])
            err = abs(est.mean - pde)
            tol = 3 * est.stderr + slack + pde_tolerance
            estimates[name] = dict(est.to_dict(), pde=pde)
            result.add(f'mc_vs_pde[{name}]', err, tol, err <= tol)
        result.values['estimates'] = estimates

        row = empirical_kernel(sim, grid)
        result.frames['endpoint_histogram'] = pd.DataFrame({
            **{f"x{i + 1}": grid.points[:, i] for i in range(c.d)}, 'weight': row.weights})

        if 'tail' in p:
            eps = float(p['tail'].get('eps', 0.01))
            P = solver.propagator(s, t)
            rho = tightness_radius(P, eps).rho
            mc_tail, tail_err = tail_mass(sim, rho)
            pde_tail = 1.0 - P.kernel_row(idx).mass_in_ball(rho)
            result.values['tail'] = {'rho': rho, 'mc': mc_tail, 'pde': pde_tail, 'stderr': tail_err}
            result.add('mc_tail_mass', mc_tail, eps + 3 * tail_err, mc_tail <= eps + 3 * tail_err)
            gap = abs(mc_tail - pde_tail)
            result.add('mc_tail_vs_pde', gap, 3 * tail_err + grid.h, gap <= 3 * tail_err + grid.h)

        if self.cfg.ou is not None and c.d == 1:
            self._mc_ou(p, solver, sim, s, t, x[0], n, em_dt, seed, battery, slack, result)

    def _mc_ou(self, p: dict, solver: EvolutionSolver, sim, s: float, t: float, x0: float,
               n: int, em_dt: float, seed: int, battery, slack: float,
               result: ExperimentResult) -> None:
        ou = self.cfg.ou
        checks = ou_triple_agreement(self.cfg.field, solver, ou, s, t,
                                     [e for _, e in battery], [name for name, _ in battery],
                                     x0=x0, n=n, em_dt=em_dt, seed=seed,
                                     core_radius=float(p.get('ou_core_radius', 2.0)),
                                     mc_slack=slack)
        result.checks.extend(checks)

        mean, var = ou_exact_moments(ou, s, t, x0)
        m_hat, v_hat = endpoint_moments(sim)
        m_err = abs(float(m_hat[0]) - mean)
        v_err = abs(float(v_hat[0]) - var)
        m_tol = 3 * np.sqrt(var / n) + slack
        v_tol = 3 * var * np.sqrt(2.0 / max(n - 1, 1)) + slack
        result.add('histogram_mean', m_err, m_tol, m_err <= m_tol)
        result.add('histogram_variance', v_err, v_tol, v_err <= v_tol)

        if 'weak_order' in p:
            q = p['weak_order']
            phi = _parse_param(q.get('phi', 'x1'), 'weak_order/phi')
            exact = float(ou_expectation(ou, s, t, x0, phi))
            study = weak_order_study(self.cfg.field, s, t, [x0], phi, exact,
                                     int(q.get('n', 2000)),
                                     q.get('em_dts', [0.04, 0.02, 0.01, 0.005]), seed)
            result.values['weak_order'] = study
            result.add('weak_order_slope', study['slope'], None, study['passed'],
                       f"errores={study['errors']}")
