"""
Tests de los chequeos muestreados de Lyapunov, la ecuación de comparación y
las desigualdades sobre la malla.
"""
import math

import numpy as np
import pytest

from core.errors import ConfigError
from core.expression_parser import parse_expr
from core.lyapunov import (
    SampleSpec, check_dissipativity, check_drift_bound, check_log_drift,
    check_superlinear, lyapunov_on_grid, operator_on_grid, scan_drift_lambda,
    solve_comparison, supersolution_check, uniform_bound_check
)
from models.lab_models import Grid, LyapunovData

SAMPLING = SampleSpec(R_domain=8.0, n_times=32, n_radial=32)
LOG_W = LyapunovData(W=parse_expr("log(x1^2)/2"), tail=True, R0=2.0, c=1.0, gamma=2.0)


class TestDriftBound:

    def test_ou_scan_finds_three(self, ou_field):
        lam, report = scan_drift_lambda(ou_field, LyapunovData(W=parse_expr("1+x1^2")), SAMPLING)
        assert lam == 3.0
        assert report.accepted
        assert report.extras['lambda'] == 3.0

    def test_cubic_square_never_accepted(self, cubic_field):
        lam, report = scan_drift_lambda(cubic_field, LyapunovData(W=parse_expr("x1^2")), SAMPLING)
        assert lam is None
        assert not report.accepted
        assert report.witness['x1'] == 0.0

    def test_rejected_lambda_reports_witness(self, ou_field):
        L = LyapunovData(W=parse_expr("1+x1^2"), lam=2.0)
        report = check_drift_bound(ou_field, L, SAMPLING)
        assert not report.accepted
        assert report.sup_margin > 0
        assert set(report.witness) == {'t', 'x1'}

    def test_requires_lambda(self, ou_field):
        with pytest.raises(ConfigError):
            check_drift_bound(ou_field, LyapunovData(W=parse_expr("x1^2")), SAMPLING)


class TestDissipativity:

    def test_ou_accepted(self, ou_field):
        L = LyapunovData(W=parse_expr("x1^2"), a=3.0, cc=1.0)
        report = check_dissipativity(ou_field, L, SAMPLING)
        assert report.accepted
        assert report.extras['measure_bound'] == pytest.approx(3.0)

    def test_zero_offset_rejected(self, ou_field):
        L = LyapunovData(W=parse_expr("x1^2"), a=0.0, cc=1.0)
        assert not check_dissipativity(ou_field, L, SAMPLING).accepted

    def test_requires_constants(self, ou_field):
        with pytest.raises(ConfigError):
            check_dissipativity(ou_field, LyapunovData(W=parse_expr("x1^2"), a=1.0), SAMPLING)


class TestSuperlinear:

    def test_cubic_accepted(self, cubic_field):
        report = check_superlinear(cubic_field, LOG_W, SAMPLING)
        assert report.accepted
        assert report.sup_margin <= 0.0

    def test_ou_rejected(self, ou_field):
        assert not check_superlinear(ou_field, LOG_W, SAMPLING).accepted

    def test_non_integrable_rate(self, cubic_field):
        L = LyapunovData(W=parse_expr("x1^2"), R0=2.0, gamma=1.0)
        report = check_superlinear(cubic_field, L, SAMPLING)
        assert report.accepted is False
        assert math.isnan(report.sup_margin)
        assert report.samples == 0

    def test_requires_radius(self, cubic_field):
        with pytest.raises(ConfigError):
            check_superlinear(cubic_field, LyapunovData(W=parse_expr("x1^2")), SAMPLING)

    def test_log_drift(self, cubic_field, ou_field):
        assert check_log_drift(cubic_field, 1.0, 2.0, 2.0, SAMPLING).accepted
        assert not check_log_drift(ou_field, 1.0, 2.0, 2.0, SAMPLING).accepted

    @pytest.mark.parametrize("c_rate,gamma,R0", [(1.0, 1.0, 2.0), (1.0, 2.0, 1.0), (0.0, 2.0, 2.0)])
    def test_log_drift_parameters(self, cubic_field, c_rate, gamma, R0):
        with pytest.raises(ConfigError):
            check_log_drift(cubic_field, c_rate, gamma, R0, SAMPLING)

    def test_evaluation_error_is_reported(self, cubic_field):
        L = LyapunovData(W=parse_expr("log(x1)"), lam=1.0)
        report = check_drift_bound(cubic_field, L, SAMPLING)
        assert report.accepted is None
        assert report.error


class TestComparison:

    def test_closed_form(self):
        sol = solve_comparison(100.0, 1.0, 2.0, 0.5, 1e-3)
        assert sol.at(0.5) == pytest.approx(1.960784, abs=1e-6)
        assert sol.max_relative_error <= 1e-6
        assert sol.bound(0.5) == pytest.approx(2.0)

    @pytest.mark.parametrize("zeta0", [10.0, 1e6])
    def test_bound_independent_of_start(self, zeta0):
        sol = solve_comparison(zeta0, 1.0, 2.0, 0.5, 1e-3)
        assert sol.at(0.5) <= sol.bound(0.5) + 1e-12

    def test_linear_rate(self):
        sol = solve_comparison(2.0, 1.0, 1.0, 1.0, 0.01)
        assert sol.at(1.0) == pytest.approx(2.0 * math.exp(-1.0), rel=1e-8)
        assert sol.bound(1.0) == math.inf

    def test_rejects_non_positive_start(self):
        with pytest.raises(ConfigError):
            solve_comparison(0.0, 1.0, 2.0, 1.0, 0.01)


class TestOnGrid:

    def test_tail_function_is_flattened_inside(self):
        grid = Grid(1, 4.0, 0.1)
        values = lyapunov_on_grid(LOG_W, grid)
        inner = grid.radius <= 1.0
        np.testing.assert_allclose(values[inner], math.log(2.0))
        outer = grid.radius >= 2.0
        np.testing.assert_allclose(values[outer], np.log(grid.radius[outer]))

    def test_boundary_rows_use_analytic_operator(self, ou_solver):
        L = LyapunovData(W=parse_expr("x1^2"))
        values = operator_on_grid(ou_solver, L, 0.0)
        x = ou_solver.grid.points[:, 0]
        np.testing.assert_allclose(values, 2.0 + 2.0 * x * (1.0 - x), atol=1e-9)

    def test_supersolution_inequality(self, cubic_solver):
        report = supersolution_check(cubic_solver, LOG_W, 0.0, 0.5, 1.0)
        assert report.supersolution_margin >= -report.tolerance
        assert report.nodes == len(cubic_solver.grid.core())
        assert report.correction_C >= 0.0

    def test_supersolution_order(self, cubic_solver):
        with pytest.raises(ConfigError):
            supersolution_check(cubic_solver, LOG_W, 0.5, 0.2, 1.0)

    def test_uniform_bound(self, cubic_solver):
        comparison = solve_comparison(100.0, 1.0, 2.0, 0.5, 0.005)
        report = uniform_bound_check(cubic_solver, LOG_W, 1.0, 0.5, comparison)
        assert report.passed
        assert report.details['C_delta'] == pytest.approx(2.0)
