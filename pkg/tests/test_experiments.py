"""
Tests del orquestador de experimentos sobre una configuración OU pequeña.
"""
import numpy as np
import pytest

from core.config_loader import parse_config
from core.experiments import ExperimentRunner, fd_agreement
from core.expression_parser import parse_expr
from models.config_models import ExperimentSpec


SMALL = {
    "name": "ou_chico",
    "field": {"d": 1, "T": 1, "Q": [["1"]], "b": ["-x1+cos(2*pi*t)"]},
    "numerics": {"R": 4, "h": 0.2, "dt": 0.05},
    "lyapunov": {"W": "x1^2", "a": 3, "cc": 1},
    "seed": 11,
    "experiments": [
        {"kind": "validate", "expect": {"accepted": True, "eta0": 1}},
        {
            "kind": "lyapunov",
            "params": {
                "sampling": {"n_times": 16, "n_radial": 32},
                "checks": [
                    {"check": "drift", "name": "drift_scan", "W": "1+x1^2", "scan": True,
                     "expect_lambda": 3},
                    {"check": "dissipativity", "name": "dissipativity", "expect": True},
                    {"check": "dissipativity", "name": "dissipativity_a0", "a": 0,
                     "expect": False},
                    {"check": "log_drift", "name": "log_drift", "c": 1, "gamma": 2, "R0": 2,
                     "expect": False},
                ],
                "comparison": {"zeta0": [100], "c": 1, "gamma": 2, "s": 0.5},
            },
        },
        {"kind": "solve", "params": {"s": 0, "t": 1}},
        {"kind": "kernel", "params": {"s": 0, "t": 1, "nodes": [[0], [1]], "R_ind": 1}},
    ],
}


@pytest.fixture(scope="module")
def runner():
    return ExperimentRunner(parse_config(SMALL))


def _checks(result):
    return {c.name: c for c in result.checks}


class TestRunner:

    def test_validate(self, runner):
        result = runner.run_experiment(runner.cfg.experiments[0])
        assert result.passed, result.checks
        assert {'field_accepted', 'eta0', 'periodicity', 'parse_round_trip',
                'symbolic_vs_fd'} <= set(_checks(result))

    def test_lyapunov_expectations(self, runner):
        result = runner.run_experiment(runner.cfg.experiments[1])
        checks = _checks(result)
        assert result.passed, result.checks
        assert result.values['drift_scan_lambda_star'] == 3.0
        assert checks['comparison_closed_form[100]'].passed
        assert checks['comparison_bound[100]'].value == pytest.approx(1.960784, abs=1e-6)

    def test_solve(self, runner):
        result = runner.run_experiment(runner.cfg.experiments[2])
        assert result.passed, result.checks
        assert {'contraction', 'positivity', 'kernel_row_sums', 'kernel_entries'} <= set(_checks(result))
        assert 'solution' in result.frames

    def test_kernel(self, runner):
        result = runner.run_experiment(runner.cfg.experiments[3])
        assert result.passed, result.checks
        assert len(result.values['rows']) == 2
        assert result.values['strict_positivity'] > 0

    def test_measures_report_lp_contraction(self, runner):
        spec = ExperimentSpec(kind="measures", name="medidas",
                              params={"phase_count": 4, "n_starts": 2})
        checks = _checks(runner.run_experiment(spec))
        for p in ("1", "2", "4"):
            assert checks[f"lp_contraction[{p}]"].passed

    def test_unknown_lyapunov_check(self, runner):
        spec = ExperimentSpec(kind="lyapunov", name="malo", params={"checks": [{"check": "otro"}]})
        result = runner.run_experiment(spec)
        assert not result.passed
        assert result.error_kind == 'config'

    def test_unknown_kind(self, runner):
        result = runner.run_experiment(ExperimentSpec(kind="plot", name="plot"))
        assert result.error_kind == 'config'
        assert 'desconocido' in result.error

    def test_bad_parameter_expression(self, runner):
        spec = ExperimentSpec(kind="solve", name="bateria", params={"battery": ["x1 +"]})
        result = runner.run_experiment(spec)
        assert result.error_kind == 'config'
        assert 'battery' in result.error

    def test_run_collects_provenance(self, runner):
        report = runner.run("validate")
        assert report.subcommand == "validate"
        assert [e.name for e in report.experiments] == ["validate"]
        assert report.provenance['seed'] == 11
        assert report.to_dict()['passed'] is report.passed

    def test_shared_solver(self, runner):
        assert runner.solver({}) is runner.solver({})


class TestRefinement:

    def test_numerics_refined(self):
        runner = ExperimentRunner(parse_config(SMALL), refine=1)
        num = runner.numerics({})
        assert num.h == pytest.approx(0.1)
        assert num.dt == pytest.approx(0.0125)

    def test_overrides_before_refinement(self):
        runner = ExperimentRunner(parse_config(SMALL), refine=1)
        assert runner.numerics({"R": 2}).R == 2.0

    def test_bad_override_is_config_error(self):
        runner = ExperimentRunner(parse_config(SMALL))
        result = runner.run_experiment(ExperimentSpec(kind="solve", name="h", params={"h": 0.3}))
        assert result.error_kind == 'config'


class TestFdAgreement:

    def test_smooth_expression(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-2, 2, size=(200, 1))
        times = rng.uniform(0, 1, size=200)
        assert fd_agreement(parse_expr("-x1^3*(1+0.5*sin(2*pi*t))"), 1, X, times) <= 1e-6
