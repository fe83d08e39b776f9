"""
Tests de evaluación y derivación simbólica.
"""
import math

import numpy as np
import pytest

from core.errors import ExpressionEvaluationError
from core.experiments import fd_agreement
from core.expression_parser import Num, parse_expr
from core.symbolic import differentiate, evaluate, gradient, hessian, is_zero


def _d(source, var, **env):
    return evaluate(differentiate(parse_expr(source), var), env)


class TestDifferentiate:

    def test_square(self):
        assert _d("x1^2", "x1", x1=2.0) == pytest.approx(4.0)

    def test_time_derivative(self):
        assert _d("sin(2*pi*t)", "t", t=0.0) == pytest.approx(2 * math.pi)

    def test_log(self):
        assert _d("log(x1)", "x1", x1=2.0) == pytest.approx(0.5)

    def test_abs_at_zero_is_zero(self):
        assert _d("abs(x1)", "x1", x1=0.0) == 0.0
        assert _d("abs(x1)", "x1", x1=-3.0) == -1.0

    def test_quotient(self):
        assert _d("1/(1+x1^2)", "x1", x1=1.0) == pytest.approx(-0.5)

    def test_variable_exponent(self):
        # d/dx x^x = x^x (log x + 1)
        assert _d("x1^x1", "x1", x1=2.0) == pytest.approx(4.0 * (math.log(2.0) + 1.0))

    def test_constant_simplifies_to_zero(self):
        assert is_zero(differentiate(parse_expr("cos(2*pi*t)"), "x1"))
        assert differentiate(parse_expr("x2"), "x1") == Num(0.0)

    def test_rejects_unknown_variable(self):
        with pytest.raises(ValueError):
            differentiate(parse_expr("x1"), "y")

    def test_gradient_and_hessian(self):
        e = parse_expr("x1^2*x2 + sin(x2)")
        env = {'x1': 1.0, 'x2': 0.0}
        gx, gy = (evaluate(g, env) for g in gradient(e, 2))
        assert (gx, gy) == (pytest.approx(0.0), pytest.approx(2.0))
        H = [[evaluate(h, env) for h in row] for row in hessian(e, 2)]
        np.testing.assert_allclose(H, [[0.0, 2.0], [2.0, 0.0]], atol=1e-14)

    @pytest.mark.parametrize("source", [
        "-x1^3*(1+0.5*sin(2*pi*t))",
        "log(1+x1^2)*tanh(t)",
        "sqrt(1+x1^2)*exp(-t*x1)",
    ])
    def test_agrees_with_finite_differences(self, source):
        rng = np.random.default_rng(3)
        X = rng.uniform(-2, 2, size=(200, 1))
        times = rng.uniform(0, 1, size=200)
        assert fd_agreement(parse_expr(source), 1, X, times) <= 1e-6


class TestEvaluate:

    def test_scalar_result_is_float(self):
        assert isinstance(evaluate(parse_expr("1+2"), {}), float)

    def test_log_of_non_positive_reports_location(self):
        with pytest.raises(ExpressionEvaluationError) as info:
            evaluate(parse_expr("log(x1)"), {'x1': np.array([1.0, -2.0]), 't': 0.0})
        assert info.value.location['x1'] == -2.0

    def test_overflow_is_evaluation_error(self):
        with pytest.raises(ExpressionEvaluationError):
            evaluate(parse_expr("exp(x1)"), {'x1': 1e4})

    def test_division_by_zero(self):
        with pytest.raises(ExpressionEvaluationError):
            evaluate(parse_expr("1/x1"), {'x1': 0.0})
