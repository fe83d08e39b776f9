"""
Tests de las fórmulas cerradas del Ornstein-Uhlenbeck periódico.
"""
import math

import numpy as np
import pytest

from core.errors import QuadratureError, TimeGridError
from core.expression_parser import parse_expr
from core.ou_exact import (
    ou_exact_measure, ou_exact_moments, ou_expectation, ou_measure_consistency
)
from models.lab_models import OUParams


class TestMoments:

    def test_reference_values(self, ou_params):
        mean, var = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        assert mean == pytest.approx(0.015617, abs=1e-6)
        assert var == pytest.approx(1.0 - math.exp(-2.0), abs=1e-9)

    def test_mean_is_affine_in_start(self, ou_params):
        m0, _ = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        m2, _ = ou_exact_moments(ou_params, 0.0, 1.0, 2.0)
        assert m2 - m0 == pytest.approx(2.0 * math.exp(-1.0), rel=1e-10)

    def test_equal_times(self, ou_params):
        assert ou_exact_moments(ou_params, 0.3, 0.3, 1.5) == (1.5, 0.0)

    def test_reversed_times(self, ou_params):
        with pytest.raises(TimeGridError):
            ou_exact_moments(ou_params, 1.0, 0.5, 0.0)


class TestMeasure:

    def test_phase_zero(self, ou_params):
        mean, var = ou_exact_measure(ou_params, 0.0)
        assert mean == pytest.approx(1.0 / (1.0 + 4.0 * math.pi ** 2), abs=1e-9)
        assert var == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("s,t", [(0.0, 0.5), (0.25, 1.75)])
    def test_consistency(self, ou_params, s, t):
        mean_res, var_res = ou_measure_consistency(ou_params, s, t)
        assert mean_res <= 1e-9
        assert var_res <= 1e-9

    def test_time_dependent_rate(self):
        p = OUParams(a=parse_expr("-1+0.5*cos(2*pi*t)"), f=parse_expr("sin(2*pi*t)"),
                     q=parse_expr("1+0.25*sin(2*pi*t)"), period=1.0)
        mean_res, var_res = ou_measure_consistency(p, 0.1, 0.6)
        assert mean_res <= 1e-8
        assert var_res <= 1e-8

    def test_unstable_rate_has_no_measure(self):
        p = OUParams(a=parse_expr("1"), f=parse_expr("0"), q=parse_expr("1"))
        with pytest.raises(QuadratureError):
            ou_exact_measure(p, 0.0)


class TestExpectation:

    def test_linear_function(self, ou_params):
        xs = np.array([-1.0, 0.0, 2.0])
        values = ou_expectation(ou_params, 0.0, 1.0, xs, parse_expr("x1"))
        m0, _ = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        np.testing.assert_allclose(values, math.exp(-1.0) * xs + m0, atol=1e-10)

    def test_second_moment(self, ou_params):
        mean, var = ou_exact_moments(ou_params, 0.0, 1.0, 1.0)
        value = ou_expectation(ou_params, 0.0, 1.0, 1.0, parse_expr("x1^2"))
        assert isinstance(value, float)
        assert value == pytest.approx(mean ** 2 + var, rel=1e-10)

    def test_callable_and_equal_times(self, ou_params):
        value = ou_expectation(ou_params, 0.5, 0.5, 3.0, np.cos)
        assert value == pytest.approx(math.cos(3.0))
