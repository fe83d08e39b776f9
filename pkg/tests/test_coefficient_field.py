"""
Tests de construcción y validación de campos y del operador A(t).
"""
import numpy as np
import pytest

from core.coefficient_field import (
    apply_operator, build_field, diffusion_at, drift_at, validate_field
)
from core.errors import ConfigError, ExpressionSyntaxError
from core.expression_parser import parse_expr


class TestBuildField:

    def test_ou_field(self, ou_field):
        assert ou_field.d == 1
        assert ou_field.T == 1.0
        assert ou_field.eta0 == 0.0

    def test_rejects_dimension_three(self):
        with pytest.raises(ConfigError):
            build_field(3, 1.0, [["1"] * 3] * 3, ["0"] * 3)

    def test_rejects_non_positive_period(self):
        with pytest.raises(ConfigError):
            build_field(1, 0.0, [["1"]], ["0"])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ConfigError):
            build_field(2, 1.0, [["1", "0"], ["0", "1"]], ["-x1"])

    def test_rejects_off_diagonal_diffusion(self):
        with pytest.raises(ConfigError):
            build_field(2, 1.0, [["1", "0.1"], ["0.1", "1"]], ["-x1", "-x2"])

    def test_syntax_error_propagates(self):
        with pytest.raises(ExpressionSyntaxError):
            build_field(1, 1.0, [["1"]], ["-x1+"])

    def test_vectorized_coefficients(self):
        c = build_field(2, 1.0, [["1+x1^2", "0"], ["0", "2"]], ["-x1", "-x2*t"])
        X = np.array([[1.0, 2.0], [0.0, -1.0]])
        Q = diffusion_at(c, 0.5, X)
        assert Q.shape == (2, 2, 2)
        np.testing.assert_allclose(Q[:, 0, 0], [2.0, 1.0])
        np.testing.assert_allclose(drift_at(c, 0.5, X), [[-1.0, -1.0], [0.0, 0.5]])


class TestValidateField:

    def test_ou_accepted(self, ou_field):
        report = validate_field(ou_field, 4.0)
        assert report.accepted
        assert report.eta0 == pytest.approx(1.0)
        assert report.max_periodicity_violation <= 1e-12
        assert report.field.eta0 == pytest.approx(1.0)
        assert report.samples == 64 * 41

    def test_cubic_accepted(self, cubic_field):
        assert validate_field(cubic_field, 4.0).accepted

    def test_non_periodic_drift_rejected(self):
        c = build_field(1, 1.0, [["1"]], ["-x1+t"])
        report = validate_field(c, 4.0)
        assert not report.accepted
        assert report.max_periodicity_violation > 1e-12
        assert 't' in report.witness

    def test_degenerate_diffusion_rejected(self):
        c = build_field(1, 1.0, [["x1^2"]], ["-x1"])
        report = validate_field(c, 4.0)
        assert not report.accepted
        assert report.eta0 == 0.0
        assert report.witness['x1'] == pytest.approx(0.0)

    def test_evaluation_error_is_recorded(self):
        c = build_field(1, 1.0, [["1+log(x1)"]], ["-x1"])
        report = validate_field(c, 4.0)
        assert not report.accepted
        assert report.errors

    def test_rejects_bad_sample_radius(self, ou_field):
        with pytest.raises(ConfigError):
            validate_field(ou_field, 0.0)


class TestApplyOperator:

    def test_ou_on_square(self, ou_field):
        assert apply_operator(ou_field, parse_expr("x1^2"), 0.0, 3.0) == pytest.approx(-10.0)

    def test_cubic_on_log(self, cubic_field):
        value = apply_operator(cubic_field, parse_expr("log(x1)"), 0.0, 4.0)
        assert value == pytest.approx(-16.0625)

    def test_many_points(self, ou_field):
        values = apply_operator(ou_field, parse_expr("x1"), 0.0, np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(values, [1.0, 0.0])

    def test_two_dimensional(self):
        c = build_field(2, 1.0, [["1", "0"], ["0", "1"]], ["-x1", "-x2"])
        f = parse_expr("x1^2+x2^2")
        assert apply_operator(c, f, 0.0, np.array([1.0, 1.0])) == pytest.approx(0.0)
