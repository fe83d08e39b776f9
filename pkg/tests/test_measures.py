"""
Tests de tightness y de la familia periódica de medidas de evolución.
"""
import math

import numpy as np
import pytest

from core.errors import ConfigError, TimeGridError
from core.expression_parser import parse_expr
from core.measures import (
    family_to_frame, fokker_planck_residual, invariance_residual, lebesgue_lp_probe,
    lp_contraction, lp_norm, lyapunov_mean_bound, periodic_measures, tightness_dichotomy,
    tightness_monotone_check, tightness_radius, total_variation, uniqueness_probe
)
from core.ou_exact import ou_exact_measure
from models.lab_models import LyapunovData, weighted_lp_norm


@pytest.fixture(scope="module")
def ou_family(ou_solver):
    return periodic_measures(ou_solver, phase_count=4)


@pytest.fixture(scope="module")
def cubic_family(cubic_solver):
    return periodic_measures(cubic_solver, phase_count=4)


class TestTightness:

    def test_cubic_radius_is_resolvable(self, cubic_solver):
        profile = tightness_radius(cubic_solver.propagator(0.0, 1.0), 0.01)
        assert profile.resolvable
        assert 0.0 < profile.rho < cubic_solver.grid.R
        assert profile.rho == pytest.approx(float(np.max(profile.profile)))

    def test_eps_out_of_range(self, cubic_solver):
        with pytest.raises(ConfigError):
            tightness_radius(cubic_solver.propagator(0.0, 1.0), 1.5)

    def test_monotone_in_time(self, cubic_solver):
        report = tightness_monotone_check(cubic_solver, 0.0, 1.0, [2.0, 3.0], 0.01)
        assert report.passed
        assert set(report.details["rho_t"]) == {2.0, 3.0}

    def test_monotone_requires_later_start(self, cubic_solver):
        with pytest.raises(TimeGridError):
            tightness_monotone_check(cubic_solver, 0.5, 0.5, [1.0], 0.01)

    def test_dichotomy_cubic_tight(self, cubic_field):
        result = tightness_dichotomy(cubic_field, 0.0, 1.0, 0.01, 0.1, 0.01, (3.0, 6.0))
        assert result['verdict'] == 'TIGHT'

    def test_dichotomy_ou_not_tight(self, ou_field):
        result = tightness_dichotomy(ou_field, 0.0, 1.0, 0.01, 0.1, 0.01, (4.0, 8.0))
        assert result['verdict'] == 'NON-TIGHT'
        assert result['rho'][1] > result['rho'][0]


class TestPeriodicMeasures:

    def test_weights_are_probabilities(self, ou_family):
        assert ou_family.weights.shape == (4, ou_family.grid.size)
        np.testing.assert_allclose(ou_family.weights.sum(axis=1), 1.0, atol=1e-12)
        assert ou_family.weights.min() >= 0.0
        assert not ou_family.mismatch

    def test_ou_moments_at_phase_zero(self, ou_family):
        x = ou_family.grid.points[:, 0]
        mean = ou_family.mean(0.0, x)
        var = ou_family.mean(0.0, (x - mean) ** 2)
        assert mean == pytest.approx(1.0 / (1.0 + 4.0 * math.pi ** 2), abs=1e-2)
        assert var == pytest.approx(1.0, abs=5e-2)

    def test_ou_mean_tracks_phase(self, ou_family, ou_params):
        x = ou_family.grid.points[:, 0]
        exact, _ = ou_exact_measure(ou_params, 0.5)
        assert ou_family.mean(0.5, x) == pytest.approx(exact, abs=1e-2)

    def test_periodic_lookup(self, ou_family):
        np.testing.assert_array_equal(ou_family.weights_at(1.25), ou_family.weights_at(0.25))

    def test_off_grid_phase(self, ou_family):
        with pytest.raises(TimeGridError):
            ou_family.weights_at(0.1)

    def test_phase_count_must_divide_steps(self, ou_solver):
        with pytest.raises(TimeGridError):
            periodic_measures(ou_solver, phase_count=8)

    def test_normalization_product(self, ou_family):
        assert ou_family.normalization_product(0.5, 0.5) == 1.0
        product = ou_family.normalization_product(0.0, 1.0)
        assert product == pytest.approx(ou_family.lambda1, rel=1e-8)

    def test_invariance(self, ou_family, ou_solver):
        grid = ou_solver.grid
        battery = [np.ones(grid.size), np.exp(-grid.points[:, 0] ** 2), np.sin(grid.points[:, 0])]
        report = invariance_residual(ou_family, ou_solver.propagator(0.0, 0.5), battery)
        assert report.passed
        assert report.details['normalized'] <= 1e-9

    def test_lyapunov_mean_bound(self, ou_family, ou_solver):
        L = LyapunovData(W=parse_expr("x1^2"), a=3.0, cc=1.0)
        out = lyapunov_mean_bound(ou_family, L, ou_solver)
        assert out['mean_ok']
        assert out['pointwise_ok']
        assert out['bound'] == pytest.approx(3.0)

    @pytest.mark.parametrize("family_name,solver_name", [("ou_family", "ou_solver"),
                                                         ("cubic_family", "cubic_solver")])
    @pytest.mark.parametrize("t", [0.25, 1.0])
    def test_lp_contraction(self, request, family_name, solver_name, t):
        family = request.getfixturevalue(family_name)
        solver = request.getfixturevalue(solver_name)
        x = solver.grid.points[:, 0]
        battery = [np.ones_like(x), x, x ** 2, np.sin(x), np.exp(-x ** 2)]
        reports = lp_contraction(family, solver.propagator(0.0, t), battery)
        assert [r.name for r in reports] == ["lp_contraction[1]", "lp_contraction[2]",
                                             "lp_contraction[4]"]
        for report in reports:
            assert report.passed, (report.name, report.residual)

    def test_lp_norm(self, cubic_family):
        ones = np.ones(cubic_family.grid.size)
        assert lp_norm(cubic_family, 0.0, ones, 2.0) == pytest.approx(1.0)
        with pytest.raises(ConfigError):
            lp_norm(cubic_family, 0.0, ones, 0.5)

    def test_lp_norm_uses_shared_weighted_norm(self, cubic_family):
        x = cubic_family.grid.points[:, 0]
        mu = cubic_family.weights_at(0.0)
        for p in (1.0, 2.0, 4.0):
            direct = float(np.sum(mu * np.abs(np.sin(x)) ** p) ** (1.0 / p))
            assert weighted_lp_norm(mu, np.sin(x), p) == pytest.approx(direct, rel=1e-12)
            assert lp_norm(cubic_family, 0.0, np.sin(x), p) == pytest.approx(direct, rel=1e-12)

    def test_cubic_mean_near_origin(self, cubic_family):
        x = cubic_family.grid.points[:, 0]
        assert abs(cubic_family.mean(0.0, x)) <= 1e-8

    def test_uniqueness(self, cubic_family, cubic_solver):
        out = uniqueness_probe(cubic_family, cubic_solver, n_starts=3, seed=1)
        assert out['max_tv'] <= 1e-8
        assert len(out['iterations']) == 3

    def test_fokker_planck_residual_shape(self, cubic_family, cubic_solver):
        out = fokker_planck_residual(cubic_family, cubic_solver)
        assert len(out['residuals']) == 4
        assert np.isfinite(out['max'])

    def test_frame(self, cubic_family):
        frame = family_to_frame(cubic_family)
        assert list(frame.columns) == ['phase', 'x1', 'weight', 'density']
        assert len(frame) == 4 * cubic_family.grid.size
        total = frame.groupby('phase')['weight'].sum()
        np.testing.assert_allclose(total.to_numpy(), 1.0, atol=1e-12)


class TestHelpers:

    def test_total_variation(self):
        assert total_variation(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_lebesgue_norm_stable_for_ou(self, ou_field):
        out = lebesgue_lp_probe(ou_field, 0.0, 1.0, 0.01, 0.1, parse_expr("exp(-x1^2)"),
                                2.0, (4.0, 8.0))
        assert out['growth'][-1] == pytest.approx(1.0, abs=0.05)
