"""
Tests de la simulación Euler-Maruyama con pares antitéticos.
"""
import math

import numpy as np
import pytest

from core.errors import ConfigError, TimeGridError
from core.expression_parser import parse_expr
from core.montecarlo import (
    BLOCK_PAIRS, empirical_kernel, endpoint_moments, ou_triple_agreement,
    simulate, tail_mass, weak_order_study
)
from core.ou_exact import ou_exact_moments
from models.lab_models import Grid


@pytest.fixture(scope="module")
def ou_sim(ou_field):
    return simulate(ou_field, 0.0, 1.0, [0.0], 20000, 0.01, seed=7)


class TestSimulate:

    def test_antithetic_linear_mean(self, ou_sim, ou_params):
        est = ou_sim.estimate(parse_expr("x1"))
        exact, _ = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        assert est.n == 20000
        assert est.stderr <= 1e-10
        assert est.mean == pytest.approx(exact, abs=1.5e-2)

    def test_second_moment(self, ou_sim, ou_params):
        est = ou_sim.estimate(parse_expr("x1^2"))
        mean, var = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        assert abs(est.mean - (mean ** 2 + var)) <= 4 * est.stderr + 1e-2

    def test_callable_test_function(self, ou_sim):
        est = ou_sim.estimate(lambda X: np.ones(len(X)))
        assert est.mean == 1.0
        assert not est.flagged

    def test_endpoint_moments(self, ou_sim, ou_params):
        mean, var = endpoint_moments(ou_sim)
        exact_mean, exact_var = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        assert mean[0] == pytest.approx(exact_mean, abs=1.5e-2)
        assert var[0] == pytest.approx(exact_var, abs=5e-2)

    def test_seed_reproducible(self, ou_field):
        a = simulate(ou_field, 0.0, 0.5, [1.0], 100, 0.05, seed=3)
        b = simulate(ou_field, 0.0, 0.5, [1.0], 100, 0.05, seed=3)
        c = simulate(ou_field, 0.0, 0.5, [1.0], 100, 0.05, seed=4)
        np.testing.assert_array_equal(a.endpoints, b.endpoints)
        assert not np.array_equal(a.endpoints, c.endpoints)

    def test_parallel_matches_serial(self, ou_field):
        n = 2 * BLOCK_PAIRS + 501
        serial = simulate(ou_field, 0.0, 1.0, [0.0], n, 0.1, seed=11)
        parallel = simulate(ou_field, 0.0, 1.0, [0.0], n, 0.1, seed=11, parallel=True)
        np.testing.assert_array_equal(serial.endpoints, parallel.endpoints)

    def test_antithetic_pairs_mirror_noise(self):
        from core.coefficient_field import build_field
        c = build_field(1, 1.0, [["1"]], ["0"])
        sim = simulate(c, 0.0, 1.0, [0.0], 10, 0.25, seed=0)
        np.testing.assert_allclose(sim.endpoints[0::2], -sim.endpoints[1::2])

    def test_step_must_divide_interval(self, ou_field):
        with pytest.raises(TimeGridError):
            simulate(ou_field, 0.0, 1.0, [0.0], 10, 0.3, seed=0)

    def test_rejects_empty_run(self, ou_field):
        with pytest.raises(ConfigError):
            simulate(ou_field, 0.0, 1.0, [0.0], 0, 0.1, seed=0)

    def test_rejects_wrong_dimension(self, ou_field):
        with pytest.raises(ConfigError):
            simulate(ou_field, 0.0, 1.0, [0.0, 1.0], 10, 0.1, seed=0)

    def test_explosion_is_flagged(self):
        from core.coefficient_field import build_field
        c = build_field(1, 1.0, [["1"]], ["x1^3"])
        sim = simulate(c, 0.0, 1.0, [5.0], 20, 0.1, seed=0)
        assert sim.exploded == 20
        est = sim.estimate(parse_expr("x1"))
        assert est.flagged
        assert math.isnan(est.mean)


class TestEmpirical:

    def test_kernel_histogram(self, ou_sim):
        row = empirical_kernel(ou_sim, Grid(1, 6.0, 0.1))
        assert row.total + row.defect == pytest.approx(1.0)
        assert row.defect <= 1e-3
        assert row.index == Grid(1, 6.0, 0.1).index_of(0.0)

    def test_tail_mass(self, ou_sim):
        p, stderr = tail_mass(ou_sim, 0.0)
        assert p == 1.0
        p, stderr = tail_mass(ou_sim, 100.0)
        assert p == 0.0 and stderr == 0.0


class TestStudies:

    def test_triple_agreement(self, ou_field, ou_solver, ou_params):
        checks = ou_triple_agreement(
            ou_field, ou_solver, ou_params, 0.0, 1.0,
            [parse_expr("x1"), parse_expr("cos(x1)")], ["x", "cos"],
            n=4000, em_dt=0.01, pde_tolerance=2e-2, mc_slack=2e-2)
        assert [c.name for c in checks] == [
            'pde_vs_exact[x]', 'mc_vs_exact[x]', 'pde_vs_exact[cos]', 'mc_vs_exact[cos]']
        assert all(c.passed for c in checks)

    @pytest.mark.slow
    def test_weak_order_slope(self, ou_field, ou_params):
        exact, _ = ou_exact_moments(ou_params, 0.0, 1.0, 0.0)
        out = weak_order_study(ou_field, 0.0, 1.0, [0.0], parse_expr("x1"), exact,
                               n=200, seed=5)
        assert out['passed'], out
