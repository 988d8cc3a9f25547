import numpy as np
from django.test import SimpleTestCase

from laboratorio.analytic import SemicircleFamily
from laboratorio.diagnostics import (
    PAIR_CHECKS, SINGLE_CHECKS, check_comparison, check_drift_perturbation, check_entropy_identity,
    check_linf_bound, check_lp_decay, check_variance_identity, check_w_contraction, convergence_report,
)
from laboratorio.errors import PreconditionError
from laboratorio.kernel import parse_kernel
from laboratorio.measure import Grid
from laboratorio.particles import SdeConfig, seed_cluster, simulate
from laboratorio.solvers import PdeSpec, solve_density

GRID = Grid.covering(-3.0, 3.0, 0.01)
TIMES = tuple(round(0.1 * k, 10) for k in range(1, 11))


def dyson_flow(radius=1.0, center=0.0, t_end=1.0, times=TIMES):
    m0 = SemicircleFamily(radius, center).on_grid(GRID)
    return solve_density(m0, PdeSpec('density', GRID, t_end, sample_times=times))


class SingleFlowChecksTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.flow = dyson_flow()

    def test_linf_bound(self):
        report = check_linf_bound(self.flow)
        self.assertTrue(report.passed)
        self.assertLess(report.values['C_fit'], 1.0)
        self.assertEqual(report.values['t'][0], 0.1)

    def test_linf_bound_with_tight_constant_fails(self):
        report = check_linf_bound(self.flow, C=0.01)
        self.assertFalse(report.passed)
        self.assertGreater(report.worst, 0.0)

    def test_lp_norms_do_not_grow(self):
        report = check_lp_decay(self.flow)
        self.assertTrue(report.passed, report.values)
        self.assertIn('p=inf', report.values)

    def test_entropy_identity(self):
        report = check_entropy_identity(self.flow)
        self.assertTrue(report.passed, report.values['residual'])
        self.assertTrue(report.values['E_nondecreasing'])

    def test_variance_slope(self):
        report = check_variance_identity(self.flow)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.values['slope'], 1.0, delta=0.02)

    def test_entropy_needs_three_samples(self):
        short = dyson_flow(t_end=0.2, times=())
        with self.assertRaises(PreconditionError):
            check_entropy_identity(short)

    def test_registries(self):
        self.assertEqual(set(SINGLE_CHECKS), {'linf', 'lp', 'entropy', 'variance'})
        self.assertEqual(set(PAIR_CHECKS), {'w2', 'comparison', 'drift_perturbation'})


class PairChecksTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        times = (0.25, 0.5)
        cls.centered = dyson_flow(t_end=0.5, times=times)
        cls.shifted = dyson_flow(center=0.5, t_end=0.5, times=times)
        cls.narrow = dyson_flow(radius=0.5, t_end=0.5, times=times)

    def test_w2_contraction(self):
        report = check_w_contraction(self.centered, self.narrow)
        self.assertTrue(report.passed, report.values)
        self.assertEqual(report.name, 'w_contraction')

    def test_translates_keep_their_distance(self):
        dist = check_w_contraction(self.centered, self.shifted).values['W2']
        np.testing.assert_allclose(dist, 0.5, atol=1e-6)

    def test_comparison_preserved(self):
        report = check_comparison(self.shifted, self.centered)
        self.assertTrue(report.passed)
        self.assertTrue(report.values['edge_ok'])

    def test_crossing_data_rejected(self):
        with self.assertRaises(PreconditionError):
            check_comparison(self.centered, self.narrow)


class ConvergenceReportTests(SimpleTestCase):
    def test_particles_against_pde_and_semicircle(self):
        pde = dyson_flow(t_end=0.2, times=())
        rec = simulate(SdeConfig(N=200, dt=1e-3, t_end=0.2, seed=3, initial=seed_cluster(200, 1.0), replicas=2))
        report = convergence_report({200: rec}, pde, lambda t: SemicircleFamily.at_time(t, seed_radius=1.0).on_grid(GRID),
                                    w2_particle_pde=0.1, w2_pde_analytic=0.02)
        self.assertTrue(report.passed, report.values)
        self.assertIsNone(report.values['slope'])
        self.assertEqual(report.values['rows'][0]['N'], 200)


class DriftPerturbationTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        times = (0.25, 0.5)
        m0 = SemicircleFamily(1.0).on_grid(GRID)
        cls.plain = solve_density(m0, PdeSpec('density', GRID, 0.5, sample_times=times))
        pushed = PdeSpec('density', GRID, 0.5, sample_times=times, kernel=parse_kernel('dyson', 'constant(0.5)'))
        cls.pushed = solve_density(m0, pushed)

    def test_constant_drift_shifts_the_flow(self):
        report = check_drift_perturbation(self.plain, self.pushed, drift_gap=0.5, rate=1.0)
        self.assertTrue(report.passed, report.values)
        # traslazione di 0.5 t: W2^2 = t^2 / 4
        np.testing.assert_allclose(report.values['W2_squared'][-1], 0.0625, rtol=0.05)

    def test_small_rate_is_violated(self):
        report = check_drift_perturbation(self.plain, self.pushed, drift_gap=0.5, rate=0.1)
        self.assertFalse(report.passed)
