import math
import tempfile

import numpy as np
from django.test import SimpleTestCase, tag

from laboratorio.analytic import MarcenkoPastur, SemicircleFamily
from laboratorio.errors import CflViolation, ConfigError
from laboratorio.kernel import box_beta, parse_kernel
from laboratorio.measure import Grid, density_to_cdf, lp_norm, moments, wasserstein
from laboratorio.snapshots import manifest_hash
from laboratorio.solvers import (
    DtPolicy, FlowRecord, PdeSpec, parse_coupling, parse_sigma, shifted_datum, solve, solve_coupled,
    solve_density, solve_reflected, solve_sigma, solve_with_B, wishart_spec,
)

GRID = Grid.covering(-3.0, 3.0, 0.02)


def semicircle(radius=1.0, center=0.0, grid=GRID):
    return SemicircleFamily(radius, center).on_grid(grid)


class PdeSpecTests(SimpleTestCase):
    def test_sample_times_include_t_end(self):
        spec = PdeSpec('density', GRID, 1.0, sample_times=(0.0, 0.5))
        self.assertEqual(spec.sample_times, (0.5, 1.0))
        self.assertAlmostEqual(spec.delta, 0.04)

    def test_invalid_specs(self):
        for kwargs in ({'form': 'spectral'}, {'cfl': 1.5}, {'viscosity': -1.0},
                       {'sample_times': (2.0,)}, {'form': 'wishart', 'eta': 2.0}):
            with self.subTest(kwargs=kwargs), self.assertRaises(ConfigError):
                PdeSpec(**dict({'form': 'density', 'grid': GRID, 't_end': 1.0}, **kwargs))

    def test_fixed_policy_needs_dt(self):
        with self.assertRaises(ConfigError):
            DtPolicy('fixed')

    def test_sigma_and_coupling_parsing(self):
        self.assertIsNone(parse_sigma('one'))
        self.assertEqual(parse_sigma('identity').name, 'identity')
        np.testing.assert_allclose(parse_sigma('constant(2)')(np.ones(3)), 2.0)
        self.assertEqual(parse_coupling('attraction(0.5)'), 0.5)
        self.assertIsNone(parse_coupling('none'))
        with self.assertRaises(ConfigError):
            parse_sigma('square')


class DensityFormTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.spec = PdeSpec('density', GRID, 0.5, sample_times=(0.25,))
        cls.flow = solve_density(semicircle(), cls.spec)

    def test_semicircle_widens_as_predicted(self):
        exact = SemicircleFamily.at_time(0.5, seed_radius=1.0).on_grid(GRID)
        self.assertLess(wasserstein(self.flow.densities[-1], exact, 2), 0.03)

    def test_mass_and_max_principle(self):
        self.assertEqual(self.flow.times, [0.0, 0.25, 0.5])
        sups = [lp_norm(d, math.inf) for d in self.flow.densities]
        self.assertTrue(all(b <= a + 1e-12 for a, b in zip(sups, sups[1:])))
        for d in self.flow.densities:
            self.assertAlmostEqual(d.mass, 1.0, places=10)

    def test_unit_sigma_reproduces_dyson(self):
        same = solve_sigma(semicircle(), None, self.spec)
        np.testing.assert_array_equal(same.densities[-1].values, self.flow.densities[-1].values)
        unit = solve_sigma(semicircle(), 'constant(1)', self.spec)
        np.testing.assert_allclose(unit.densities[-1].values, self.flow.densities[-1].values, atol=1e-12)

    def test_fixed_step_over_cfl_bound(self):
        spec = PdeSpec('density', GRID, 0.1, dt_policy=DtPolicy('fixed', 0.5))
        with self.assertRaises(CflViolation) as ctx:
            solve_density(semicircle(), spec)
        self.assertGreater(ctx.exception.dt, ctx.exception.bound)

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = self.flow.save(tmp, {'label': 'prova'})
            loaded = FlowRecord.load(tmp)
            self.assertEqual(loaded.source['sha256'], manifest_hash(tmp))
            self.assertTrue(manifest.exists())
        self.assertEqual(loaded.times, self.flow.times)
        np.testing.assert_array_equal(loaded.densities[-1].values, self.flow.densities[-1].values)
        self.assertEqual(loaded.meta['form'], 'density')

    def test_wrong_grid_is_rejected(self):
        with self.assertRaises(ConfigError):
            solve_density(semicircle(grid=Grid.covering(-2, 2, 0.02)), self.spec)


class CdfFormTests(SimpleTestCase):
    def test_cdf_form_matches_semicircle(self):
        spec = PdeSpec('cdf', GRID, 0.5)
        flow = solve(density_to_cdf(semicircle()), spec)
        exact = SemicircleFamily.at_time(0.5, seed_radius=1.0).cdf(GRID.nodes)
        self.assertLess(np.max(np.abs(flow.cdfs[-1].values - exact)), 0.02)
        self.assertLessEqual(flow.health['clamp_max'], 1e-6)

    def test_shifted_datum_distance(self):
        u0 = density_to_cdf(semicircle())
        u1 = shifted_datum(u0, 1e-3)
        self.assertAlmostEqual(float(np.max(np.asarray(u1.values) - np.asarray(u0.values))), 1e-3, places=9)

    def test_gronwall_certificate_with_box_beta(self):
        spec = PdeSpec('cdf', GRID, 0.25)
        flow = solve_with_B(density_to_cdf(semicircle()), box_beta(0.5, -1.0, 1.0), spec)
        cert = flow.extras['gronwall']
        self.assertTrue(cert['passed'])
        self.assertAlmostEqual(cert['d0'], 1e-3, places=8)
        self.assertEqual(len(flow.extras['hhalf']), len(flow.times))

    def test_singular_drift_records_hypotheses(self):
        spec = PdeSpec('cdf', GRID, 0.1, kernel=parse_kernel('dyson', 'sign'))
        flow = solve(density_to_cdf(semicircle()), spec)
        self.assertTrue(flow.extras['hypotheses']['drift_monotone']['passed'])
        self.assertLessEqual(float(flow.cdfs[-1].values[-1]), 1.0)

    def test_sign_drift_keeps_symmetric_seed_symmetric(self):
        u0 = density_to_cdf(semicircle())
        flow = solve(u0, PdeSpec('cdf', GRID, 0.2, kernel=parse_kernel('dyson', 'sign')))
        start = np.asarray(u0.values)
        end = np.asarray(flow.cdfs[-1].values)
        asym0 = float(np.max(np.abs(start + start[::-1] - 1.0)))
        self.assertLessEqual(float(np.max(np.abs(end + end[::-1] - 1.0))), asym0 + 1e-8)

    def test_smoothed_sign_gap_is_linear_in_eta(self):
        grid = Grid.covering(-3.0, 3.0, 0.01)
        u0 = density_to_cdf(semicircle(grid=grid))
        sharp = solve(u0, PdeSpec('cdf', grid, 0.2, kernel=parse_kernel('dyson', 'sign')))
        etas = (0.2, 0.1, 0.05)
        gaps = []
        for eta in etas:
            smooth = solve(u0, PdeSpec('cdf', grid, 0.2, kernel=parse_kernel('dyson', f'smoothed_sign({eta})')))
            gaps.append(float(np.max(np.abs(np.asarray(smooth.cdfs[-1].values) - np.asarray(sharp.cdfs[-1].values)))))
        self.assertTrue(all(b < a for a, b in zip(gaps, gaps[1:])), gaps)
        rate = gaps[0] / etas[0]
        for eta, gap in zip(etas, gaps):
            self.assertLessEqual(gap, 2.0 * rate * eta)

    @tag('slow')
    def test_marcenko_pastur_is_stationary(self):
        grid = Grid.covering(0.0, 4.5, 1.0 / 200)
        F0 = MarcenkoPastur(2.0).cdf_on_grid(grid)
        flow = solve(F0, wishart_spec(2.0, grid, 0.1))
        drift = max(float(np.max(np.abs(np.asarray(u.values) - np.asarray(F0.values)))) for u in flow.cdfs)
        self.assertLessEqual(drift, 0.01)
        self.assertIn('edge_gradient', flow.extras)


class CoupledAndReflectedTests(SimpleTestCase):
    def test_attraction_brings_species_together(self):
        spec = PdeSpec('coupled', GRID, 0.3, coupling='attraction(1)')
        left, right = solve_coupled(semicircle(0.5, -1.0), semicircle(0.5, 1.0), spec)
        self.assertEqual(left.times, right.times)
        self.assertGreater(moments(left.densities[-1], 1), -1.0 + 0.1)
        self.assertLess(moments(right.densities[-1], 1), 1.0 - 0.1)
        self.assertAlmostEqual(left.densities[-1].mass, 1.0, places=10)

    def test_uncoupled_species_are_independent(self):
        spec = PdeSpec('coupled', GRID, 0.2)
        left, _ = solve_coupled(semicircle(0.5, -1.0), semicircle(0.5, 1.0), spec)
        alone = solve_density(semicircle(0.5, -1.0), PdeSpec('density', GRID, 0.2))
        self.assertLess(wasserstein(left.densities[-1], alone.densities[-1], 2), 1e-3)

    def test_penalized_runs_keep_their_mass(self):
        spec = PdeSpec('density', GRID, 0.3)
        sweep = solve_reflected(semicircle(0.8), 1.0, (0.1, 0.01), spec)
        reports = sorted(sweep.reports, key=lambda r: r.eps, reverse=True)
        for rep in reports:
            self.assertLessEqual(abs(rep.mass - 1.0), sweep.flows[rep.eps].health['clip_total'] + 1e-9)
        self.assertLess(reports[1].overshoot_mass, reports[0].overshoot_mass)
        self.assertGreater(reports[0].overshoot_mass, 0.0)
        self.assertEqual(set(sweep.flows), {0.1, 0.01})
        self.assertIn('reflection', sweep.flows[0.1].extras)

    def test_barrier_far_away_changes_nothing(self):
        m0 = semicircle(0.5, -1.5)
        spec = PdeSpec('density', GRID, 0.05)
        free = solve_density(m0, spec)
        penalized = solve_reflected(m0, 1.0, (1e-3,), spec).flows[1e-3]
        self.assertEqual(free.times, penalized.times)
        diff = np.asarray(free.densities[-1].values) - np.asarray(penalized.densities[-1].values)
        self.assertLessEqual(float(np.max(np.abs(diff))), 1e-8)
        self.assertEqual(penalized.extras['reflection']['overshoot_mass'], 0.0)

    @tag('slow')
    def test_overshoot_shrinks_with_eps(self):
        grid = Grid.covering(-3.5, 1.5, 0.002)
        sweep = solve_reflected(semicircle(0.8, grid=grid), 1.0, (1e-1, 1e-2, 1e-3), PdeSpec('density', grid, 1.0))
        reports = sorted(sweep.reports, key=lambda r: r.eps, reverse=True)
        over = [r.overshoot_mass for r in reports]
        self.assertTrue(all(b < a for a, b in zip(over, over[1:])), over)
        for rep in reports:
            self.assertLessEqual(abs(rep.mass - 1.0), sweep.flows[rep.eps].health['clip_total'] + 1e-9)
        slopes = sweep.scaling()
        self.assertTrue(slopes and all(s > 0.2 for s in slopes), slopes)
