import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from laboratorio import analytic
from laboratorio.analytic import (
    MarcenkoPastur, SemicircleFamily, atomic_seed, burgers_characteristics, mp_edges,
    mp_stationarity_residual, semicircle_cdf, semicircle_density, semicircle_hilbert, semicircle_seed,
    spike_absorption_reference,
)
from laboratorio.errors import ConfigError
from laboratorio.measure import CdfGrid, Grid, hilbert_field, wasserstein
from laboratorio.particles import APath, SpikeConfig, simulate_spike


class SemicircleTests(SimpleTestCase):
    def test_radius_by_convention(self):
        self.assertAlmostEqual(SemicircleFamily.at_time(1.0).radius, 2.0)
        self.assertAlmostEqual(SemicircleFamily.at_time(1.0, 'reduced').radius, 1.0)
        self.assertEqual(SemicircleFamily.at_time(1.0, 'paper').convention, 'reduced')
        self.assertAlmostEqual(SemicircleFamily.at_time(1.0, seed_radius=2.0).radius, math.sqrt(8.0))

    def test_density_integrates_to_cdf(self):
        fam = SemicircleFamily(2.0, center=0.5)
        self.assertAlmostEqual(float(fam.cdf(0.5)), 0.5)
        self.assertEqual(float(fam.cdf(3.0)), 1.0)
        self.assertAlmostEqual(float(fam.density(0.5)), 1.0 / math.pi)

    def test_hilbert_matches_grid_transform(self):
        fam = SemicircleFamily(2.0)
        m = fam.on_grid(Grid.covering(-4, 4, 0.01))
        H = hilbert_field(m)
        far = np.abs(m.x) > 2.5
        np.testing.assert_allclose(H.values[far], fam.hilbert(m.x[far]), atol=1e-3)

    def test_free_functions_follow_the_family(self):
        fam = SemicircleFamily(1.5, center=-0.2)
        x = np.array([-3.0, -0.2, 0.4, 2.0])
        np.testing.assert_array_equal(semicircle_density(fam, x), fam.density(x))
        np.testing.assert_array_equal(semicircle_cdf(fam, x), fam.cdf(x))
        np.testing.assert_array_equal(semicircle_hilbert(fam, x), fam.hilbert(x))

    def test_reduced_hilbert_is_a_quarter(self):
        raw = SemicircleFamily(1.0).hilbert(0.5)
        reduced = SemicircleFamily(1.0, convention='reduced').hilbert(0.5)
        self.assertAlmostEqual(float(reduced), float(raw) / 4.0)

    def test_nonpositive_radius(self):
        with self.assertRaises(ConfigError):
            SemicircleFamily(0.0)


class MarcenkoPasturTests(SimpleTestCase):
    def test_edges(self):
        lo, hi = mp_edges(2.0)
        self.assertAlmostEqual(lo, 2.0 - math.sqrt(3.0))
        self.assertAlmostEqual(hi, 2.0 + math.sqrt(3.0))
        lo, hi = mp_edges(2.0, 'reduced')
        self.assertAlmostEqual(lo, (1 - math.sqrt(0.5)) ** 2)
        self.assertAlmostEqual(hi, (1 + math.sqrt(0.5)) ** 2)

    def test_raw_law_has_unit_mass(self):
        mp = MarcenkoPastur(2.0)
        self.assertAlmostEqual(float(mp.cdf(mp.edges[1])[0]), 1.0, places=8)

    def test_eta_below_one(self):
        with self.assertRaises(ConfigError):
            MarcenkoPastur(0.5)

    def test_stationarity_residual_small_in_bulk(self):
        mp = MarcenkoPastur(2.0)
        grid = Grid.covering(0.01, 4.5, 1.0 / 400)
        resid = mp_stationarity_residual(2.0, mp.cdf_on_grid(grid))
        lo, hi = mp.edges
        bulk = (grid.nodes > lo + 0.1 * (hi - lo)) & (grid.nodes < hi - 0.1 * (hi - lo))
        self.assertLessEqual(np.max(np.abs(resid.values[bulk])), 0.05)

    def test_uniform_cdf_is_not_stationary(self):
        grid = Grid.covering(0.0, 2.0, 1.0 / 200)
        F = CdfGrid(grid.x0, grid.h, np.clip(grid.nodes, 0.0, 1.0))
        resid = mp_stationarity_residual(2.0, F)
        bulk = (grid.nodes > 0.1) & (grid.nodes < 0.9)
        self.assertGreater(np.max(np.abs(resid.values[bulk])), 0.05)

    def test_grid_touching_origin_is_rejected(self):
        F = CdfGrid(-0.5, 0.1, np.linspace(0, 1, 20))
        with self.assertRaises(ConfigError):
            mp_stationarity_residual(2.0, F)


class SpikeReferenceTests(SimpleTestCase):
    # dal Dirac, lambda_t = lambda0 + t/lambda0 tocca il bordo 2 sqrt(t) in t0 = lambda0^2
    def test_absorption_time_raw(self):
        ref = spike_absorption_reference(1.0)
        self.assertAlmostEqual(ref.t0, 1.0, delta=1e-6)
        self.assertTrue(np.all(np.diff(ref.Z) < 0))
        np.testing.assert_allclose(ref.spike[:100], 1.0 + ref.times[:100], rtol=1e-6)

    def test_absorption_time_reduced(self):
        self.assertAlmostEqual(spike_absorption_reference(1.0, 'reduced').t0, 4.0, delta=1e-5)

    def test_spike_inside_bulk_is_rejected(self):
        with self.assertRaises(ConfigError):
            spike_absorption_reference(0.5, seed_radius=1.0)

    def test_integrated_spike_against_ode(self):
        t_start = 0.01
        ref = spike_absorption_reference(1.0, t_start=t_start)
        path = simulate_spike(SpikeConfig(1.0, APath('constant')), SemicircleFamily.at_time,
                              dt=1e-4, t_end=2.0, t_start=t_start)
        self.assertIsNotNone(path.absorbed_at)
        self.assertTrue(np.all(np.diff(path.Z) < 0))
        self.assertAlmostEqual(path.absorbed_at / ref.t0, 1.0, delta=0.02)


class CharacteristicsTests(SimpleTestCase):
    def test_semicircle_seed_evolves_to_wider_semicircle(self):
        grid = Grid.covering(-2.5, 2.5, 0.02)
        m = burgers_characteristics(semicircle_seed(0.0, 1.0), 0.5, grid)
        exact = SemicircleFamily.at_time(0.5, seed_radius=1.0).on_grid(grid)
        self.assertAlmostEqual(m.mass, 1.0, places=8)
        self.assertLess(wasserstein(m, exact, 1), 1e-2)

    def test_dirac_seed_gives_semicircle(self):
        grid = Grid.covering(-2.5, 2.5, 0.02)
        m = burgers_characteristics(atomic_seed([1.0], [0.0]), 1.0, grid)
        self.assertLess(wasserstein(m, SemicircleFamily.at_time(1.0).on_grid(grid), 2), 2e-2)

    def test_two_atoms_give_two_separate_bumps(self):
        grid = Grid.covering(-2.0, 2.0, 0.01)
        m, failed = burgers_characteristics(atomic_seed([0.5, 0.5], [-1.0, 1.0]), 0.05, grid, with_mask=True)
        self.assertAlmostEqual(m.mass, 1.0, places=8)
        self.assertLess(failed.mean(), 0.01)
        x, v = m.x, np.asarray(m.values)
        # ogni atomo diventa un semicerchio di raggio 2 sqrt(t / 2) ~ 0.32
        self.assertLess(float(np.max(v[np.abs(x) < 0.5])), 1e-3)
        self.assertAlmostEqual(float(m.h * v[x < 0].sum()), 0.5, delta=1e-3)
        self.assertAlmostEqual(float(x[np.argmax(np.where(x < 0, v, 0.0))]), -1.0, delta=0.05)
        self.assertAlmostEqual(float(x[np.argmax(np.where(x > 0, v, 0.0))]), 1.0, delta=0.05)

    def test_unconverged_points_are_masked_out(self):
        grid = Grid.covering(-2.5, 2.5, 0.02)
        real = analytic.burgers_stieltjes

        def flaky(*args, **kwargs):
            G, ok = real(*args, **kwargs)
            G, ok = G.copy(), ok.copy()
            G[100], ok[100] = complex(np.nan, np.nan), False
            return G, ok

        with mock.patch.object(analytic, 'burgers_stieltjes', flaky):
            m, failed = burgers_characteristics(semicircle_seed(0.0, 1.0), 0.5, grid, with_mask=True)
        self.assertEqual(list(np.flatnonzero(failed)), [100])
        v = np.asarray(m.values)
        self.assertAlmostEqual(v[100], 0.5 * (v[99] + v[101]), places=12)
        self.assertAlmostEqual(m.mass, 1.0, places=8)

    def test_offset_bisection_matches_the_ladder(self):
        seed = semicircle_seed(0.0, 1.0)
        G_ladder, ok = analytic.burgers_stieltjes(seed, 0.5, np.array([0.3]), 1e-4)
        G_start, _ = analytic.burgers_stieltjes(seed, 0.5, np.array([0.3]), 1.0)
        G_jump, converged = analytic._bisect_offset(seed, 0.3, 0.5, G_start[0], 1.0, 1e-4)
        self.assertTrue(ok[0] and converged)
        self.assertAlmostEqual(abs(G_jump - G_ladder[0]), 0.0, places=8)

    def test_atomic_weights_must_sum_to_one(self):
        with self.assertRaises(ConfigError):
            atomic_seed([0.4, 0.4], [-1.0, 1.0])
