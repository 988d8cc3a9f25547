import csv
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from laboratorio.analytic import SemicircleFamily
from laboratorio.errors import ConfigError, KernelDiagonalError
from laboratorio.kernel import (
    B_lipschitz_certificate, InteractionKernel, L_operator, derive_c_g_beta, eval_B, eval_K, eval_L,
    parse_beta, parse_drift, parse_kernel, validate_hypotheses,
)
from laboratorio.measure import Grid, GridField, half_laplacian, hilbert


class DriftParsingTests(SimpleTestCase):
    def test_linear_drift_pulls_to_origin(self):
        b = parse_drift('linear(2)')
        np.testing.assert_allclose(b(np.array([-1.0, 0.5])), [2.0, -1.0])
        self.assertEqual(b.constant, 2.0)

    def test_sign_drift_one_sided_limits(self):
        left, right = parse_drift('sign').limits(np.array([0.0]))
        self.assertEqual((left[0], right[0]), (-1.0, 1.0))

    def test_time_drift_depends_on_t(self):
        b = parse_drift('time_linear(3)')
        self.assertEqual(b(np.array([1.0]), t=2.0)[0], 6.0)

    def test_unknown_or_malformed_drift(self):
        for text in ('wobble', 'linear', 'linear(1,2)', 'linear(a)'):
            with self.subTest(text=text), self.assertRaises(ConfigError):
                parse_drift(text)


class KernelTests(SimpleTestCase):
    def test_quadratic_beta_is_constant(self):
        k = parse_kernel('quadratic(0.1)')
        c, g, beta = derive_c_g_beta(k)
        x = np.linspace(-1, 1, 5)
        np.testing.assert_allclose(beta(x, x), -0.1)
        np.testing.assert_allclose(beta(x, x + 0.7), -0.1)
        np.testing.assert_allclose(g(x, x + 1.0), 0.9)
        np.testing.assert_allclose(c(x), 1.0)

    def test_inconsistent_diagonal_is_reported(self):
        k = InteractionKernel(f=lambda x, y: 1.0 + 0.1 * (x - y) ** 2, df_dyy=lambda x, y: 0.0 * x)
        with self.assertRaises(KernelDiagonalError) as ctx:
            derive_c_g_beta(k)
        self.assertIsNotNone(ctx.exception.witness)

    def test_dyson_K_is_hilbert(self):
        m = SemicircleFamily(2.0).on_grid(Grid.covering(-3, 3, 0.01))
        self.assertEqual(eval_K(parse_kernel('dyson'), m, 0.5), hilbert(m, 0.5))

    def test_quadratic_K_adds_linear_term(self):
        m = SemicircleFamily(2.0).on_grid(Grid.covering(-3, 3, 0.01))
        value = eval_K(parse_kernel('quadratic(0.1)'), m, 0.503)
        self.assertAlmostEqual(value - hilbert(m, 0.503), 0.0503, delta=1e-8)

    def test_L_operator_is_monotone_when_g_nonnegative(self):
        op = L_operator(parse_kernel('quadratic(0.1)'), Grid.covering(-1, 1, 0.05))
        off = op.matrix - np.diag(op.diagonal)
        self.assertLessEqual(off.max(), 0.0)

    def test_table_kernel_reproduces_quadratic(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'f.csv'
            s = np.linspace(-2, 2, 9)
            with open(path, 'w', newline='') as fh:
                w = csv.writer(fh)
                w.writerow(['x', 'y', 'f'])
                for x in s:
                    for y in s:
                        w.writerow([x, y, 1.0 + 0.1 * (x - y) ** 2])
            k = parse_kernel({'table': str(path)})
            self.assertAlmostEqual(float(k.beta_diagonal(np.array([0.3]))[0]), -0.1, delta=1e-6)
            self.assertEqual(k.box, (-2.0, 2.0, -2.0, 2.0))

    def test_unknown_kernel(self):
        with self.assertRaises(ConfigError):
            parse_kernel('cubic(1)')
        with self.assertRaises(ConfigError):
            parse_kernel({'tabella': 'x.csv'})


class BetaTests(SimpleTestCase):
    def test_box_beta_on_constant_field(self):
        beta = parse_beta('box(0.5,-1,1)')
        grid = Grid.covering(-2, 2, 0.01)
        u = GridField(grid.x0, grid.h, np.ones(grid.n), left_limit=1.0, right_limit=1.0)
        self.assertAlmostEqual(eval_B(beta, u, 0.0), -1.0, places=10)
        self.assertAlmostEqual(B_lipschitz_certificate(beta, grid.nodes, grid.h), 1.0, places=10)

    def test_zero_beta(self):
        self.assertIsNone(parse_beta('zero'))


class HypothesisTests(SimpleTestCase):
    def test_dyson_kernel_passes(self):
        self.assertTrue(validate_hypotheses(parse_kernel('dyson'), (-1, 1), lattice=41).passed)

    def test_quadratic_with_box_beta(self):
        report = validate_hypotheses(parse_kernel('quadratic(0.1)'), (-1, 1),
                                     beta=parse_beta('box(0.1,-1,1)'), lattice=41)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.comparison['min_g'], 0.6, places=10)

    def test_wishart_comparison_fails_left_of_origin(self):
        report = validate_hypotheses(parse_kernel('wishart'), (-1, 1), lattice=41)
        self.assertFalse(report.comparison['passed'])
        self.assertEqual(report.comparison['witness'][0], -1.0)
        self.assertTrue(validate_hypotheses(parse_kernel('wishart'), (0.1, 2), lattice=41).comparison['passed'])

    def test_sign_drift_is_one_sided_lipschitz(self):
        report = validate_hypotheses(parse_kernel('dyson', 'sign'), (-1, 1), lattice=41)
        self.assertTrue(report.drift_monotone['passed'])
        self.assertEqual(report.drift_monotone['C_b_needed'], 0.0)


class PointwiseOperatorTests(SimpleTestCase):
    def setUp(self):
        grid = Grid.covering(-10.0, 10.0, 0.01)
        self.gauss = GridField(grid.x0, grid.h, np.exp(-grid.nodes ** 2 / 2), left_limit=0.0, right_limit=0.0)

    def test_dyson_L_is_the_half_laplacian(self):
        k = parse_kernel('dyson')
        for x in (0.0, 0.37, -1.5):
            self.assertEqual(eval_L(k, self.gauss, x), half_laplacian(self.gauss, x))

    def test_gaussian_value_at_origin(self):
        # int (1 - e^{-y^2/2}) / y^2 dy = sqrt(2 pi)
        self.assertAlmostEqual(eval_L(parse_kernel('dyson'), self.gauss, 0.0), np.sqrt(2 * np.pi), delta=1e-2)
