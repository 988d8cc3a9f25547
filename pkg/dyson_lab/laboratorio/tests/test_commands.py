import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from laboratorio.models import CheckOutcome, Run
from laboratorio.snapshots import read_manifest

GRID = {'lo': -2.5, 'hi': 2.5, 'h': 0.02}
SOLVE = {
    'schema': 1, 'grid': GRID,
    'initial': {'kind': 'semicircle', 'radius': 1.0},
    'pde': {'t_end': 0.2, 'samples': 4},
}


class CommandTestCase(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)
        patcher = override_settings(LAB_OUT_ROOT=self.root, LAB_RECORD_RUNS=True)
        patcher.enable()
        self.addCleanup(patcher.disable)

    def write_config(self, document, name='run.json'):
        path = self.root / name
        path.write_text(json.dumps(document, indent=2))
        return str(path)

    def run_command(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()


class SolveCommandTests(CommandTestCase):
    def test_solve_writes_flow_and_records_run(self):
        output = self.run_command('solve', config=self.write_config(SOLVE), out='flow')
        self.assertIn('solve:', output)
        manifest = read_manifest(self.root / 'flow')
        self.assertEqual(manifest['kind'], 'flow')
        self.assertIn('density_000.csv', manifest['files'])
        run = Run.objects.get()
        self.assertEqual((run.command, run.status, run.exit_code), ('solve', 'ok', 0))
        self.assertEqual(len(run.manifest_sha256), 64)

    def test_same_config_same_manifest(self):
        cfg = self.write_config(SOLVE)
        self.run_command('solve', config=cfg, out='a')
        self.run_command('solve', config=cfg, out='b')
        a, b = Run.objects.order_by('id')
        self.assertEqual(a.manifest_sha256, b.manifest_sha256)
        self.assertEqual(a.config_hash, b.config_hash)

    def test_default_out_uses_config_hash(self):
        self.run_command('solve', config=self.write_config(SOLVE))
        run = Run.objects.get()
        self.assertEqual(Path(run.out_dir), self.root / 'solve' / run.config_hash[:12])

    def test_invalid_config_exits_with_2(self):
        cfg = self.write_config(dict(SOLVE, grid={'lo': -1, 'hi': 1, 'dx': 0.1}))
        with self.assertRaises(CommandError) as ctx:
            self.run_command('solve', config=cfg)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('chiave sconosciuta', str(ctx.exception))
        self.assertFalse(Run.objects.exists())

    def test_cfl_violation_exits_with_1(self):
        cfg = self.write_config(dict(SOLVE, pde={'t_end': 0.1, 'dt_policy': {'mode': 'fixed', 'dt': 0.5}}))
        with self.assertRaises(CommandError) as ctx:
            self.run_command('solve', config=cfg, out='cfl')
        self.assertEqual(ctx.exception.returncode, 1)
        run = Run.objects.get()
        self.assertEqual((run.status, run.exit_code), ('failed', 1))


class VerifyCommandTests(CommandTestCase):
    def setUp(self):
        super().setUp()
        self.run_command('solve', config=self.write_config(SOLVE, 'solve.json'), out='flow')

    def test_checks_pass(self):
        output = self.run_command('verify', 'flow', checks='linf,lp', out='checks')
        self.assertIn('verify:', output)
        report = json.loads((self.root / 'checks' / 'report.json').read_text())
        self.assertTrue(report['passed'])
        self.assertEqual([c['name'] for c in report['checks']], ['linf', 'lp'])
        self.assertTrue((self.root / 'checks' / 'report.xlsx').exists())
        run = Run.objects.get(command='verify')
        self.assertEqual(run.checks.count(), 2)

    def test_failed_check_exits_with_3(self):
        cfg = self.write_config({'schema': 1, 'verify': {'checks': ['linf'], 'C': 0.01}})
        out = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('verify', 'flow', config=cfg, out='tight', stdout=out)
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('linf', out.getvalue())
        run = Run.objects.get(command='verify')
        self.assertEqual(run.status, Run.STATUS_CHECKS_FAILED)
        self.assertFalse(CheckOutcome.objects.get(run=run).passed)

    def test_pair_check_needs_two_flows(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('verify', 'flow', checks='w2')
        self.assertEqual(ctx.exception.returncode, 2)


class SimulateCommandTests(CommandTestCase):
    def test_two_particle_gap_law(self):
        cfg = self.write_config({
            'schema': 1,
            'sde': {'n': 2, 'positions': [-0.5, 0.5], 'dt': 0.01, 't_end': 0.1, 'replicas': 50, 'samples': 2},
        })
        self.run_command('simulate', config=cfg, seed=42, out='gap')
        manifest = read_manifest(self.root / 'gap')
        self.assertEqual(manifest['seed'], 42)
        np.testing.assert_allclose(manifest['times'], [0.0, 0.05, 0.1])
        self.assertIn('gap_law.csv', manifest['files'])
        lines = (self.root / 'gap' / 'trajectory.jsonl').read_text().splitlines()
        self.assertEqual(len(lines), 150)
        self.assertEqual(Run.objects.get().seed, '42')

    def test_seed_out_of_range(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('simulate', seed=2 ** 64)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_dirac_start_with_spike(self):
        self.run_command('simulate', n=20, dt=1e-3, t_end=0.05, replicas=2, spike='2,constant', out='spike')
        manifest = read_manifest(self.root / 'spike')
        self.assertEqual(manifest['N'], 20)
        self.assertEqual(manifest['absorbed_at'], [None, None])


class ReferenceAndSweepCommandTests(CommandTestCase):
    def test_semicircle_reference(self):
        cfg = self.write_config({'schema': 1, 'grid': GRID})
        self.run_command('reference', config=cfg, kind='semicircle', times='0.25,1', out='ref')
        with open(self.root / 'ref' / 'reference.csv', newline='') as fh:
            rows = list(csv.DictReader(fh))
        np.testing.assert_allclose([float(r['radius']) for r in rows], [1.0, 2.0])

    def test_spike_reference_reduced_convention(self):
        self.run_command('reference', kind='spike', lambda0=1.0, convention='reduced', out='spike')
        self.assertAlmostEqual(read_manifest(self.root / 'spike')['t0'], 4.0, delta=1e-5)

    def test_paper_convention_is_the_reduced_one(self):
        self.run_command('reference', kind='spike', lambda0=1.0, convention='paper', out='spike')
        self.assertAlmostEqual(read_manifest(self.root / 'spike')['t0'], 4.0, delta=1e-5)
        self.assertEqual(Run.objects.get().convention, 'reduced')

    def test_sweep_over_seed_radius(self):
        cfg = self.write_config({
            'schema': 1, 'grid': {'lo': -3, 'hi': 3, 'h': 0.05},
            'reference': {'kind': 'semicircle', 'times': [1.0]},
            'sweep': {'command': 'reference', 'axes': {'reference.seed_radius': [0.0, 2.0]}},
        })
        self.run_command('sweep', config=cfg, out='sweep', jobs=1)
        with open(self.root / 'sweep' / 'sweep.csv', newline='') as fh:
            rows = list(csv.DictReader(fh))
        self.assertEqual([r['status'] for r in rows], ['ok', 'ok'])
        self.assertAlmostEqual(float(rows[1]['radius_final']), 8.0 ** 0.5)
        self.assertTrue((self.root / 'sweep' / 'job_001' / 'manifest.json').exists())

    def test_sweep_with_bad_point_stops_before_running(self):
        cfg = self.write_config({
            'schema': 1,
            'sweep': {'command': 'solve', 'axes': {'pde.cfl': [0.4, 2.0]}},
        })
        with self.assertRaises(CommandError) as ctx:
            self.run_command('sweep', config=cfg, out='bad')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertFalse((self.root / 'bad' / 'job_000').exists())
