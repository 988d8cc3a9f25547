import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from laboratorio.analytic import SemicircleFamily
from laboratorio.errors import InvalidMeasure
from laboratorio.measure import CdfGrid, Grid, GridField, density_to_cdf
from laboratorio.snapshots import (
    config_hash, manifest_hash, read_manifest, read_snapshot, write_manifest, write_snapshot,
)

GRID = Grid.covering(-3.0, 3.0, 0.05)


class SnapshotTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.density = SemicircleFamily(1.3, center=0.1).on_grid(GRID)

    def test_density_read_back_bit_identical(self):
        csv_path, sidecar = write_snapshot(self.dir / 'm.csv', self.density, time=0.5)
        self.assertEqual(sidecar.name, 'm.json')
        obj, meta = read_snapshot(csv_path)
        np.testing.assert_array_equal(np.asarray(obj.values), np.asarray(self.density.values))
        self.assertEqual(obj.x0, self.density.x0)
        self.assertEqual(meta['kind'], 'density')
        self.assertEqual(meta['time'], 0.5)
        self.assertAlmostEqual(meta['mass'], 1.0, places=10)

    def test_cdf_and_field_kinds(self):
        cdf = density_to_cdf(self.density)
        write_snapshot(self.dir / 'u.csv', cdf)
        obj, meta = read_snapshot(self.dir / 'u.csv')
        self.assertIsInstance(obj, CdfGrid)
        self.assertIsNone(meta['mass'])
        self.assertIsNone(meta['time'])

        field = GridField(GRID.x0, GRID.h, np.zeros(GRID.n), left_limit=0.0, right_limit=0.0)
        write_snapshot(self.dir / 'H.csv', field)
        obj, meta = read_snapshot(self.dir / 'H.csv')
        self.assertIsInstance(obj, GridField)
        self.assertEqual(meta['limits'], [0.0, 0.0])

    def test_bad_header_rejected(self):
        path, _ = write_snapshot(self.dir / 'm.csv', self.density)
        lines = path.read_text().splitlines()
        path.write_text('\n'.join(['pos,density'] + lines[1:]) + '\n')
        with self.assertRaises(InvalidMeasure):
            read_snapshot(path)

    def test_row_count_must_match_sidecar(self):
        path, _ = write_snapshot(self.dir / 'm.csv', self.density)
        lines = path.read_text().splitlines()
        path.write_text('\n'.join(lines[:-3]) + '\n')
        with self.assertRaises(InvalidMeasure):
            read_snapshot(path)

    def test_unknown_kind_rejected(self):
        path, sidecar = write_snapshot(self.dir / 'm.csv', self.density)
        meta = json.loads(sidecar.read_text())
        meta['kind'] = 'histogram'
        sidecar.write_text(json.dumps(meta))
        with self.assertRaises(InvalidMeasure):
            read_snapshot(path)


class ManifestTests(SimpleTestCase):
    def test_manifest_is_deterministic(self):
        with tempfile.TemporaryDirectory() as tmp:
            directory = Path(tmp)
            files = list(write_snapshot(directory / 'snapshots' / 't_1.csv',
                                        SemicircleFamily(1.0).on_grid(GRID), time=1.0))
            write_manifest(directory, {'command': 'solve', 'seed': 0}, files)
            first = manifest_hash(directory)
            write_manifest(directory, {'seed': 0, 'command': 'solve'}, reversed(files))
            self.assertEqual(manifest_hash(directory), first)
            manifest = read_manifest(directory)
        self.assertEqual(set(manifest['files']), {'snapshots/t_1.csv', 'snapshots/t_1.json'})
        self.assertEqual(manifest['command'], 'solve')

    def test_config_hash_ignores_key_order(self):
        a = {'schema': 1, 'grid': {'x_min': -3, 'x_max': 3}}
        b = {'grid': {'x_max': 3, 'x_min': -3}, 'schema': 1}
        self.assertEqual(config_hash(a), config_hash(b))
        self.assertNotEqual(config_hash(a), config_hash({'schema': 1}))
        self.assertEqual(config_hash({'v': np.float64(0.5)}), config_hash({'v': 0.5}))
