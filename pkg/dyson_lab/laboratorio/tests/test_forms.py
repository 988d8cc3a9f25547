import tempfile
from pathlib import Path

from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, override_settings

from laboratorio.forms import (
    InitialForm, PdeForm, SdeForm, load_config, set_path, validate_document, validate_section,
)


class DocumentTests(SimpleTestCase):
    def test_empty_document_takes_defaults(self):
        config = load_config()
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.section('grid'), {'lo': -3.0, 'hi': 3.0, 'h': 0.005})
        self.assertEqual(config.section('pde')['form'], 'density')
        self.assertEqual(config.section('sde')['n'], 100)

    @override_settings(LAB_CONVENTION='reduced')
    def test_convention_falls_back_to_settings(self):
        self.assertEqual(load_config().convention, 'reduced')
        self.assertEqual(load_config(overrides={'convention': 'raw'}).convention, 'raw')
        self.assertEqual(load_config(overrides={'convention': 'paper'}).convention, 'reduced')

    def test_unknown_key_is_a_schema_error(self):
        with self.assertRaises(ValidationError) as ctx:
            validate_document({'schema': 1, 'grid': {'lo': -1, 'hi': 1, 'step': 0.1}})
        self.assertIn("grid: chiave sconosciuta: 'step'", ctx.exception.messages)

    def test_schema_version(self):
        with self.assertRaises(ValidationError) as ctx:
            validate_document({'schema': 2})
        self.assertIn('schema', ctx.exception.messages[0])
        with self.assertRaises(ValidationError):
            validate_document({'grid': {}})
        with self.assertRaises(ValidationError):
            validate_document([1, 2])

    def test_overrides_create_missing_sections(self):
        config = validate_document({'schema': 1}, overrides={'sde.n': 2, 'seed': 9, 'pde.t_end': None})
        self.assertEqual(config.section('sde')['n'], 2)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.section('pde')['t_end'], 1.0)

    def test_hash_tracks_document_not_defaults(self):
        a = validate_document({'schema': 1})
        b = validate_document({'schema': 1, 'seed': 5})
        self.assertNotEqual(a.hash, b.hash)
        self.assertEqual(a.hash, load_config().hash)
        self.assertEqual(len(a.hash), 64)

    def test_set_path(self):
        doc = {'pde': 3}
        set_path(doc, 'pde.penalty.R0', 1.0)
        self.assertEqual(doc, {'pde': {'penalty': {'R0': 1.0}}})


class FileErrorTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'run.json'

    def test_json_syntax_error_has_position(self):
        self.path.write_text('{\n  "schema": 1,\n}\n')
        with self.assertRaises(ValidationError) as ctx:
            load_config(self.path)
        self.assertTrue(ctx.exception.messages[0].startswith(f"{self.path}:3:"))

    def test_field_error_anchored_to_key(self):
        line = '  "grid": {"lo": -1, "hi": 1, "h": -0.5}'
        self.path.write_text('{\n  "schema": 1,\n' + line + '\n}\n')
        with self.assertRaises(ValidationError) as ctx:
            load_config(self.path)
        message = ctx.exception.messages[0]
        col = line.index('"h"') + 1
        self.assertTrue(message.startswith(f"{self.path}:3:{col}: grid.h:"), message)

    def test_missing_file(self):
        with self.assertRaises(OSError):
            load_config(self.path)


class SectionTests(SimpleTestCase):
    def test_initial_kind_needs_parameters(self):
        _, errors = validate_section(InitialForm, {'kind': 'uniform', 'a': 1.0}, 'initial')
        self.assertEqual([where for where, _ in errors], ['initial.b'])
        _, errors = validate_section(InitialForm, {'kind': 'atomic', 'positions': [0.0, 1.0],
                                                   'weights': [0.3, 0.3]}, 'initial')
        self.assertEqual(errors[0][0], 'initial.weights')

    def test_initial_snapshot_must_be_csv(self):
        cleaned, errors = validate_section(InitialForm, {'kind': 'snapshot', 'path': 'm.json'})
        self.assertIsNone(cleaned)
        self.assertEqual(errors[0][0], 'path')

    def test_pde_form_rules(self):
        for data, where in (({'cfl': 1.2}, 'pde.cfl'),
                            ({'form': 'wishart'}, 'pde.eta'),
                            ({'t_end': 0.5, 'sample_times': [0.7]}, 'pde.sample_times'),
                            ({'form': 'cdf', 'reflection_eps': [0.1]}, 'pde.reflection_eps'),
                            ({'sigma': 'square'}, 'pde.sigma'),
                            ({'dt_policy': {'mode': 'fixed'}}, 'pde.dt_policy.dt')):
            with self.subTest(data=data):
                _, errors = validate_section(PdeForm, data, 'pde')
                self.assertIn(where, [w for w, _ in errors])

    def test_sde_nested_sections(self):
        cleaned, errors = validate_section(SdeForm, {'n': 2, 'positions': [-1.0, 1.0],
                                                     'spike': {'lambda0': 3.0}}, 'sde')
        self.assertEqual(errors, [])
        self.assertEqual(cleaned['spike']['a'], 'constant')
        self.assertIsNone(cleaned['barrier'])
        _, errors = validate_section(SdeForm, {'barrier': {'R0': 1.0}}, 'sde')
        self.assertEqual(errors[0][0], 'sde.barrier.eps')
