import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from portfolio.densities import GaussianFamily
from portfolio.dual_pide import PideConfig
from portfolio.exceptions import ConfigError
from portfolio.serializers import apply_defaults, apply_overrides, build_config, flatten_errors, load_config

from .instances import config_document


class BuildConfigTests(SimpleTestCase):

    def test_builds_model_and_solver(self):
        model, solver = build_config(config_document())
        self.assertEqual(model.signal.lam, 2.0)
        self.assertIsInstance(model.signal.family, GaussianFamily)
        self.assertEqual(model.utility.beta, 0.5)
        self.assertEqual(model.d0_form, 'squared')
        self.assertEqual((solver.n_x, solver.n_t), (50, 100))
        self.assertEqual(solver.n_q, PideConfig().n_q)

    def test_solver_block_is_optional(self):
        document = config_document()
        del document['solver']
        _, solver = build_config(document)
        self.assertEqual(solver, PideConfig())

    def test_missing_field_is_named(self):
        document = config_document(utility={})
        with self.assertRaises(ConfigError) as caught:
            build_config(document)
        self.assertIn('utility.kappa', caught.exception.errors)
        self.assertIn('utility.kappa', str(caught.exception))

    def test_constructor_errors_map_to_the_block(self):
        document = config_document(market={'mu1': 0.02, 'mu2': 0.08, 'sigma': 0.2, 'r': 0.02})
        with self.assertRaises(ConfigError) as caught:
            build_config(document)
        self.assertIn('market', caught.exception.errors)

    def test_rejects_grid_below_minimum(self):
        with self.assertRaises(ConfigError) as caught:
            build_config(config_document(solver={'n_x': 10}))
        self.assertIn('solver.n_x', caught.exception.errors)

    def test_rejects_quadrature_below_one_panel(self):
        with self.assertRaises(ConfigError) as caught:
            build_config(config_document(solver={'n_q': 8}))
        self.assertIn('solver.n_q', caught.exception.errors)
        _, solver = build_config(config_document(solver={'n_q': 16}))
        self.assertEqual(solver.n_q, 16)

    def test_support_override_with_open_end(self):
        document = config_document()
        document['signal']['support'] = [-5.0, None]
        model, _ = build_config(document)
        self.assertEqual(model.signal.support_override, (-5.0, np.inf))

    def test_support_without_mass_is_rejected(self):
        document = config_document()
        document['signal']['support'] = [40.0, 50.0]
        with self.assertRaises(ConfigError) as caught:
            build_config(document)
        self.assertIn('signal', caught.exception.errors)

    def test_unknown_family(self):
        document = config_document()
        document['signal']['family'] = 'cauchy'
        with self.assertRaises(ConfigError) as caught:
            build_config(document)
        self.assertIn('signal.family', caught.exception.errors)


class OverrideTests(SimpleTestCase):

    def test_values_are_parsed_as_json(self):
        document = apply_overrides(config_document(), ['utility.kappa=0.5', 'signal.lambda=0', 'solver.m_clamp=null'])
        self.assertEqual(document['utility']['kappa'], 0.5)
        self.assertEqual(document['signal']['lambda'], 0)
        self.assertIsNone(document['solver']['m_clamp'])

    def test_plain_strings_and_new_blocks(self):
        document = apply_overrides({}, ['hedge_form=literal', 'solver.bounds_theta=first'])
        self.assertEqual(document, {'hedge_form': 'literal', 'solver': {'bounds_theta': 'first'}})

    def test_original_is_untouched(self):
        original = config_document()
        apply_overrides(original, ['horizon=2'])
        self.assertEqual(original['horizon'], 1.0)

    def test_malformed_override(self):
        with self.assertRaises(ConfigError):
            apply_overrides({}, ['horizon'])


class DefaultTests(SimpleTestCase):

    def test_fills_only_missing_keys(self):
        document = apply_defaults(config_document(), {'solver.n_x': 80, 'solver.n_q': 64})
        self.assertEqual(document['solver'], {'n_x': 50, 'n_t': 100, 'n_q': 64})

    def test_creates_missing_blocks(self):
        document = config_document()
        del document['solver']
        filled = apply_defaults(document, {'solver.n_t': 40})
        self.assertEqual(filled['solver'], {'n_t': 40})
        self.assertNotIn('solver', document)

    def test_overrides_beat_defaults(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.json'
            document = config_document()
            del document['solver']
            path.write_text(json.dumps(document))
            _, solver, echo = load_config(path, ['solver.n_x=70'], {'solver.n_x': 60, 'solver.n_t': 40})
        self.assertEqual((solver.n_x, solver.n_t), (70, 40))
        self.assertEqual(echo['solver'], {'n_x': 70, 'n_t': 40})


class FlattenErrorTests(SimpleTestCase):

    def test_nested_keys(self):
        errors = {'signal': {'params': ['bad'], 'non_field_errors': ['worse']}, 'horizon': ['required']}
        self.assertEqual(
            flatten_errors(errors),
            {'signal.params': ['bad'], 'signal': ['worse'], 'horizon': ['required']},
        )


class LoadConfigTests(SimpleTestCase):

    def test_reads_and_echoes_document(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.json'
            path.write_text(json.dumps(config_document()))
            model, _, document = load_config(path, ['x0=0.25'])
        self.assertEqual(model.x0, 0.25)
        self.assertEqual(document['x0'], 0.25)

    def test_missing_and_invalid_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / 'absent.json')
            broken = Path(tmp) / 'broken.json'
            broken.write_text('{not json')
            with self.assertRaises(ConfigError):
                load_config(broken)
