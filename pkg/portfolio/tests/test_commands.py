import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.conf import settings
from django.test import SimpleTestCase, TestCase, override_settings

from portfolio.exceptions import InvalidArgument
from portfolio.management.commands.verify import check_seeds, parse_checks
from portfolio.models import RunManifest

from .instances import config_document, merton_document


class CommandTestMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.addCleanup(self._tmp.cleanup)

    def write_config(self, document, name='config.json'):
        path = self.tmp / name
        path.write_text(json.dumps(document))
        return str(path)

    def call(self, name, document, out='out', **options):
        out_dir = self.tmp / out
        call_command(name, config=self.write_config(document), out_dir=str(out_dir), stdout=StringIO(), **options)
        return out_dir

    def manifest(self, out_dir):
        return json.loads((out_dir / 'manifest.json').read_text())


class SolveCommandTests(CommandTestMixin, SimpleTestCase):

    def test_merton_surface_is_flat_in_x(self):
        out_dir = self.call('solve', merton_document())
        with open(out_dir / 'surface.csv', newline='') as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0][0], 't')
        self.assertEqual(len(rows[0]), 52)
        self.assertEqual(len(rows), 102)
        for row in rows[1:]:
            values = [float(v) for v in row[1:]]
            self.assertLess(max(values) - min(values), 1e-12)
        report = json.loads((out_dir / 'bounds.json').read_text())
        self.assertLess(report['merton_max_rel_err'], 1e-3)

    def test_repeated_runs_are_byte_identical(self):
        first = self.call('solve', config_document(), out='a')
        second = self.call('solve', config_document(), out='b')
        self.assertEqual((first / 'surface.csv').read_bytes(), (second / 'surface.csv').read_bytes())

    def test_manifest_lists_outputs(self):
        out_dir = self.call('solve', config_document(), seed=5)
        manifest = self.manifest(out_dir)
        self.assertEqual(manifest['subcommand'], 'solve')
        self.assertEqual(manifest['exit_code'], 0)
        self.assertEqual(manifest['seed'], 5)
        self.assertEqual(sorted(manifest['output_files']), ['bounds.json', 'surface.csv'])
        for name in manifest['output_files']:
            self.assertTrue((out_dir / name).exists())
        self.assertIn('solve', manifest['timings'])
        self.assertEqual(manifest['config_echo']['utility'], {'kappa': -1.0})

    def test_grid_flags_and_overrides(self):
        out_dir = self.call('solve', config_document(), grid_nx=60, set=['solver.n_t=50'])
        report = json.loads((out_dir / 'bounds.json').read_text())
        self.assertEqual(report['solver']['config']['n_x'], 60)
        self.assertEqual(report['solver']['config']['n_t'], 50)

    def test_grid_settings_are_run_defaults(self):
        document = config_document()
        del document['solver']
        grid = {**settings.PORTFOLIO, 'GRID_NX': 60, 'GRID_NT': 40, 'QUAD_NODES': 64}
        with override_settings(PORTFOLIO=grid):
            out_dir = self.call('solve', document, out='settings')
            flagged = self.call('solve', document, out='flagged', grid_nt=50)
        config = json.loads((out_dir / 'bounds.json').read_text())['solver']['config']
        self.assertEqual((config['n_x'], config['n_t'], config['n_q']), (60, 40, 64))
        self.assertEqual(self.manifest(out_dir)['config_echo']['solver'], {'n_x': 60, 'n_t': 40, 'n_q': 64})
        config = json.loads((flagged / 'bounds.json').read_text())['solver']['config']
        self.assertEqual(config['n_t'], 50)
        # An explicit solver block beats the settings.
        with override_settings(PORTFOLIO=grid):
            out_dir = self.call('solve', config_document(), out='explicit')
        config = json.loads((out_dir / 'bounds.json').read_text())['solver']['config']
        self.assertEqual((config['n_x'], config['n_t'], config['n_q']), (50, 100, 64))

    def test_missing_field_exits_with_usage_code(self):
        document = config_document(utility={})
        with self.assertRaises(CommandError) as caught:
            self.call('solve', document)
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn('utility.kappa', str(caught.exception))
        self.assertEqual(self.manifest(self.tmp / 'out')['exit_code'], 1)


class BlrCommandTests(CommandTestMixin, SimpleTestCase):

    def test_identical_densities_fail_quietly(self):
        out_dir = self.call('blr_check', merton_document())
        report = json.loads((out_dir / 'blr.json').read_text())
        self.assertFalse(report['passes'])
        self.assertTrue(report['uninformative'])

    def test_hyphenated_name(self):
        out_dir = self.call('blr-check', config_document())
        report = json.loads((out_dir / 'blr.json').read_text())
        self.assertTrue(report['passes'])
        self.assertEqual(self.manifest(out_dir)['subcommand'], 'blr-check')

    def test_disjoint_supports_are_a_numerical_error(self):
        document = config_document(signal={
            'lambda': 1.0,
            'family': 'tabulated',
            'params': {'grid': [0.0, 1.0, 2.0, 3.0], 'f1': [1.0, 1.0, 0.0, 0.0], 'f2': [0.0, 0.0, 1.0, 1.0]},
        })
        with self.assertRaises(CommandError) as caught:
            self.call('blr_check', document)
        self.assertEqual(caught.exception.returncode, 2)


class PipelineCommandTests(CommandTestMixin, SimpleTestCase):

    def test_simulate_and_filter(self):
        out_dir = self.call('simulate', config_document(), dt=0.01)
        self.assertTrue((out_dir / 'world.csv').exists())
        self.assertTrue((out_dir / 'events.csv').exists())
        out_dir = self.call('filter', config_document(), out='filtered', dt=0.01, paths=200)
        self.assertIn('filter_check.json', self.manifest(out_dir)['output_files'])

    def test_simulate_and_filter_on_a_truncated_support(self):
        document = config_document()
        document['signal'] = dict(document['signal'], **{'lambda': 5.0, 'support': [-0.5, 0.5]})
        self.call('simulate', document, dt=0.01)
        out_dir = self.call('filter', document, out='filtered', dt=0.01, paths=200)
        self.assertEqual(self.manifest(out_dir)['exit_code'], 0)
        with open(out_dir / 'filter_events.csv', newline='') as handle:
            marks = [float(row['mark']) for row in csv.DictReader(handle)]
        self.assertTrue(all(-0.5 <= z <= 0.5 for z in marks))

    def test_strategy_table(self):
        out_dir = self.call('strategy', config_document(), times=2)
        with open(out_dir / 'strategy.csv', newline='') as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(len(rows), 1 + 2 * 51)

    def test_oracle_requires_degenerate_instance(self):
        with self.assertRaises(CommandError) as caught:
            self.call('oracle', config_document())
        self.assertEqual(caught.exception.returncode, 1)
        out_dir = self.call('oracle', merton_document(), out='merton')
        self.assertTrue(json.loads((out_dir / 'oracle.json').read_text())['passed'])

    def test_verify_subset(self):
        out_dir = self.call('verify', config_document(), checks='martingale,normalisation', paths=200, dt=0.02)
        overview = json.loads((out_dir / 'verify.json').read_text())
        self.assertEqual(overview['checks'], ['martingale', 'normalisation'])
        for name in ('check_martingale.json', 'check_normalisation.json', 'summary.csv'):
            self.assertTrue((out_dir / name).exists())

    def test_verify_rejects_bad_usage(self):
        with self.assertRaises(CommandError) as caught:
            self.call('verify', config_document(), paths=0)
        self.assertEqual(caught.exception.returncode, 1)
        with self.assertRaises(CommandError) as caught:
            self.call('verify', config_document(), checks='martingale,bogus', paths=10)
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn('bogus', str(caught.exception))


class CheckSelectionTests(SimpleTestCase):

    def test_sets_expand_in_order(self):
        self.assertEqual(parse_checks('dpp,acceptance')[:2], ['dpp', 'martingale'])
        self.assertEqual(len(parse_checks('all,martingale')), 9)

    def test_unknown_or_empty(self):
        with self.assertRaises(InvalidArgument):
            parse_checks('nope')
        with self.assertRaises(InvalidArgument):
            parse_checks(' , ')

    def test_seeds_do_not_depend_on_the_subset(self):
        seeds = check_seeds(20240611)
        self.assertEqual(seeds, check_seeds(20240611))
        self.assertEqual(len(set(seeds.values())), len(seeds))


class RecordedManifestTests(CommandTestMixin, TestCase):

    def test_record_flag_saves_the_manifest(self):
        self.call('solve', config_document(), record=True, seed=9)
        stored = RunManifest.objects.get()
        self.assertEqual(stored.subcommand, 'solve')
        self.assertEqual(stored.seed, 9)
        self.assertEqual(stored.exit_code, 0)
