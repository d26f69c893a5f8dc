"""
Shared plumbing of the pipeline management commands.

Every command accepts the same global flags, reads a JSON problem instance,
writes its artifacts into one output directory and finishes by writing
manifest.json. Domain errors become CommandError with exit code 1 (usage or
configuration) or 2 (numerical diagnostic).
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ..constants import EXIT_OK
from ..dual_pide import solve_lambda
from ..exceptions import ConfigError, InvalidArgument, PortfolioError
from ..exports import export_surface, write_json
from ..models import RunManifest
from ..serializers import RunManifestSerializer, load_config

logger = logging.getLogger('portfolio')


class PipelineCommand(BaseCommand):
    """
    Base class of the pipeline commands.

    Subclasses set `subcommand`, add their own flags in `add_command_arguments`
    and implement `run()`, registering every file they write with `self.output()`.
    """

    subcommand = None
    requires_config = True

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON problem instance')
        parser.add_argument('--seed', type=int, help='Root seed (default: PORTFOLIO["DEFAULT_SEED"])')
        parser.add_argument('--out-dir', help='Output directory (default: PORTFOLIO["OUTPUT_DIR"]/<command>)')
        parser.add_argument('--paths', type=int, help='Monte Carlo path count')
        parser.add_argument('--dt', type=float, help='Monte Carlo / simulation time step')
        parser.add_argument('--grid-nx', type=int, help='Filter grid intervals of the dual solver')
        parser.add_argument('--grid-nt', type=int, help='Time steps of the dual solver')
        parser.add_argument(
            '--set', action='append', default=[], metavar='KEY=VALUE',
            help='Override a config entry by dotted path (repeatable)',
        )
        parser.add_argument('--record', action='store_true', help='Also store the run manifest in the database')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def run(self, model, solver, options):
        raise NotImplementedError

    # Helpers available to run()

    @contextmanager
    def stage(self, name):
        started = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - started

    def output(self, path):
        path = Path(path)
        self.output_files.append(path.relative_to(self.out_dir).as_posix())
        return path

    def path(self, name):
        return self.out_dir / name

    def rng(self):
        return np.random.default_rng(self.seed)

    def solve(self, model, solver, export=False):
        with self.stage('solve'):
            surface = solve_lambda(model, solver)
        self.stdout.write(
            f"Solved Lambda on {surface.n_t + 1}x{surface.n_x + 1} grid: "
            f"[{surface.meta['min']:.6g}, {surface.meta['max']:.6g}]"
        )
        if export:
            with self.stage('export'):
                self.output(export_surface(surface, self.path('surface.csv')))
        return surface

    # Driver

    def _defaults(self, options):
        config = settings.PORTFOLIO
        self.seed = options['seed'] if options['seed'] is not None else config['DEFAULT_SEED']
        self.paths = options['paths'] if options['paths'] is not None else config['DEFAULT_PATHS']
        self.dt = options['dt'] if options['dt'] is not None else config['DEFAULT_DT']
        if self.paths < 1:
            raise InvalidArgument(f'--paths must be positive, got {self.paths}')
        if not self.dt > 0:
            raise InvalidArgument(f'--dt must be positive, got {self.dt}')

    def _load(self, options):
        if not options['config']:
            raise ConfigError({'--config': ['a configuration file is required']})
        overrides = list(options['set'])
        if options['grid_nx'] is not None:
            overrides.append(f"solver.n_x={options['grid_nx']}")
        if options['grid_nt'] is not None:
            overrides.append(f"solver.n_t={options['grid_nt']}")
        portfolio = settings.PORTFOLIO
        defaults = {
            'solver.n_x': portfolio['GRID_NX'],
            'solver.n_t': portfolio['GRID_NT'],
            'solver.n_q': portfolio['QUAD_NODES'],
        }
        return load_config(options['config'], overrides, defaults)

    def handle(self, *args, **options):
        portfolio = settings.PORTFOLIO
        self.timings = {}
        self.record = options['record']
        self.output_files = []
        self.seed = options['seed']
        self.out_dir = Path(options['out_dir'] or Path(portfolio['OUTPUT_DIR']) / self.subcommand).resolve()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        document = {}
        exit_code = EXIT_OK
        message = None
        try:
            self._defaults(options)
            model = solver = None
            if self.requires_config:
                with self.stage('config'):
                    model, solver, document = self._load(options)
            self.run(model, solver, options)
        except PortfolioError as exc:
            exit_code = exc.exit_code
            message = str(exc)
            logger.error('%s failed: %s', self.subcommand, message)
        self._write_manifest(document, exit_code)
        if exit_code != EXIT_OK:
            raise CommandError(message, returncode=exit_code)
        self.stdout.write(self.style.SUCCESS(
            f'{self.subcommand}: wrote {len(self.output_files)} files to {self.out_dir}'
        ))

    def _write_manifest(self, document, exit_code):
        manifest = RunManifest(
            subcommand=self.subcommand,
            seed=self.seed,
            artifact_version=settings.PORTFOLIO['ARTIFACT_VERSION'],
            config_echo=document,
            output_files=list(self.output_files),
            timings={k: round(v, 6) for k, v in self.timings.items()},
            exit_code=exit_code,
        )
        if self.record:
            manifest.save()
        write_json(self.out_dir / 'manifest.json', RunManifestSerializer(manifest).data)

