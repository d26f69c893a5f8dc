import numpy as np

from ...dual_pide import merton_oracle
from ...exceptions import InvalidArgument
from ...exports import write_csv, write_json
from ..base import PipelineCommand

ORACLE_TOLERANCE = 1e-3


class Command(PipelineCommand):
    """Compare the solver with the closed form on a degenerate (Merton) instance."""
    help = 'Solve a degenerate instance and compare Lambda with the Merton closed form'
    subcommand = 'oracle'

    def run(self, model, solver, options):
        if not model.degenerate:
            raise InvalidArgument('oracle needs a degenerate instance: mu1 == mu2 and f1 == f2')
        surface = self.solve(model, solver, export=True)
        exact = merton_oracle(surface.t, model)
        rel = np.abs(surface.values / exact[:, None] - 1.0)
        spread = surface.values.max(axis=1) - surface.values.min(axis=1)
        max_rel = float(rel.max())
        with self.stage('export'):
            self.output(write_csv(
                self.path('oracle.csv'),
                ['t', 'Lambda_min', 'Lambda_max', 'oracle', 'max_rel_err'],
                zip(surface.t, surface.values.min(axis=1), surface.values.max(axis=1), exact, rel.max(axis=1)),
            ))
            self.output(write_json(self.path('oracle.json'), {
                'max_rel_err': max_rel,
                'max_x_spread': float(spread.max()),
                'tolerance': ORACLE_TOLERANCE,
                'passed': max_rel <= ORACLE_TOLERANCE,
                'solve_seconds': self.timings.get('solve'),
            }))
        style = self.style.SUCCESS if max_rel <= ORACLE_TOLERANCE else self.style.WARNING
        self.stdout.write(style(f'max relative error {max_rel:.3e}'))
