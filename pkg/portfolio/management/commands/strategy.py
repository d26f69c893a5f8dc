import numpy as np

from ...exports import export_strategy, write_json
from ...strategy_duality import StrategyField, dual_value, primal_value, y_star
from ..base import PipelineCommand


class Command(PipelineCommand):
    """Tabulate the optimal feedback controls of the solved surface."""
    help = 'Export investment and consumption per unit wealth on a (t, x) table'
    subcommand = 'strategy'

    def add_command_arguments(self, parser):
        parser.add_argument('--times', type=int, default=11, help='Number of evenly spaced table times on [0, T]')

    def run(self, model, solver, options):
        surface = self.solve(model, solver)
        with self.stage('strategy'):
            field = StrategyField(surface)
            times = np.linspace(0.0, model.horizon, max(2, options['times']))
            tt, xx, invest, consume = field.table(times)
            values = surface.at(tt, xx)

        # The dual value at y* plus v y* closes the gap to J.
        v = model.v0
        y = float(y_star(v, surface, 0.0, model.x0, model.utility))
        j = float(primal_value(v, surface, 0.0, model.x0, model.utility))
        dual = float(dual_value(surface, 0.0, model.x0, y, model.utility)) + v * y
        with self.stage('export'):
            self.output(export_strategy(tt, xx, invest, consume, values, self.path('strategy.csv')))
            self.output(write_json(self.path('strategy.json'), {
                'x0': model.x0,
                'v0': v,
                'hedge_form': model.hedge_form,
                'Lambda_0_x0': float(surface.at(0.0, model.x0)),
                'primal_value': j,
                'y_star': y,
                'dual_bound': dual,
                'duality_gap': dual - j,
            }))
        self.stdout.write(f'J(0, x0, v0) = {j:.6g}, duality gap {dual - j:.2e}')
