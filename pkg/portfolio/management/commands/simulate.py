from ...exports import export_world, write_json
from ...filtering import run_filter
from ...market_signal import simulate_world
from ..base import PipelineCommand


class Command(PipelineCommand):
    """Simulate one full-information world path and filter it."""
    help = 'Simulate regime, asset and signals on [0, T]; writes world.csv and events.csv'
    subcommand = 'simulate'

    def run(self, model, solver, options):
        with self.stage('simulate'):
            world = simulate_world(model, model.horizon, self.dt, self.rng())
        with self.stage('filter'):
            result = run_filter(world, model, model.x0)
        with self.stage('export'):
            for path in export_world(world, self.path('world.csv'), self.path('events.csv')):
                self.output(path)
            summary = {
                'steps': int(world.t.size - 1),
                'dt': world.dt,
                'events': len(world.events),
                'switches': int((world.alpha[1:] != world.alpha[:-1]).sum()),
                'filter_clamps': result.clamp_count,
                'S_T': float(world.S[-1]),
            }
            self.output(write_json(self.path('simulate.json'), summary))
        self.stdout.write(f"{summary['events']} signals, {summary['switches']} regime switches")
