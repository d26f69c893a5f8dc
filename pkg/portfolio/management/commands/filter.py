import numpy as np
from django.conf import settings

from ...exports import export_filter_path, write_csv, write_json
from ...filtering import FilterPath, mean_filter_ode, run_filter_batch
from ...market_signal import simulate_world_batch
from ..base import PipelineCommand


class Command(PipelineCommand):
    """
    Run the filter on many simulated worlds.

    Compares the cross-path mean of pi_t with the mean-filter ODE at T/4, T/2
    and T, and exports the first path with its signal events.
    """
    help = 'Filter --paths simulated worlds and check the mean against the filter ODE'
    subcommand = 'filter'

    def add_command_arguments(self, parser):
        parser.add_argument('--c-disc', type=float, help='Discretisation allowance C in 3 stderr + C dt (default: PORTFOLIO["C_DISC"])')

    def run(self, model, solver, options):
        c_disc = settings.PORTFOLIO['C_DISC'] if options['c_disc'] is None else options['c_disc']
        with self.stage('simulate'):
            world = simulate_world_batch(model, model.horizon, self.dt, self.rng(), self.paths)
        with self.stage('filter'):
            result = run_filter_batch(world, model, model.x0)

        mean = result.pi.mean(axis=0)
        stderr = result.pi.std(axis=0, ddof=1) / np.sqrt(self.paths) if self.paths > 1 else np.zeros_like(mean)
        ode = mean_filter_ode(world.t, model.x0, model.regime)
        checks = []
        for q in (0.25, 0.5, 1.0):
            k = int(round(q * world.n_steps))
            tol = 3.0 * stderr[k] + c_disc * world.dt
            checks.append({
                't': float(world.t[k]),
                'mean': float(mean[k]),
                'stderr': float(stderr[k]),
                'ode': float(ode[k]),
                'tolerance': float(tol),
                'passed': bool(abs(mean[k] - ode[k]) <= tol),
            })

        with self.stage('export'):
            self.output(write_csv(self.path('filter_mean.csv'), ['t', 'mean_pi', 'stderr', 'ode'],
                                  zip(world.t, mean, stderr, ode)))
            for path in export_filter_path(_first_path(world, result), self.path('filter_path.csv'),
                                           self.path('filter_events.csv')):
                self.output(path)
            self.output(write_json(self.path('filter_check.json'), {
                'paths': self.paths,
                'dt': world.dt,
                'clamp_fraction': result.clamp_fraction,
                'checks': checks,
            }))
        verdict = all(c['passed'] for c in checks)
        style = self.style.SUCCESS if verdict else self.style.WARNING
        self.stdout.write(style(f"mean filter vs ODE: {'pass' if verdict else 'FAIL'}"))


def _first_path(world, result):
    mine = world.event_path == 0
    return FilterPath(
        t=world.t,
        pi=result.pi[0],
        innovations=result.innovations[0],
        clamp_count=0,
        event_time=world.event_time[mine],
        event_mark=world.event_mark[mine],
        event_pre=result.event_pre[mine],
        event_post=result.event_post[mine],
    )
