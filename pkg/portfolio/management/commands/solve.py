from ...dual_pide import bounds, merton_oracle, minimal_clamp, slice_bounds
from ...exports import write_json
from ..base import PipelineCommand


class Command(PipelineCommand):
    """
    Solve the dual HJB PIDE and export the value surface.

    Writes surface.csv (one column per filter node) and bounds.json with the
    analytic bounds, the observed range and the solver diagnostics.
    """
    help = 'Solve the dual PIDE for Lambda and export the surface and its bounds'
    subcommand = 'solve'

    def run(self, model, solver, options):
        surface = self.solve(model, solver, export=True)
        c_l, c_u = bounds(model, solver.bounds_theta)
        lower, upper = slice_bounds(model, model.horizon - surface.t, solver.bounds_theta)
        every = max(1, surface.n_t // 20)
        report = {
            'C_l': c_l,
            'C_u': c_u,
            'min': surface.meta['min'],
            'max': surface.meta['max'],
            'slice_bounds': {'t': surface.t[::every], 'lower': lower[::every], 'upper': upper[::every]},
            'minimal_clamp': minimal_clamp(model, solver),
            'Lambda_0_x0': float(surface.at(0.0, model.x0)),
            'solver': surface.meta,
        }
        if model.degenerate:
            oracle = merton_oracle(surface.t, model)
            report['merton_max_rel_err'] = float(abs(surface.values / oracle[:, None] - 1.0).max())
        with self.stage('export'):
            self.output(write_json(self.path('bounds.json'), report))
        if surface.meta['slice_bound_breaches']:
            self.stdout.write(self.style.WARNING(
                f"{surface.meta['slice_bound_breaches']} nodes outside the time-resolved bounds"
            ))
