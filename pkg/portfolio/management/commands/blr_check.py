from ...blr import check_blr
from ...exports import write_json
from ..base import PipelineCommand


class Command(PipelineCommand):
    """Check the bounded-likelihood-ratio condition of the configured signal pair."""
    help = 'Check the BLR condition on the signal densities and write blr.json'
    subcommand = 'blr_check'

    def add_command_arguments(self, parser):
        parser.add_argument('--budget', type=float, help='Optional upper bound L_F that D3 must stay below')

    def run(self, model, solver, options):
        with self.stage('blr'):
            report = check_blr(model.signal, l_f_budget=options['budget'], n_nodes=solver.n_q, tail_mass=solver.tail_mass)
        with self.stage('export'):
            self.output(write_json(self.path('blr.json'), report.to_dict()))
        if report.passes:
            self.stdout.write(self.style.SUCCESS(
                f'BLR holds: b in [{report.b_min_est:.6g}, {report.b_max_est:.6g}], D3 = {report.d3:.6g}'
            ))
        else:
            self.stdout.write(self.style.WARNING('BLR fails: ' + '; '.join(report.reasons)))
