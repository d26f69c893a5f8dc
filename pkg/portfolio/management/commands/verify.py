import numpy as np
from django.conf import settings

from ...constants import CHECK_NAMES, CHECK_SETS, WEALTH_SCHEMES
from ...exceptions import InvalidArgument, PortfolioError
from ...exports import export_summary, write_json
from ...montecarlo_verify import (
    BlockRunner,
    calibrate_c_disc,
    dpp_check,
    dual_estimate_direct,
    dual_estimate_weighted,
    estimators_agree,
    martingale_check,
    primal_objective,
    weight_normalisation,
)
from ..base import PipelineCommand


def parse_checks(text):
    """Expand a comma list of check names and set names, keeping first-seen order."""
    names = []
    for token in (t.strip() for t in text.split(',')):
        if not token:
            continue
        if token in CHECK_SETS:
            expanded = CHECK_SETS[token]
        elif token in CHECK_NAMES:
            expanded = [token]
        else:
            valid = ', '.join(CHECK_NAMES + sorted(CHECK_SETS))
            raise InvalidArgument(f'unknown check {token!r}; valid names: {valid}')
        names.extend(n for n in expanded if n not in names)
    if not names:
        raise InvalidArgument('no checks selected')
    return names


def check_seeds(seed):
    """One seed per check name, independent of which subset runs."""
    children = np.random.SeedSequence(seed).spawn(len(CHECK_NAMES))
    return {name: int(child.generate_state(1, dtype=np.uint64)[0] >> 1) for name, child in zip(CHECK_NAMES, children)}


class Command(PipelineCommand):
    """
    Monte Carlo verification of the solved dual surface.

    Each selected check writes check_<name>.json; summary.csv holds one row per
    check. A check that raises is recorded with its error and the command then
    exits with that error's code once every other check has run.
    """
    help = 'Solve the dual PIDE and run Monte Carlo verification checks'
    subcommand = 'verify'

    def add_command_arguments(self, parser):
        parser.add_argument('--checks', default='acceptance', help='Comma list of check names or sets (all, acceptance)')
        parser.add_argument('--t', type=float, default=0.0, help='Start time of the checks')
        parser.add_argument('--x', type=float, help='Start filter value (default: x0)')
        parser.add_argument('--v', type=float, help='Initial wealth of the primal checks (default: v0)')
        parser.add_argument('--c-disc', type=float, help='Discretisation allowance (default: PORTFOLIO["C_DISC"])')
        parser.add_argument('--calibrate', action='store_true', help='Calibrate C_disc by halving dt first')
        parser.add_argument('--wealth-scheme', default='log', choices=[c for c, _ in WEALTH_SCHEMES])

    def run(self, model, solver, options):
        names = parse_checks(options['checks'])
        portfolio = settings.PORTFOLIO
        t = options['t']
        x = model.x0 if options['x'] is None else options['x']
        v = model.v0 if options['v'] is None else options['v']
        c_disc = portfolio['C_DISC'] if options['c_disc'] is None else options['c_disc']
        runner = BlockRunner(portfolio['BLOCK_SIZE'], portfolio['WORKERS'])
        seeds = check_seeds(self.seed)
        paths, dt = self.paths, self.dt
        scheme = options['wealth_scheme']

        surface = self.solve(model, solver)
        calibration = None
        if options['calibrate']:
            with self.stage('calibrate'):
                calibration = calibrate_c_disc(martingale_check, model, surface, t, x, paths, dt, self.seed, runner=runner)
            c_disc = calibration['c_disc']

        common = (model, surface, t, x)
        checks = {
            'martingale': lambda s: martingale_check(*common, paths, dt, s, c_disc=c_disc, runner=runner),
            'direct': lambda s: dual_estimate_direct(*common, paths, dt, s, c_disc=c_disc, runner=runner),
            'direct_zero': lambda s: dual_estimate_direct(*common, paths, dt, s, control='zero', runner=runner),
            'weighted': lambda s: dual_estimate_weighted(*common, paths, dt, s, c_disc=c_disc, runner=runner),
            'normalisation': lambda s: weight_normalisation(*common, paths, dt, s, runner=runner),
            'dpp': lambda s: dpp_check(*common, paths, dt, s, c_disc=c_disc, runner=runner),
            'primal': lambda s: primal_objective(*common, v, paths, dt, s, wealth_scheme=scheme, runner=runner),
            'primal_perturbed': lambda s: primal_objective(
                *common, v, paths, dt, s, strategy='perturbed', wealth_scheme=scheme, runner=runner),
            'primal_zero': lambda s: primal_objective(
                *common, v, paths, dt, s, strategy='zero', wealth_scheme=scheme, runner=runner),
        }

        reports, rows, errors = {}, [], []
        for name in names:
            self.stdout.write(f'Running {name} ({paths} paths, dt={dt:g})')
            try:
                with self.stage(name):
                    report = checks[name](seeds[name])
            except PortfolioError as exc:
                errors.append(exc)
                rows.append({'name': name, 'paths': paths, 'dt': dt, 'seed': seeds[name], 'passed': False,
                             'error': f'{type(exc).__name__}: {exc}'})
                self.stdout.write(self.style.ERROR(f'{name}: {exc}'))
                continue
            reports[name] = report
            rows.append(report.to_dict())
            self.output(write_json(self.path(f'check_{name}.json'), report.to_dict()))
            style = self.style.SUCCESS if report.passed else self.style.WARNING
            self.stdout.write(style(
                f"{name}: mean={report.mean:.6g} stderr={report.stderr:.2g} -> {'pass' if report.passed else 'FAIL'}"
            ))

        overview = {
            'checks': names,
            't': t,
            'x': x,
            'v': v,
            'c_disc': c_disc,
            'Lambda': float(surface.at(t, x)),
            'calibration': calibration,
            'passed': not errors and all(r.passed for r in reports.values()),
        }
        if 'direct' in reports and 'weighted' in reports:
            overview['estimator_agreement'] = estimators_agree(reports['direct'], reports['weighted'])
        if solver.m_clamp is not None:
            hits = sum(r.extra.get('clamp_activations', 0) for r in reports.values())
            overview['clamp_activations'] = {'grid': surface.meta['clamp_activations'], 'monte_carlo': hits}

        with self.stage('export'):
            self.output(export_summary(rows, self.path('summary.csv')))
            self.output(write_json(self.path('verify.json'), overview))
        if errors:
            raise errors[0]
