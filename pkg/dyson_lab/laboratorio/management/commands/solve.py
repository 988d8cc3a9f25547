# laboratorio/management/commands/solve.py
from laboratorio.runner import run_solve
from laboratorio.solvers import FORMS

from ._base import LabCommand, float_list


class Command(LabCommand):
    help = "Risolve l'equazione di campo medio (forme cdf, density, coupled, wishart)"
    command_name = 'solve'

    def add_command_arguments(self, parser):
        parser.add_argument('--form', choices=FORMS, help="forma dell'equazione")
        parser.add_argument('--t-end', type=float, help="tempo finale")
        parser.add_argument('--kernel', help="nucleo: dyson | quadratic(eps) | gaussian | wishart")
        parser.add_argument('--drift', help="drift: zero | constant(v) | linear(k) | sign | smoothed_sign(eta)")
        parser.add_argument('--viscosity', type=float, help="viscosità artificiale")
        parser.add_argument('--sigma', help="sigma(m): one | constant(s) | identity")
        parser.add_argument('--eta', type=float, help="rapporto di Wishart")
        parser.add_argument('--cfl', type=float, help="frazione del limite di stabilità")
        parser.add_argument('--sample-times', help="tempi di campionamento, separati da virgole")

    def command_overrides(self, options):
        return {
            'pde.form': options.get('form'),
            'pde.t_end': options.get('t_end'),
            'pde.viscosity': options.get('viscosity'),
            'pde.sigma': options.get('sigma'),
            'pde.eta': options.get('eta'),
            'pde.cfl': options.get('cfl'),
            'pde.sample_times': float_list(options['sample_times']) if options.get('sample_times') else None,
            'kernel.name': options.get('kernel'),
            'kernel.drift': options.get('drift'),
        }

    def execute_run(self, config, out, options):
        return run_solve(config, out)
