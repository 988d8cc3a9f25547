# laboratorio/management/commands/simulate.py
from django.core.management.base import CommandError

from laboratorio.runner import run_simulate

from ._base import EXIT_SCHEMA, LabCommand


def _barrier(text):
    """'R0,eps' oppure 'R0,hard'"""
    parts = [p.strip() for p in text.split(',')]
    try:
        if len(parts) == 2 and parts[1] == 'hard':
            return {'R0': float(parts[0]), 'hard': True}
        if len(parts) == 2:
            return {'R0': float(parts[0]), 'eps': float(parts[1])}
    except ValueError:
        pass
    raise CommandError(f"--barrier: atteso 'R0,eps' o 'R0,hard', ricevuto {text!r}", returncode=EXIT_SCHEMA)


def _spike(text):
    """'lambda0,a-spec' (a-spec: constant | linear(v) | sqrt(k))"""
    head, _, a_spec = text.partition(',')
    try:
        return {'lambda0': float(head), 'a': a_spec.strip() or 'constant'}
    except ValueError:
        raise CommandError(f"--spike: atteso 'lambda0,a', ricevuto {text!r}", returncode=EXIT_SCHEMA)


class Command(LabCommand):
    help = "Simula il sistema di particelle (Eulero-Maruyama, repliche indipendenti)"
    command_name = 'simulate'

    def add_command_arguments(self, parser):
        parser.add_argument('--n', type=int, help="numero di particelle")
        parser.add_argument('--dt', type=float, help="passo temporale")
        parser.add_argument('--t-end', type=float, help="tempo finale")
        parser.add_argument('--replicas', type=int, help="repliche indipendenti")
        parser.add_argument('--kernel', help="nucleo: dyson | quadratic(eps) | gaussian | wishart")
        parser.add_argument('--drift', help="drift: zero | constant(v) | linear(k) | sign | ...")
        parser.add_argument('--eta', type=float, help="rapporto di Wishart (attiva il rumore moltiplicativo)")
        parser.add_argument('--barrier', help="barriera 'R0,eps' (penalizzata) o 'R0,hard'")
        parser.add_argument('--spike', help="spike 'lambda0,a' con a = constant | linear(v) | sqrt(k)")
        parser.add_argument('--moments-only', action='store_true', help="registra solo i momenti")

    def command_overrides(self, options):
        return {
            'sde.n': options.get('n'),
            'sde.dt': options.get('dt'),
            'sde.t_end': options.get('t_end'),
            'sde.replicas': options.get('replicas'),
            'sde.eta': options.get('eta'),
            'sde.moments_only': True if options.get('moments_only') else None,
            'sde.barrier': _barrier(options['barrier']) if options.get('barrier') else None,
            'sde.spike': _spike(options['spike']) if options.get('spike') else None,
            'kernel.name': options.get('kernel'),
            'kernel.drift': options.get('drift'),
        }

    def execute_run(self, config, out, options):
        return run_simulate(config, out)
