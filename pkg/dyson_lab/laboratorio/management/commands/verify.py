# laboratorio/management/commands/verify.py
from laboratorio.runner import run_verify

from ._base import LabCommand


class Command(LabCommand):
    help = "Verifica identità e stime su flussi salvati (exit 3 se un controllo fallisce)"
    command_name = 'verify'

    def add_command_arguments(self, parser):
        parser.add_argument('inputs', nargs='*', help="cartelle prodotte da solve")
        parser.add_argument('--checks', help="controlli separati da virgole: linf, lp, entropy, variance, w2, comparison, drift_perturbation")

    def command_overrides(self, options):
        checks = options.get('checks')
        return {'verify.checks': [c.strip() for c in checks.split(',') if c.strip()] if checks else None}

    def execute_run(self, config, out, options):
        return run_verify(config, options.get('inputs') or [], out)
