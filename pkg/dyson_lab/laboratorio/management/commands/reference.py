# laboratorio/management/commands/reference.py
from laboratorio.forms import REFERENCE_KINDS
from laboratorio.runner import run_reference

from ._base import LabCommand, float_list


class Command(LabCommand):
    help = "Scrive le soluzioni di riferimento (semicerchio, Marcenko-Pastur, caratteristiche, spike)"
    command_name = 'reference'

    def add_command_arguments(self, parser):
        parser.add_argument('--kind', choices=REFERENCE_KINDS, help="riferimento da calcolare")
        parser.add_argument('--times', help="tempi, separati da virgole")
        parser.add_argument('--eta', type=float, help="rapporto di Marcenko-Pastur")
        parser.add_argument('--lambda0', type=float, help="posizione iniziale dello spike")

    def command_overrides(self, options):
        return {
            'reference.kind': options.get('kind'),
            'reference.times': float_list(options['times']) if options.get('times') else None,
            'reference.eta': options.get('eta'),
            'reference.lambda0': options.get('lambda0'),
        }

    def execute_run(self, config, out, options):
        return run_reference(config, out)
