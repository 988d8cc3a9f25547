# laboratorio/management/commands/sweep.py
from laboratorio.forms import SWEEP_COMMANDS
from laboratorio.runner import run_sweep

from ._base import LabCommand


class Command(LabCommand):
    help = "Prodotto cartesiano sugli assi di sweep.axes, job concorrenti, sweep.csv/sweep.xlsx aggregati"
    command_name = 'sweep'

    def add_command_arguments(self, parser):
        parser.add_argument('--target', choices=SWEEP_COMMANDS, help="comando eseguito per ogni punto")

    def command_overrides(self, options):
        return {'sweep.command': options.get('target')}

    def execute_run(self, config, out, options):
        return run_sweep(config, out, options.get('jobs'))
