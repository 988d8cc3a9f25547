# laboratorio/management/commands/_base.py
import logging

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from laboratorio.analytic import ACCEPTED_CONVENTIONS
from laboratorio.errors import ConfigError, LabError
from laboratorio.forms import load_config
from laboratorio.runner import default_out, resolve_path

logger = logging.getLogger(__name__)

# codici di uscita
EXIT_RUNTIME = 1
EXIT_SCHEMA = 2
EXIT_CHECKS = 3


def float_list(text):
    """'0.25,1' -> [0.25, 1.0]"""
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise CommandError(f"lista di numeri non valida: {text!r}", returncode=EXIT_SCHEMA)


class LabCommand(BaseCommand):
    """
    Opzioni globali (--config, --out, --seed, --jobs, --convention), caricamento del
    RunConfig, registro Run e mappatura degli errori sui codici di uscita.
    """
    command_name = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help="documento JSON di configurazione (\"schema\": 1)")
        parser.add_argument('--out', help="cartella di uscita (relativa a LAB_OUT_ROOT)")
        parser.add_argument('--seed', type=int, help="seme a 64 bit senza segno")
        parser.add_argument('--jobs', type=int, help="processi paralleli per gli sweep")
        parser.add_argument('--convention', choices=ACCEPTED_CONVENTIONS,
                            help="costanti 'raw' (libreria) o 'paper' (alias 'reduced')")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def command_overrides(self, options):
        """Sostituzioni ``{'sezione.campo': valore}`` dalle opzioni specifiche del comando."""
        return {}

    def execute_run(self, config, out, options):
        raise NotImplementedError

    # ---- registro

    def _start(self, config, out):
        if not settings.LAB_RECORD_RUNS:
            return None
        from laboratorio.models import Run

        return Run.objects.create(
            command=self.command_name, config_hash=config.hash, config_path=config.path or '',
            seed=str(config.seed), convention=config.convention, out_dir=str(out),
        )

    def _finish(self, run, status, code, message='', summary=None):
        if run is None:
            return
        run.finish(status, code, message, (summary or {}).get('manifest_sha256', ''))
        if summary and summary.get('results'):
            from laboratorio.models import CheckOutcome

            CheckOutcome.objects.bulk_create(
                [CheckOutcome.from_report(run, where, rep) for where, rep in summary['results']]
            )

    # ---- esecuzione

    def handle(self, *args, **options):
        overrides = {
            'seed': options.get('seed'),
            'convention': options.get('convention'),
        }
        overrides.update(self.command_overrides(options))
        try:
            config = load_config(options.get('config'), overrides)
        except ValidationError as exc:
            raise CommandError("configurazione non valida:\n" + "\n".join(exc.messages), returncode=EXIT_SCHEMA)
        except OSError as exc:
            raise CommandError(f"configurazione illeggibile: {exc}", returncode=EXIT_SCHEMA)

        # --out e --jobs non entrano nell'hash della configurazione
        out = resolve_path(options['out']) if options.get('out') else default_out(self.command_name, config)
        run = self._start(config, out)
        try:
            summary = self.execute_run(config, out, options)
        except (ValidationError, ConfigError) as exc:
            message = "\n".join(exc.messages) if isinstance(exc, ValidationError) else str(exc)
            self._finish(run, 'failed', EXIT_SCHEMA, message)
            raise CommandError(f"configurazione non utilizzabile: {message}", returncode=EXIT_SCHEMA)
        except LabError as exc:
            logger.error("%s fallito: %s", self.command_name, exc)
            self._finish(run, 'failed', EXIT_RUNTIME, str(exc))
            raise CommandError(f"{self.command_name} fallito: {exc}", returncode=EXIT_RUNTIME)

        if summary.get('passed') is False:
            self._finish(run, 'checks_failed', EXIT_CHECKS, summary=summary)
            for where, rep in summary.get('results', ()):
                if not rep.passed:
                    self.stdout.write(self.style.ERROR(f"{rep.name} ({where}): violazione {rep.worst:.3g}"))
            raise CommandError("controlli non superati", returncode=EXIT_CHECKS)
        if summary.get('metrics', {}).get('failed'):
            self._finish(run, 'failed', EXIT_RUNTIME, f"{summary['metrics']['failed']} job falliti", summary)
            raise CommandError(f"{summary['metrics']['failed']} job falliti, vedi {summary['manifest']}",
                               returncode=EXIT_RUNTIME)
        self._finish(run, 'ok', 0, summary=summary)
        self.stdout.write(self.style.SUCCESS(
            f"{self.command_name}: {summary['manifest']} (sha256 {summary['manifest_sha256'][:12]})"
        ))
