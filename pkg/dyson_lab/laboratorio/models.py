import math

from django.core.exceptions import ValidationError
from django.db import models
from django.utils import timezone


# =========================
# Registro delle esecuzioni
# =========================

class RunQuerySet(models.QuerySet):
    def finished(self):
        return self.exclude(status=Run.STATUS_RUNNING)

    def for_config(self, config_hash):
        return self.filter(config_hash=config_hash)


class Run(models.Model):
    STATUS_RUNNING = 'running'
    STATUS_OK = 'ok'
    STATUS_FAILED = 'failed'
    STATUS_CHECKS_FAILED = 'checks_failed'
    STATUS_CHOICES = [
        (STATUS_RUNNING, 'In corso'),
        (STATUS_OK, 'Conclusa'),
        (STATUS_FAILED, 'Fallita'),
        (STATUS_CHECKS_FAILED, 'Controlli non superati'),
    ]
    COMMAND_CHOICES = [
        ('simulate', 'simulate'),
        ('solve', 'solve'),
        ('reference', 'reference'),
        ('verify', 'verify'),
        ('sweep', 'sweep'),
    ]

    command = models.CharField(max_length=20, choices=COMMAND_CHOICES)
    config_hash = models.CharField(max_length=64, db_index=True)
    config_path = models.CharField(max_length=500, blank=True)
    # fino a 2^64 - 1: non entra in un BigIntegerField
    seed = models.CharField(max_length=20, blank=True)
    convention = models.CharField(max_length=10, default='raw')
    out_dir = models.CharField(max_length=500)
    manifest_sha256 = models.CharField(max_length=64, blank=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=STATUS_RUNNING)
    exit_code = models.SmallIntegerField(null=True, blank=True)
    message = models.TextField(blank=True)
    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)

    objects = models.Manager.from_queryset(RunQuerySet)()

    class Meta:
        verbose_name = "Esecuzione"
        verbose_name_plural = "Esecuzioni"
        ordering = ['-started_at', '-id']

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} ({self.get_status_display()})"

    def clean(self):
        if self.finished_at and self.started_at and self.finished_at < self.started_at:
            raise ValidationError({"finished_at": "La fine non può precedere l'inizio."})
        if self.status != self.STATUS_RUNNING and self.exit_code is None:
            raise ValidationError({"exit_code": "Un'esecuzione conclusa richiede il codice di uscita."})

    def finish(self, status, exit_code, message='', manifest_sha256=''):
        self.status = status
        self.exit_code = exit_code
        self.message = message
        self.manifest_sha256 = manifest_sha256 or ''
        self.finished_at = timezone.now()
        self.full_clean()
        self.save(update_fields=['status', 'exit_code', 'message', 'manifest_sha256', 'finished_at'])


class CheckOutcome(models.Model):
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name='checks')
    name = models.CharField(max_length=40)
    input_path = models.CharField(max_length=1000, blank=True)
    passed = models.BooleanField(default=False)
    # null se la violazione non è finita
    worst = models.FloatField(null=True, blank=True)
    tolerance = models.JSONField(default=dict, blank=True)

    class Meta:
        verbose_name = "Esito di controllo"
        verbose_name_plural = "Esiti di controllo"
        ordering = ['run', 'id']

    def __str__(self):
        return f"{self.name}: {'ok' if self.passed else 'fallito'}"

    @classmethod
    def from_report(cls, run, where, report):
        worst = float(report.worst)
        return cls(
            run=run, name=report.name, input_path=where, passed=bool(report.passed),
            worst=worst if math.isfinite(worst) else None,
            tolerance={k: (v if not isinstance(v, float) or math.isfinite(v) else str(v))
                       for k, v in report.tolerance.items()},
        )
