"""Eccezioni del laboratorio.

Le violazioni di schema della configurazione restano ``ValidationError`` di Django
(sollevate dai form); tutto ciò che accade durante il calcolo deriva da ``LabError``.
"""


class LabError(Exception):
    """Errore di esecuzione (exit code 1 sui comandi)."""


class InvalidMeasure(LabError, ValueError):
    pass


class NotNormalized(InvalidMeasure):
    pass


class HilbertConvergenceError(LabError):
    pass


class KernelDiagonalError(LabError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class BetaBoundError(LabError):
    pass


class CflViolation(LabError):
    """Passo temporale fisso oltre il limite di stabilità."""

    def __init__(self, dt, bound, t=None):
        self.dt = dt
        self.bound = bound
        self.t = t
        where = f" a t={t:.6g}" if t is not None else ""
        super().__init__(f"violazione CFL{where}: dt={dt:.6g} > limite {bound:.6g}")


class SchemeBreakdown(LabError):
    pass


class StepFailure(LabError):
    def __init__(self, message, t=None):
        self.t = t
        if t is not None:
            message = f"{message} (t={t:.6g})"
        super().__init__(message)


class PreconditionError(LabError):
    pass


class ConfigError(LabError):
    """Configurazione formalmente valida ma semanticamente inutilizzabile (exit code 2)."""
