"""
Validazione dei documenti di configurazione (RunConfig, ``"schema": 1``).

Un form per sezione; le sottosezioni sono dichiarate in ``sections`` e validate
ricorsivamente. Le chiavi sconosciute sono errori di schema come i campi non validi.
Gli errori sono riportati come ``percorso:riga:colonna: sezione.campo: messaggio``.
"""
import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from django import forms
from django.conf import settings
from django.core.exceptions import NON_FIELD_ERRORS, ValidationError

from .analytic import ACCEPTED_CONVENTIONS, canonical_convention
from .errors import ConfigError
from .kernel import parse_beta, parse_drift, parse_kernel
from .particles import parse_apath
from .snapshots import config_hash
from .solvers import FORMS, parse_coupling, parse_sigma

SCHEMA_VERSION = 1
MAX_SEED = 2 ** 64 - 1

INITIAL_KINDS = (
    'semicircle', 'semicircles', 'dirac', 'uniform', 'gaussian', 'skewed',
    'marcenko_pastur', 'atomic', 'snapshot',
)
REFERENCE_KINDS = ('semicircle', 'marcenko_pastur', 'characteristics', 'spike')
CHECK_NAMES = ('linf', 'lp', 'entropy', 'variance', 'w2', 'comparison', 'drift_perturbation')
SWEEP_COMMANDS = ('simulate', 'solve', 'reference')


def _choices(values):
    return [(v, v) for v in values]


# ---------------------------
# Campi
# ---------------------------

class ParsedField(forms.Field):
    """
    Testo (o oggetto) interpretato da un parser del laboratorio: il valore pulito resta
    quello grezzo, il parser serve solo a rifiutare le specifiche non valide.
    """
    def __init__(self, parser, types=(str,), **kwargs):
        self.parser = parser
        self.types = types
        kwargs.setdefault('required', False)
        super().__init__(**kwargs)

    def validate(self, value):
        super().validate(value)
        if value in self.empty_values:
            return
        if not isinstance(value, self.types):
            raise ValidationError("tipo non ammesso per questa specifica", code='invalid')
        try:
            self.parser(value)
        except (ConfigError, OSError, TypeError, ValueError) as exc:
            raise ValidationError(str(exc), code='invalid')


class FloatListField(forms.Field):
    def __init__(self, length=None, positive=False, **kwargs):
        self.length = length
        self.positive = positive
        kwargs.setdefault('required', False)
        super().__init__(**kwargs)

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, (list, tuple)):
            raise ValidationError("attesa una lista di numeri", code='invalid')
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"valore non numerico nella lista: {v!r}", code='invalid')
            out.append(float(v))
        if self.length is not None and len(out) != self.length:
            raise ValidationError(f"attesi {self.length} valori, trovati {len(out)}", code='invalid')
        if self.positive and any(v <= 0 for v in out):
            raise ValidationError("i valori devono essere positivi", code='invalid')
        return out


class AxesField(forms.Field):
    """Assi di uno sweep: ``{"sezione.campo": [valori, ...]}``."""

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, dict):
            raise ValidationError("attesa una mappa percorso -> lista di valori", code='invalid')
        for path, values in value.items():
            if '.' not in path and path != 'seed':
                raise ValidationError(f"asse {path!r}: atteso un percorso 'sezione.campo'", code='invalid')
            if not isinstance(values, list) or not values:
                raise ValidationError(f"asse {path!r}: serve una lista non vuota", code='invalid')
        return value


# ---------------------------
# Form di base
# ---------------------------

class SchemaForm(forms.Form):
    """
    ``defaults`` riempie le chiavi assenti prima della validazione; ``sections`` elenca
    le sottosezioni (validate a parte da ``validate_section``).
    """
    defaults = {}
    sections = {}

    def __init__(self, data=None, **kwargs):
        self.raw_keys = set(data or ())
        if data is not None:
            data = {**self.defaults, **data}
        super().__init__(data=data, **kwargs)

    def full_clean(self):
        super().full_clean()
        if not self.is_bound:
            return
        for key in sorted(self.raw_keys - set(self.fields) - set(self.sections)):
            self.add_error(None, f"chiave sconosciuta: {key!r}")


def validate_section(form_class, data, path=''):
    """Restituisce ``(cleaned_data, errori)``; gli errori sono coppie (percorso, messaggio)."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        return None, [(path or 'config', "attesa una sezione (oggetto JSON)")]
    errors = []
    nested = {}
    for name, sub_class in form_class.sections.items():
        sub_path = f"{path}.{name}" if path else name
        if name in data and data[name] is not None:
            nested[name], sub_errors = validate_section(sub_class, data[name], sub_path)
            errors += sub_errors
        else:
            nested[name] = None
    form = form_class(data=data)
    if not form.is_valid():
        for name, messages in form.errors.items():
            where = path or 'config'
            if name != NON_FIELD_ERRORS:
                where = f"{path}.{name}" if path else name
            for msg in messages:
                errors.append((where, msg))
        return None, errors
    cleaned = dict(form.cleaned_data)
    cleaned.update(nested)
    return (None if errors else cleaned), errors


# ---------------------------
# Sezioni
# ---------------------------

class GridForm(SchemaForm):
    defaults = {'lo': -3.0, 'hi': 3.0, 'h': 0.005}

    lo = forms.FloatField()
    hi = forms.FloatField()
    h = forms.FloatField(min_value=1e-9)

    def clean(self):
        cleaned = super().clean()
        lo, hi = cleaned.get('lo'), cleaned.get('hi')
        if lo is not None and hi is not None and hi <= lo:
            self.add_error('hi', "l'estremo destro deve superare quello sinistro")
        return cleaned


class InitialForm(SchemaForm):
    """Dato iniziale della PDE (densità o CDF sulla griglia)."""
    defaults = {'kind': 'semicircle', 'center': 0.0, 'radius': 1.0}

    kind = forms.ChoiceField(choices=_choices(INITIAL_KINDS))
    center = forms.FloatField(required=False)
    radius = forms.FloatField(required=False)
    width = forms.FloatField(required=False)
    a = forms.FloatField(required=False)
    b = forms.FloatField(required=False)
    std = forms.FloatField(required=False)
    shape = forms.FloatField(required=False)
    scale = forms.FloatField(required=False)
    eta = forms.FloatField(required=False)
    centers = FloatListField()
    widths = FloatListField(positive=True)
    weights = FloatListField()
    positions = FloatListField()
    path = forms.CharField(required=False)

    # parametri obbligatori per tipo
    needs = {
        'semicircle': ('radius',),
        'semicircles': ('centers', 'widths'),
        'uniform': ('a', 'b'),
        'gaussian': ('std',),
        'skewed': ('shape', 'scale'),
        'marcenko_pastur': ('eta',),
        'atomic': ('positions', 'weights'),
        'snapshot': ('path',),
    }

    def clean(self):
        cleaned = super().clean()
        kind = cleaned.get('kind')
        for name in self.needs.get(kind, ()):
            if cleaned.get(name) in (None, '', []):
                self.add_error(name, f"obbligatorio per il dato {kind!r}")
        if self.errors:
            return cleaned
        if kind == 'semicircle' and cleaned['radius'] <= 0:
            self.add_error('radius', "il raggio deve essere positivo")
        if kind == 'dirac' and cleaned.get('width') is not None and cleaned['width'] <= 0:
            self.add_error('width', "la larghezza deve essere positiva")
        if kind == 'uniform' and cleaned['b'] <= cleaned['a']:
            self.add_error('b', "serve a < b")
        if kind == 'gaussian' and cleaned['std'] <= 0:
            self.add_error('std', "la deviazione standard deve essere positiva")
        if kind == 'skewed' and (cleaned['shape'] <= 0 or cleaned['scale'] <= 0):
            self.add_error('shape', "forma e scala devono essere positive")
        if kind == 'marcenko_pastur' and cleaned['eta'] < 1:
            self.add_error('eta', "serve eta >= 1")
        if kind == 'semicircles':
            n = len(cleaned['centers'])
            if len(cleaned['widths']) not in (1, n):
                self.add_error('widths', "una larghezza oppure una per centro")
            if cleaned.get('weights') and len(cleaned['weights']) != n:
                self.add_error('weights', "un peso per centro")
        if kind == 'atomic':
            w = cleaned['weights']
            if len(w) != len(cleaned['positions']):
                self.add_error('weights', "un peso per posizione")
            elif any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-12:
                self.add_error('weights', "i pesi devono essere non negativi e sommare a 1")
        if kind == 'snapshot' and not Path(cleaned['path']).suffix == '.csv':
            self.add_error('path', "attesa un'istantanea .csv (con sidecar .json)")
        return cleaned


class KernelForm(SchemaForm):
    # drift assente: 'zero', oppure 'linear(1)' per Wishart
    defaults = {'name': 'dyson'}

    name = ParsedField(parse_kernel, types=(str, dict))
    drift = ParsedField(parse_drift)
    beta = ParsedField(parse_beta, types=(str, dict))
    box = FloatListField(length=2)

    def clean(self):
        cleaned = super().clean()
        box = cleaned.get('box')
        if box and box[1] <= box[0]:
            self.add_error('box', "scatola vuota: serve a < b")
        return cleaned


class DtPolicyForm(SchemaForm):
    defaults = {'mode': 'adaptive'}

    mode = forms.ChoiceField(choices=_choices(('adaptive', 'fixed')))
    dt = forms.FloatField(required=False)

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('mode') == 'fixed' and not (cleaned.get('dt') or 0) > 0:
            self.add_error('dt', "la politica 'fixed' richiede dt > 0")
        return cleaned


class PenaltyForm(SchemaForm):
    """Con ``reflection_eps`` basta R0."""
    R0 = forms.FloatField()
    eps = forms.FloatField(required=False, min_value=1e-12)


class PdeForm(SchemaForm):
    defaults = {
        'form': 'density', 't_end': 1.0, 'samples': 10, 'viscosity': 0.0,
        'cfl': 0.45, 'sigma': 'one', 'coupling': 'none', 'perturbation': 1e-3,
    }
    sections = {'dt_policy': DtPolicyForm, 'penalty': PenaltyForm, 'second': InitialForm}

    form = forms.ChoiceField(choices=_choices(FORMS))
    t_end = forms.FloatField(min_value=0.0)
    sample_times = FloatListField()
    samples = forms.IntegerField(min_value=0)
    viscosity = forms.FloatField(min_value=0.0)
    delta = forms.FloatField(required=False, min_value=1e-12)
    cfl = forms.FloatField()
    sigma = ParsedField(parse_sigma)
    eta = forms.FloatField(required=False)
    coupling = ParsedField(parse_coupling)
    reflection_eps = FloatListField(positive=True)
    kappa = forms.FloatField(required=False, min_value=0.0)
    perturbation = forms.FloatField(min_value=0.0)

    def clean(self):
        cleaned = super().clean()
        cfl = cleaned.get('cfl')
        if cfl is not None and not 0 < cfl < 1:
            self.add_error('cfl', "cfl deve stare in (0, 1)")
        if cleaned.get('form') == 'wishart' and (cleaned.get('eta') is None or cleaned['eta'] < 1):
            self.add_error('eta', "Wishart richiede eta >= 1")
        t_end = cleaned.get('t_end')
        for t in cleaned.get('sample_times') or ():
            if t_end is not None and not 0 <= t <= t_end:
                self.add_error('sample_times', f"tempo {t:g} fuori da [0, t_end]")
                break
        if cleaned.get('reflection_eps') and cleaned.get('form') != 'density':
            self.add_error('reflection_eps', "la riflessione richiede la forma 'density'")
        return cleaned


class BarrierForm(SchemaForm):
    defaults = {'hard': False}

    R0 = forms.FloatField()
    eps = forms.FloatField(required=False, min_value=1e-12)
    hard = forms.BooleanField(required=False)

    def clean(self):
        cleaned = super().clean()
        if not cleaned.get('hard') and cleaned.get('eps') is None:
            self.add_error('eps', "la barriera penalizzata richiede eps")
        return cleaned


class SpikeForm(SchemaForm):
    defaults = {'a': 'constant'}

    lambda0 = forms.FloatField(min_value=1e-12)
    a = ParsedField(parse_apath)


class SdeForm(SchemaForm):
    defaults = {
        'n': 100, 'dt': 1e-3, 't_end': 1.0, 'replicas': 1, 'samples': 0,
        'moments_only': False, 'radius': 0.0, 'center': 0.0,
    }
    sections = {'barrier': BarrierForm, 'spike': SpikeForm}

    n = forms.IntegerField(min_value=1)
    dt = forms.FloatField(min_value=1e-12)
    t_end = forms.FloatField(min_value=0.0)
    replicas = forms.IntegerField(min_value=1)
    noise_scale = forms.FloatField(required=False, min_value=0.0)
    eta = forms.FloatField(required=False, min_value=1.0)
    sample_times = FloatListField()
    samples = forms.IntegerField(min_value=0)
    moments_only = forms.BooleanField(required=False)
    radius = forms.FloatField(min_value=0.0)
    center = forms.FloatField()
    positions = FloatListField()

    def clean(self):
        cleaned = super().clean()
        pos = cleaned.get('positions')
        if pos and cleaned.get('n') is not None and len(pos) != cleaned['n']:
            self.add_error('positions', f"attese {cleaned['n']} posizioni")
        t_end = cleaned.get('t_end')
        for t in cleaned.get('sample_times') or ():
            if t_end is not None and not 0 <= t <= t_end:
                self.add_error('sample_times', f"tempo {t:g} fuori da [0, t_end]")
                break
        return cleaned


class ReferenceForm(SchemaForm):
    defaults = {'kind': 'semicircle', 'times': [1.0], 'seed_radius': 0.0, 'center': 0.0,
                't_start': 0.0, 'levels': 3}

    kind = forms.ChoiceField(choices=_choices(REFERENCE_KINDS))
    times = FloatListField()
    seed_radius = forms.FloatField(min_value=0.0)
    center = forms.FloatField()
    eta = forms.FloatField(required=False)
    lambda0 = forms.FloatField(required=False)
    t_start = forms.FloatField(min_value=0.0)
    levels = forms.IntegerField(min_value=1, max_value=6)

    def clean(self):
        cleaned = super().clean()
        kind = cleaned.get('kind')
        if kind == 'marcenko_pastur' and (cleaned.get('eta') is None or cleaned['eta'] < 1):
            self.add_error('eta', "Marcenko-Pastur richiede eta >= 1")
        if kind == 'spike' and not (cleaned.get('lambda0') or 0) > 0:
            self.add_error('lambda0', "serve lambda0 > 0")
        if kind in ('semicircle', 'characteristics') and not cleaned.get('times'):
            self.add_error('times', "serve almeno un tempo")
        return cleaned


class VerifyForm(SchemaForm):
    defaults = {'checks': ['linf', 'lp', 'entropy']}

    checks = forms.MultipleChoiceField(choices=_choices(CHECK_NAMES))
    inputs = forms.JSONField(required=False)
    C = forms.FloatField(required=False, min_value=0.0)
    t_min = forms.FloatField(required=False, min_value=0.0)
    t_range = FloatListField(length=2)
    drift_k = forms.FloatField(required=False)
    p = forms.FloatField(required=False, min_value=1.0)
    slack = forms.FloatField(required=False, min_value=0.0)
    # drift_perturbation: ||b - b'||_inf e costante di Lipschitz C
    drift_gap = forms.FloatField(required=False, min_value=0.0)
    rate = forms.FloatField(required=False, min_value=0.0)

    def clean(self):
        cleaned = super().clean()
        if 'drift_perturbation' in (cleaned.get('checks') or ()):
            for name in ('drift_gap', 'rate'):
                if cleaned.get(name) is None:
                    self.add_error(name, "obbligatorio per il controllo 'drift_perturbation'")
        return cleaned

    def clean_inputs(self):
        value = self.cleaned_data.get('inputs')
        if value in (None, ''):
            return []
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValidationError("attesa una lista di cartelle")
        return value


class SweepForm(SchemaForm):
    defaults = {'command': 'solve'}

    command = forms.ChoiceField(choices=_choices(SWEEP_COMMANDS))
    axes = AxesField()


class RunConfigForm(SchemaForm):
    sections = {
        'grid': GridForm, 'initial': InitialForm, 'kernel': KernelForm, 'pde': PdeForm,
        'sde': SdeForm, 'reference': ReferenceForm, 'verify': VerifyForm, 'sweep': SweepForm,
    }

    schema = forms.IntegerField()
    label = forms.CharField(required=False)
    seed = forms.IntegerField(required=False, min_value=0, max_value=MAX_SEED)
    convention = forms.ChoiceField(required=False, choices=_choices(ACCEPTED_CONVENTIONS))
    out = forms.CharField(required=False)
    jobs = forms.IntegerField(required=False, min_value=1)

    def clean_schema(self):
        value = self.cleaned_data['schema']
        if value != SCHEMA_VERSION:
            raise ValidationError(f"versione di schema non supportata: {value} (attesa {SCHEMA_VERSION})")
        return value


# ---------------------------
# Caricamento
# ---------------------------

@dataclass
class RunConfig:
    document: dict
    cleaned: dict
    path: str = None
    overrides: dict = field(default_factory=dict)

    def section(self, name):
        return self.cleaned.get(name) or validate_section(RunConfigForm.sections[name], {}, name)[0]

    @property
    def seed(self):
        value = self.cleaned.get('seed')
        return 0 if value is None else int(value)

    @property
    def convention(self):
        return canonical_convention(self.cleaned.get('convention') or settings.LAB_CONVENTION)

    @property
    def hash(self):
        return config_hash(self.document)


def _anchor(text, dotted):
    """Riga e colonna della chiave più interna di ``dotted`` nel testo (1, 1 se assente)."""
    pos = 0
    found = None
    for key in dotted.split('.'):
        at = text.find(f'"{key}"', pos)
        if at < 0:
            break
        found = pos = at
    if found is None:
        return 1, 1
    line = text.count('\n', 0, found) + 1
    col = found - (text.rfind('\n', 0, found) + 1) + 1
    return line, col


def read_document(path):
    """JSON del file; gli errori di sintassi diventano ``ValidationError`` con percorso:riga:colonna."""
    text = Path(path).read_text(encoding='utf-8')
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: JSON non valido: {exc.msg}")


def set_path(document, dotted, value):
    """Imposta ``document[a][b] = value`` per ``dotted = 'a.b'`` creando le sezioni mancanti."""
    node = document
    keys = dotted.split('.')
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def validate_document(document, path=None, text=None, overrides=None):
    document = copy.deepcopy(document)
    if not isinstance(document, dict):
        raise ValidationError(f"{path or 'config'}:1:1: il documento deve essere un oggetto JSON")
    for dotted, value in (overrides or {}).items():
        if value is not None:
            set_path(document, dotted, value)
    cleaned, errors = validate_section(RunConfigForm, document)
    if errors:
        lines = []
        for where, msg in errors:
            if path and text is not None:
                line, col = _anchor(text, where)
                lines.append(f"{path}:{line}:{col}: {where}: {msg}")
            else:
                lines.append(f"{where}: {msg}")
        raise ValidationError(lines)
    return RunConfig(document, cleaned, path=None if path is None else str(path),
                     overrides=dict(overrides or {}))


def load_config(path=None, overrides=None):
    """Documento da ``path`` (o vuoto) più le sostituzioni da riga di comando."""
    if path is None:
        return validate_document({'schema': SCHEMA_VERSION}, overrides=overrides)
    document, text = read_document(path)
    return validate_document(document, path=path, text=text, overrides=overrides)
