"""
Nuclei di interazione generalizzati f(x, y) e derivate c, g, beta.

* ``c(x) = f(x, x)``
* ``g(x, y) = f(x, y) + (x - y) d_y f(x, y)``
* ``beta(x, y) = (g(x, y) - c(x)) / (x - y)^2``, con ``beta(x, x) = -1/2 d_yy f(x, x)``
  (sviluppo g = c - 1/2 d_yy f (x-y)^2 + O(|x-y|^3), perché d_y g(x, x) = 0).
"""
import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import BetaBoundError, ConfigError, KernelDiagonalError
from .measure import as_field, hilbert, hilbert_field, split_operator, weighted_split_value

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
# passo per la derivata seconda sulla diagonale (rumore di arrotondamento ~ eps/step^2)
FD_STEP_2 = 1e-4
HYPOTHESIS_LATTICE = 201
DIAG_PROBE = 1e-2
DIAG_TOL = 1e-3


def _ones(a, b):
    return np.ones(np.broadcast(a, b).shape)


# =========================
# Drift
# =========================

@dataclass(frozen=True)
class DriftSpec:
    """
    ``variant``: 'lipschitz' (costante di Lipschitz ``constant``), 'singular'
    (b + C_b Id non decrescente, |b| <= ``bound``; ``left``/``right`` danno b(x-), b(x+))
    oppure 'time' (b(t, x), Lipschitz in x).
    """
    variant: str
    func: object
    constant: float = 0.0
    bound: float = math.inf
    left: object = None
    right: object = None
    name: str = 'custom'

    def __post_init__(self):
        if self.variant not in ('lipschitz', 'singular', 'time'):
            raise ConfigError(f"variante di drift sconosciuta: {self.variant!r}")

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        if self.variant == 'time':
            out = self.func(t, x)
        else:
            out = self.func(x)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def limits(self, x, t=0.0):
        """(b(x-), b(x+)); coincidono dove b è continua."""
        if self.variant == 'singular' and self.left is not None:
            x = np.asarray(x, dtype=float)
            return np.asarray(self.left(x), dtype=float), np.asarray(self.right(x), dtype=float)
        v = self(x, t)
        return v, v

    @property
    def is_zero(self):
        return self.name == 'zero'


def _zero(x):
    return np.zeros_like(x)


ZERO_DRIFT = DriftSpec('lipschitz', _zero, 0.0, 0.0, name='zero')


def constant_drift(v):
    return DriftSpec('lipschitz', lambda x: np.full_like(x, v), 0.0, abs(v), name=f'constant({v:g})')


def linear_drift(k):
    """b(x) = -k x."""
    return DriftSpec('lipschitz', lambda x: -k * x, abs(k), name=f'linear({k:g})')


def sign_drift():
    return DriftSpec(
        'singular', np.sign, constant=1.0, bound=1.0,
        left=lambda x: np.where(x <= 0, -1.0, 1.0),
        right=lambda x: np.where(x < 0, -1.0, 1.0),
        name='sign',
    )


def smoothed_sign_drift(eta):
    if not eta > 0:
        raise ConfigError("smoothed_sign richiede eta > 0")
    return DriftSpec('lipschitz', lambda x: np.clip(x / eta, -1.0, 1.0), 1.0 / eta, 1.0,
                     name=f'smoothed_sign({eta:g})')


def time_linear_drift(v):
    """b(t, x) = v t."""
    return DriftSpec('time', lambda t, x: np.full_like(x, v * t), 0.0, name=f'time_linear({v:g})')


_CALL = re.compile(r'^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$')


def _parse_call(text):
    m = _CALL.match(text or '')
    if not m:
        raise ConfigError(f"specifica non riconosciuta: {text!r}")
    name, args = m.group(1), m.group(2)
    try:
        values = [float(a) for a in args.split(',')] if args and args.strip() else []
    except ValueError:
        raise ConfigError(f"argomenti non numerici in {text!r}")
    return name, values


def _arity(name, values, n):
    if len(values) != n:
        raise ConfigError(f"{name} richiede {n} argomenti, ricevuti {len(values)}")


def parse_drift(text):
    """zero | constant(v) | linear(k) | sign | smoothed_sign(eta) | time_linear(v)"""
    if isinstance(text, DriftSpec):
        return text
    name, values = _parse_call(text or 'zero')
    if name == 'zero':
        _arity(name, values, 0)
        return ZERO_DRIFT
    if name == 'constant':
        _arity(name, values, 1)
        return constant_drift(values[0])
    if name == 'linear':
        _arity(name, values, 1)
        return linear_drift(values[0])
    if name == 'sign':
        _arity(name, values, 0)
        return sign_drift()
    if name == 'smoothed_sign':
        _arity(name, values, 1)
        return smoothed_sign_drift(values[0])
    if name == 'time_linear':
        _arity(name, values, 1)
        return time_linear_drift(values[0])
    raise ConfigError(f"drift sconosciuto: {name!r}")


# =========================
# Nucleo di interazione
# =========================

def _fd_dx(f):
    s = FD_STEP
    return lambda x, y: (f(x + s, y) - f(x - s, y)) / (2 * s)


def _fd_dy(f):
    s = FD_STEP
    return lambda x, y: (f(x, y + s) - f(x, y - s)) / (2 * s)


def _fd_dxdy(f):
    s = FD_STEP
    return lambda x, y: (f(x + s, y + s) - f(x + s, y - s) - f(x - s, y + s) + f(x - s, y - s)) / (4 * s * s)


def _fd_dyy(f):
    s = FD_STEP_2
    return lambda x, y: (f(x, y + s) - 2 * f(x, y) + f(x, y - s)) / (s * s)


@dataclass(frozen=True)
class InteractionKernel:
    """
    f(x, y) con le derivate usate da c, g, beta. Le derivate mancanti sono
    differenze finite centrate (passo ``FD_STEP``). ``C0=None``: costante stimata
    da ``validate_hypotheses`` invece che dichiarata.
    """
    f: object
    df_dx: object = None
    df_dy: object = None
    df_dxdy: object = None
    df_dyy: object = None
    drift: DriftSpec = ZERO_DRIFT
    C0: float = None
    name: str = 'custom'
    pure: bool = False
    box: tuple = None

    def __post_init__(self):
        if self.df_dx is None:
            object.__setattr__(self, 'df_dx', _fd_dx(self.f))
        if self.df_dy is None:
            object.__setattr__(self, 'df_dy', _fd_dy(self.f))
        if self.df_dxdy is None:
            object.__setattr__(self, 'df_dxdy', _fd_dxdy(self.f))
        if self.df_dyy is None:
            object.__setattr__(self, 'df_dyy', _fd_dyy(self.f))

    def with_drift(self, drift):
        return InteractionKernel(self.f, self.df_dx, self.df_dy, self.df_dxdy, self.df_dyy,
                                 drift=drift, C0=self.C0, name=self.name, pure=self.pure, box=self.box)

    # ---- quantità derivate

    def c(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.f(x, x), dtype=float) * np.ones_like(x)

    def g(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.pure:
            return np.ones(x.shape)
        return self.f(x, y) + (x - y) * self.df_dy(x, y)

    def beta(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.pure:
            return np.zeros(x.shape)
        d = x - y
        diag = np.abs(d) < 1e-12 * (1.0 + np.abs(x))
        safe = np.where(diag, 1.0, d)
        out = (self.g(x, y) - self.c(x)) / safe ** 2
        return np.where(diag, self.beta_diagonal(x), out)

    def beta_diagonal(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.asarray(self.df_dyy(x, x), dtype=float) * np.ones_like(x)

    def weight(self):
        """(peso, peso diagonale) per ``split_operator``; None per il nucleo di Dyson."""
        if self.pure:
            return None, None
        return self.g, self.c


def derive_c_g_beta(k, check_points=None):
    """
    Restituisce (c, g, beta) come funzioni valutabili sulla griglia. Il valore diagonale
    di beta viene confrontato con la media simmetrica a distanza ``DIAG_PROBE``.
    """
    pts = np.linspace(-1.0, 1.0, 11) if check_points is None else np.asarray(check_points, dtype=float)
    if not k.pure:
        d = DIAG_PROBE
        b0 = k.beta_diagonal(pts)
        near = 0.5 * (k.beta(pts, pts + d) + k.beta(pts, pts - d))
        err = np.abs(b0 - near)
        bad = err > DIAG_TOL * (1.0 + np.abs(b0))
        if np.any(bad):
            i = int(np.argmax(err))
            raise KernelDiagonalError(
                f"beta(x,x) = {b0[i]:.6g} non coerente con {near[i]:.6g} in x={pts[i]:.6g}",
                witness=float(pts[i]))
    return k.c, k.g, k.beta


# ---- nuclei predefiniti

def dyson_kernel(drift=ZERO_DRIFT):
    return InteractionKernel(
        f=_ones, df_dx=lambda x, y: 0.0 * _ones(x, y), df_dy=lambda x, y: 0.0 * _ones(x, y),
        df_dxdy=lambda x, y: 0.0 * _ones(x, y), df_dyy=lambda x, y: 0.0 * _ones(x, y),
        drift=drift, C0=1.0, name='dyson', pure=True)


def quadratic_kernel(eps, drift=ZERO_DRIFT):
    """f = 1 + eps (x-y)^2: g = 1 - eps (x-y)^2, beta = -eps."""
    return InteractionKernel(
        f=lambda x, y: 1.0 + eps * (x - y) ** 2,
        df_dx=lambda x, y: 2 * eps * (x - y),
        df_dy=lambda x, y: -2 * eps * (x - y),
        df_dxdy=lambda x, y: -2 * eps * _ones(x, y),
        df_dyy=lambda x, y: 2 * eps * _ones(x, y),
        drift=drift, name=f'quadratic({eps:g})')


def gaussian_kernel(drift=ZERO_DRIFT):
    """f = exp(-(x-y)^2); g(x, x+1) = 3/e."""
    def f(x, y):
        return np.exp(-(x - y) ** 2)
    return InteractionKernel(
        f=f,
        df_dx=lambda x, y: -2 * (x - y) * f(x, y),
        df_dy=lambda x, y: 2 * (x - y) * f(x, y),
        df_dxdy=lambda x, y: (2 - 4 * (x - y) ** 2) * f(x, y),
        df_dyy=lambda x, y: (4 * (x - y) ** 2 - 2) * f(x, y),
        drift=drift, name='gaussian')


def wishart_kernel(drift=ZERO_DRIFT):
    """f(x, y) = x: c = g = x, beta = 0 (moltiplica A0 per x)."""
    return InteractionKernel(
        f=lambda x, y: x * _ones(x, y),
        df_dx=_ones,
        df_dy=lambda x, y: 0.0 * _ones(x, y),
        df_dxdy=lambda x, y: 0.0 * _ones(x, y),
        df_dyy=lambda x, y: 0.0 * _ones(x, y),
        drift=drift, name='wishart')


def table_kernel(path, drift=ZERO_DRIFT):
    """
    f tabulata su griglia rettangolare: CSV con colonne ``x,y,f`` (una riga per coppia).
    Interpolazione bicubica; le derivate sono quelle analitiche della spline.
    """
    path = Path(path)
    rows = []
    with open(path, newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {'x', 'y', 'f'} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: servono le colonne x,y,f")
        for r in reader:
            rows.append((float(r['x']), float(r['y']), float(r['f'])))
    if not rows:
        raise ConfigError(f"{path}: tabella vuota")
    data = np.array(rows)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    if len(xs) * len(ys) != len(data) or len(xs) < 4 or len(ys) < 4:
        raise ConfigError(f"{path}: la tabella deve coprire una griglia completa di almeno 4x4 punti")
    table = np.full((len(xs), len(ys)), np.nan)
    table[np.searchsorted(xs, data[:, 0]), np.searchsorted(ys, data[:, 1])] = data[:, 2]
    spline = RectBivariateSpline(xs, ys, table, kx=3, ky=3)

    def ev(dx, dy):
        def fn(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
            return spline.ev(x.ravel(), y.ravel(), dx=dx, dy=dy).reshape(x.shape)
        return fn

    return InteractionKernel(
        f=ev(0, 0), df_dx=ev(1, 0), df_dy=ev(0, 1), df_dxdy=ev(1, 1), df_dyy=ev(0, 2),
        drift=drift, name=f'table({path.name})',
        box=(float(xs[0]), float(xs[-1]), float(ys[0]), float(ys[-1])))


def parse_kernel(spec, drift=None):
    """
    ``spec``: 'dyson' | 'quadratic(eps)' | 'gaussian' | 'wishart' oppure
    ``{"table": "percorso.csv"}``.
    """
    drift = ZERO_DRIFT if drift is None else parse_drift(drift)
    if isinstance(spec, InteractionKernel):
        return spec.with_drift(drift)
    if isinstance(spec, dict):
        if set(spec) != {'table'}:
            raise ConfigError(f"nucleo tabulato: chiavi attese ['table'], trovate {sorted(spec)}")
        return table_kernel(spec['table'], drift)
    name, values = _parse_call(spec or 'dyson')
    if name == 'dyson':
        _arity(name, values, 0)
        return dyson_kernel(drift)
    if name == 'quadratic':
        _arity(name, values, 1)
        return quadratic_kernel(values[0], drift)
    if name == 'gaussian':
        _arity(name, values, 0)
        return gaussian_kernel(drift)
    if name == 'wishart':
        _arity(name, values, 0)
        return wishart_kernel(drift)
    raise ConfigError(f"nucleo sconosciuto: {name!r}")


# =========================
# Operatori K, L, B
# =========================

def eval_K(k, m, x):
    """K[m](x) = int (f(x,y) - f(x,x))/(x-y) m(dy) + f(x,x) H[m](x)."""
    x = float(x)
    cx = float(k.c(np.array([x]))[0])
    if k.pure:
        return cx * hilbert(m, x)
    y = m.x
    d = x - y
    diag = np.abs(d) < 1e-12 * m.h
    safe = np.where(diag, 1.0, d)
    reg = np.where(diag, -k.df_dy(np.full_like(y, x), y), (k.f(np.full_like(y, x), y) - cx) / safe)
    return float(m.h * np.sum(reg * m.values)) + cx * hilbert(m, x)


def regular_matrix(k, grid):
    """Matrice R con (R m)_i = h sum_j (f(x_i,x_j) - c_i)/(x_i-x_j) m_j; diagonale -d_y f(x_i,x_i)."""
    x = grid.nodes
    X, Y = np.meshgrid(x, x, indexing='ij')
    D = X - Y
    np.fill_diagonal(D, 1.0)
    R = (k.f(X, Y) - k.c(x)[:, None]) / D
    np.fill_diagonal(R, -k.df_dy(x, x))
    return grid.h * R


def K_field(k, m, R=None):
    """K[m] sui nodi; ``R`` è la matrice regolare precalcolata (None per f costante)."""
    H = np.asarray(hilbert_field(m).values)
    c = k.c(m.x)
    if k.pure:
        return c * H
    if R is None:
        R = regular_matrix(k, m.grid)
    return R @ np.asarray(m.values) + c * H


def eval_L(k, u, x, delta=None):
    """L[u](x) = int g(x,y)(u(x)-u(y))/(x-y)^2 dy con la stessa divisione di ``half_laplacian``."""
    weight, diag = k.weight()
    return weighted_split_value(u, x, delta, weight=weight, diag_weight=diag)


def L_operator(k, grid, delta=None):
    weight, diag = k.weight()
    return split_operator(grid, delta, weight=weight, diag_weight=diag)


@dataclass(frozen=True)
class BetaKernel:
    """beta(x, y) integrata in y su ``y_box``; fuori dalla scatola vale 0."""
    func: object
    y_box: tuple
    name: str = 'custom'
    l1_limit: float = math.inf

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        a, b = self.y_box
        inside = (y >= a) & (y <= b)
        return np.where(inside, self.func(x, y), 0.0)

    def quadrature(self, h):
        a, b = self.y_box
        n = max(1, int(math.ceil((b - a) / h - 1e-9)))
        hq = (b - a) / n
        return a + hq * (np.arange(n) + 0.5), np.full(n, hq)

    def l1_norms(self, x, h):
        """||beta(x,.)||_{L^1} nei punti x."""
        y, w = self.quadrature(h)
        return np.abs(self(np.asarray(x)[:, None], y[None, :])) @ w

    def linf_l1(self, x, h):
        return float(np.max(self.l1_norms(x, h)))


def box_beta(eps, a, b):
    """beta = -eps su y in [a, b]."""
    return BetaKernel(lambda x, y: np.full(np.broadcast(x, y).shape, -eps), (a, b), name=f'box({eps:g},{a:g},{b:g})')


def kernel_beta(k, a, b):
    """La beta derivata da un nucleo, troncata alla scatola [a, b] in y."""
    return BetaKernel(k.beta, (a, b), name=f'beta[{k.name}]')


def parse_beta(spec):
    """'box(eps,a,b)' | 'zero' | {'kernel': <nucleo>, 'box': [a, b]}"""
    if spec is None or isinstance(spec, BetaKernel):
        return spec
    if isinstance(spec, dict):
        if set(spec) != {'kernel', 'box'}:
            raise ConfigError(f"beta: chiavi attese ['box', 'kernel'], trovate {sorted(spec)}")
        a, b = spec['box']
        return kernel_beta(parse_kernel(spec['kernel']), float(a), float(b))
    name, values = _parse_call(spec)
    if name == 'zero':
        return None
    if name == 'box':
        _arity(name, values, 3)
        return box_beta(*values)
    raise ConfigError(f"beta sconosciuta: {name!r}")


def eval_B(beta, u, x, h=None):
    """B(x; u) = int beta(x, y) u(y) dy (u oltre la griglia vale i suoi limiti)."""
    f = as_field(u)
    h = f.h if h is None else h
    if beta is None:
        return 0.0
    l1 = beta.linf_l1(np.array([float(x)]), h)
    if not np.isfinite(l1) or l1 > beta.l1_limit:
        raise BetaBoundError(f"||beta(x,.)||_L1 = {l1:.6g} oltre il limite {beta.l1_limit:.6g}")
    y, w = beta.quadrature(h)
    vals = f.evaluate(y)
    return float(np.sum(beta(np.full_like(y, float(x)), y) * vals * w))


def B_lipschitz_certificate(beta, x, h):
    """Costante C con |B(x;v) - B(x;w)| <= C ||v - w||_inf (sup dei ||beta(x,.)||_L1)."""
    return beta.linf_l1(x, h)


def B_operator(beta, grid):
    """
    (W, P, p) tali che B(x_i; u) = (W @ (P @ u + p))_i, con P l'interpolazione lineare
    sui nodi di quadratura e p il contributo dei limiti 0 e 1.
    """
    x = grid.nodes
    y, w = beta.quadrature(grid.h)
    W = beta(x[:, None], y[None, :]) * w[None, :]
    l1 = float(np.max(np.abs(W).sum(axis=1)))
    if not np.isfinite(l1) or l1 > beta.l1_limit:
        raise BetaBoundError(f"||beta||_{{L^inf L^1}} = {l1:.6g} oltre il limite {beta.l1_limit:.6g}")
    P, p = interpolation_matrix(grid, y, 0.0, 1.0)
    return W, P, p


def interpolation_matrix(grid, y, left, right):
    """P, p con (P @ u + p) = interpolazione lineare di u in y, limiti oltre la griglia."""
    x = grid.nodes
    n = grid.n
    P = np.zeros((len(y), n))
    p = np.zeros(len(y))
    pos = (np.asarray(y) - x[0]) / grid.h
    for q, s in enumerate(pos):
        if s <= 0:
            if s < 0:
                p[q] = left
            else:
                P[q, 0] = 1.0
        elif s >= n - 1:
            if s > n - 1:
                p[q] = right
            else:
                P[q, n - 1] = 1.0
        else:
            j = int(math.floor(s))
            th = s - j
            P[q, j] = 1.0 - th
            P[q, j + 1] = th
    return P, p


# =========================
# Validazione delle ipotesi
# =========================

@dataclass
class HypothesisReport:
    hypf: dict = field(default_factory=dict)
    comparison: dict = field(default_factory=dict)
    bdef: dict = field(default_factory=dict)
    drift_monotone: dict = field(default_factory=dict)
    lattice: int = HYPOTHESIS_LATTICE

    @property
    def passed(self):
        parts = [self.hypf, self.comparison, self.drift_monotone]
        if self.bdef:
            parts.append(self.bdef)
        return all(p.get('passed', False) for p in parts)

    def as_dict(self):
        return {
            'hypf': self.hypf, 'comparison': self.comparison, 'bdef': self.bdef,
            'drift_monotone': self.drift_monotone, 'lattice': self.lattice, 'passed': self.passed,
        }


def validate_hypotheses(k, box, beta=None, lattice=HYPOTHESIS_LATTICE):
    """Verifica campionata su ``lattice x lattice`` punti di ``box = (a, b)``; solo rapporto."""
    a, b = box
    s = np.linspace(a, b, lattice)
    X, Y = np.meshgrid(s, s, indexing='ij')
    report = HypothesisReport(lattice=lattice)

    # (hypf): inf c >= 1/C0, sup|f| + sup|d1 f| + sup|d12 f| <= C0
    c = k.c(s)
    inf_c = float(c.min())
    sup_sum = float(np.max(np.abs(k.f(X, Y))) + np.max(np.abs(k.df_dx(X, Y)))
                    + np.max(np.abs(k.df_dxdy(X, Y))))
    needed = max(sup_sum, 1.0 / inf_c) if inf_c > 0 else math.inf
    declared = k.C0
    ok = math.isfinite(needed) and (declared is None or needed <= declared * (1 + 1e-12))
    report.hypf = {
        'passed': bool(ok), 'inf_c': inf_c, 'sup_sum': sup_sum, 'C0': needed,
        'declared_C0': declared, 'witness': float(s[int(np.argmin(c))]),
    }

    # (hyp:fcomp): g >= 0
    G = k.g(X, Y)
    i, j = np.unravel_index(int(np.argmin(G)), G.shape)
    report.comparison = {
        'passed': bool(G[i, j] >= 0), 'min_g': float(G[i, j]),
        'witness': [float(s[i]), float(s[j])],
    }

    # (Bdef): beta, d_x beta, d_xx beta in L^inf_x(L^1_y)
    if beta is not None:
        h = (b - a) / (lattice - 1)
        step = FD_STEP_2 * 10
        norms = {}
        for name, fn in (
            ('beta', lambda x: beta.l1_norms(x, h)),
            ('dx_beta', lambda x: _l1_of(beta, x, h, lambda xx, yy: (beta(xx + step, yy) - beta(xx - step, yy)) / (2 * step))),
            ('dxx_beta', lambda x: _l1_of(beta, x, h, lambda xx, yy: (beta(xx + step, yy) - 2 * beta(xx, yy) + beta(xx - step, yy)) / step ** 2)),
        ):
            norms[name] = float(np.max(fn(s)))
        finite = all(np.isfinite(v) for v in norms.values())
        report.bdef = dict(norms, passed=bool(finite and norms['beta'] <= beta.l1_limit))

    # drift: (b(x)-b(y))(x-y) >= -C_b (x-y)^2 per 'singular', Lipschitz altrimenti
    drift = k.drift
    bx = drift(s)
    dB = bx[:, None] - bx[None, :]
    dX = s[:, None] - s[None, :]
    off = np.abs(dX) > 0
    if drift.variant == 'singular':
        ratio = np.where(off, -(dB * dX) / np.where(off, dX ** 2, 1.0), -np.inf)
        needed_cb = max(float(ratio.max()), 0.0)
        bounded = float(np.max(np.abs(bx)))
        ok = needed_cb <= drift.constant + 1e-12 and bounded <= drift.bound + 1e-12
        report.drift_monotone = {
            'passed': bool(ok), 'variant': drift.variant, 'C_b': drift.constant,
            'C_b_needed': needed_cb, 'sup_b': bounded,
        }
    else:
        lip = np.where(off, np.abs(dB) / np.where(off, np.abs(dX), 1.0), 0.0)
        needed_l = float(lip.max())
        report.drift_monotone = {
            'passed': bool(needed_l <= drift.constant * (1 + 1e-6) + 1e-9), 'variant': drift.variant,
            'lipschitz': drift.constant, 'lipschitz_needed': needed_l,
        }
    logger.info("ipotesi per il nucleo %s su [%g, %g]: %s", k.name, a, b,
                'ok' if report.passed else 'non soddisfatte')
    return report


def _l1_of(beta, x, h, fn):
    y, w = beta.quadrature(h)
    return np.abs(fn(np.asarray(x)[:, None], y[None, :])) @ w
