"""
Rappresentazioni delle misure e strumenti sugli integrali singolari.

Convenzioni
-----------
* Griglia uniforme centrata sulle celle: il nodo i sta in ``x0 + i*h`` e porta la
  cella ``[x_i - h/2, x_i + h/2]``; la massa è ``h * sum(values)``.
* Trasformata di Hilbert senza il fattore 1/pi:
  ``H[m](x) = p.v. int m(y) / (x - y) dy``.
* ``A0 = d/dx H`` ha simbolo ``pi*|xi|`` con la trasformata di Fourier unitaria.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .errors import HilbertConvergenceError, InvalidMeasure, NotNormalized

logger = logging.getLogger(__name__)

MASS_TOL = 1e-8
MONOTONE_TOL = 1e-12
# frazione di massa in una sola cella oltre la quale l'entropia vale -inf
ATOM_MASS = 0.999
# vicino al bordo del dominio con densità non nulla il p.v. diverge
EDGE_GUARD = 0.25


def _frozen(values):
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


# =========================
# Griglia
# =========================

@dataclass(frozen=True)
class Grid:
    x0: float
    h: float
    n: int

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidMeasure(f"passo di griglia non positivo: h={self.h}")
        if self.n < 2:
            raise InvalidMeasure(f"servono almeno 2 nodi (n={self.n})")

    @classmethod
    def covering(cls, a, b, h):
        """Griglia di celle di ampiezza h che ricopre [a, b]."""
        n = max(2, int(math.ceil((b - a) / h - 1e-9)))
        return cls(x0=a + 0.5 * h, h=h, n=n)

    @property
    def nodes(self):
        return self.x0 + self.h * np.arange(self.n)

    @property
    def edges(self):
        return self.x0 - 0.5 * self.h + self.h * np.arange(self.n + 1)

    @property
    def lo(self):
        return self.x0 - 0.5 * self.h

    @property
    def hi(self):
        return self.x0 + (self.n - 0.5) * self.h


class _OnGrid:
    @property
    def n(self):
        return len(self.values)

    @property
    def grid(self):
        return Grid(self.x0, self.h, self.n)

    @property
    def x(self):
        return self.x0 + self.h * np.arange(self.n)


# =========================
# Tipi
# =========================

@dataclass(frozen=True)
class GridDensity(_OnGrid):
    """Densità di probabilità campionata; ``tails`` sono masse esterne dichiarate (massa, posizione)."""
    x0: float
    h: float
    values: np.ndarray
    normalized: bool = True
    tails: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values))
        object.__setattr__(self, 'tails', tuple((float(w), float(p)) for w, p in self.tails))
        if not self.h > 0:
            raise InvalidMeasure(f"passo di griglia non positivo: h={self.h}")
        if self.values.ndim != 1 or self.n < 2:
            raise InvalidMeasure("una densità richiede un vettore di almeno 2 valori")
        if not np.all(np.isfinite(self.values)):
            raise InvalidMeasure("valori di densità non finiti")
        if np.any(self.values < 0):
            raise InvalidMeasure("valori di densità negativi")
        if self.normalized and abs(self.mass - 1.0) > MASS_TOL:
            raise NotNormalized(f"massa {self.mass:.12g} diversa da 1")

    @property
    def grid_mass(self):
        return float(self.h * self.values.sum())

    @property
    def mass(self):
        return self.grid_mass + sum(w for w, _ in self.tails)

    @classmethod
    def from_samples(cls, x0, h, values, normalize=True):
        values = np.clip(np.nan_to_num(np.asarray(values, dtype=float)), 0.0, None)
        if normalize:
            total = h * values.sum()
            if total <= 0:
                raise InvalidMeasure("impossibile normalizzare una densità a massa nulla")
            values = values / total
        return cls(x0=x0, h=h, values=values, normalized=normalize)

    @classmethod
    def on_grid(cls, grid, func, normalize=True):
        return cls.from_samples(grid.x0, grid.h, func(grid.nodes), normalize=normalize)

    def with_values(self, values, normalized=None):
        return GridDensity(self.x0, self.h, values,
                           normalized=self.normalized if normalized is None else normalized,
                           tails=self.tails)


@dataclass(frozen=True)
class CdfGrid(_OnGrid):
    """Funzione di ripartizione u(x) = m((-inf, x]) sui nodi, con limiti 0 e 1."""
    x0: float
    h: float
    values: np.ndarray

    left_limit = 0.0
    right_limit = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values))
        v = self.values
        if not self.h > 0 or v.ndim != 1 or len(v) < 2:
            raise InvalidMeasure("griglia della CDF non valida")
        if not np.all(np.isfinite(v)):
            raise InvalidMeasure("valori della CDF non finiti")
        if np.any(np.diff(v) < -MONOTONE_TOL):
            raise InvalidMeasure("la CDF deve essere non decrescente")
        if v[0] < -MONOTONE_TOL or v[-1] > 1.0 + MONOTONE_TOL:
            raise InvalidMeasure("la CDF deve stare in [0, 1]")

    def boundary_ok(self, tol=1e-6):
        return self.values[0] <= tol and 1.0 - self.values[-1] <= tol

    def as_field(self):
        return GridField(self.x0, self.h, self.values, left_limit=0.0, right_limit=1.0)

    def evaluate(self, x):
        return np.interp(x, self.x, self.values, left=0.0, right=1.0)


@dataclass(frozen=True)
class ParticleEnsemble:
    """Misura empirica N^-1 sum delta_{lambda_i}, posizioni strettamente crescenti."""
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'positions', _frozen(self.positions))
        p = self.positions
        if p.ndim != 1 or len(p) < 1:
            raise InvalidMeasure("un insieme di particelle richiede almeno una posizione")
        if not np.all(np.isfinite(p)):
            raise InvalidMeasure("posizioni non finite")
        if np.any(np.diff(p) <= 0):
            raise InvalidMeasure("le posizioni devono essere strettamente crescenti")

    @property
    def N(self):
        return len(self.positions)

    @classmethod
    def from_unsorted(cls, positions, gap_floor=0.0):
        """Ordina e separa le coincidenze spingendo a destra di ``gap_floor``."""
        p = np.sort(np.asarray(positions, dtype=float))
        if len(p) > 1:
            floor = gap_floor if gap_floor > 0 else np.spacing(np.max(np.abs(p)) + 1.0)
            bad = np.flatnonzero(np.diff(p) < floor)
            if bad.size:
                for i in range(bad[0] + 1, len(p)):
                    if p[i] - p[i - 1] < floor:
                        p[i] = p[i - 1] + floor
        return cls(p)

    def moment(self, k):
        return float(np.mean(self.positions ** k))


@dataclass(frozen=True)
class GridField(_OnGrid):
    """Campo senza vincoli (H[m], A0[u], velocità); i limiti valgono oltre la griglia."""
    x0: float
    h: float
    values: np.ndarray
    left_limit: float = None
    right_limit: float = None

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values))
        if not self.h > 0 or self.values.ndim != 1 or len(self.values) < 2:
            raise InvalidMeasure("griglia del campo non valida")
        if not np.all(np.isfinite(self.values)):
            raise InvalidMeasure("valori del campo non finiti")
        if self.left_limit is None:
            object.__setattr__(self, 'left_limit', float(self.values[0]))
        if self.right_limit is None:
            object.__setattr__(self, 'right_limit', float(self.values[-1]))

    def evaluate(self, x):
        return np.interp(x, self.x, self.values, left=self.left_limit, right=self.right_limit)


def as_field(obj):
    if isinstance(obj, GridField):
        return obj
    if isinstance(obj, CdfGrid):
        return obj.as_field()
    if isinstance(obj, GridDensity):
        return GridField(obj.x0, obj.h, obj.values, left_limit=0.0, right_limit=0.0)
    raise TypeError(f"tipo non supportato: {type(obj).__name__}")


# =========================
# Conversioni
# =========================

def density_to_cdf(m):
    v = m.values
    u = m.h * (np.cumsum(v) - 0.5 * v)
    for w, p in m.tails:
        u = u + w * (m.x >= p)
    u = np.maximum.accumulate(np.clip(u, 0.0, 1.0))
    return CdfGrid(m.x0, m.h, u)


def cdf_to_density(u, normalize=False):
    dens = np.clip(np.gradient(np.asarray(u.values, dtype=float), u.h), 0.0, None)
    total = u.h * dens.sum()
    if normalize and total > 0:
        return GridDensity(u.x0, u.h, dens / total, normalized=True)
    return GridDensity(u.x0, u.h, dens, normalized=False)


# =========================
# Trasformata di Hilbert
# =========================

def _hilbert_weights(n):
    """Pesi esatti per densità costanti a tratti: w_k = sign(k) log((2|k|+1)/(2|k|-1))."""
    k = np.arange(-(n - 1), n)
    ak = np.abs(k)
    w = np.zeros(len(k))
    nz = ak > 0
    w[nz] = np.sign(k[nz]) * np.log1p(2.0 / (2.0 * ak[nz] - 1.0))
    return w


def _toeplitz_apply(values, kernel):
    """out_i = sum_j kernel[i-j] values_j con kernel indicizzato da -(n-1) a n-1."""
    n = len(values)
    full = fftconvolve(values, kernel)
    return full[n - 1:2 * n - 1]


def hilbert_field(m):
    """H[m] su tutti i nodi della griglia (regola di cancellazione della cella simmetrica)."""
    values = _toeplitz_apply(np.asarray(m.values, dtype=float), _hilbert_weights(m.n))
    for w, p in m.tails:
        values = values + w / (m.x - p)
    return GridField(m.x0, m.h, values, left_limit=0.0, right_limit=0.0)


def hilbert(m, x):
    """H[m](x) in un punto qualsiasi, esatto per la densità costante a tratti."""
    x = float(x)
    e = m.grid.edges
    v = np.asarray(m.values, dtype=float)
    jumps = np.diff(np.concatenate(([0.0], v, [0.0])))
    dist = np.abs(x - e)
    hit = np.flatnonzero((dist < 1e-12 * m.h) & (jumps != 0))
    if hit.size:
        k = int(hit[0])
        if k == 0 or k == m.n:
            raise HilbertConvergenceError(f"x={x:.6g} cade sul salto al bordo del dominio")
        # finestra simmetrica [x - h, x + h]: le due celle adiacenti prendono la loro media
        v = v.copy()
        v[k - 1] = v[k] = 0.5 * (v[k - 1] + v[k])
        jumps = np.diff(np.concatenate(([0.0], v, [0.0])))
    peak = v.max() if v.size else 0.0
    near_lo = dist[0] < EDGE_GUARD * m.h and v[0] > 1e-9 * max(peak, 1.0)
    near_hi = dist[-1] < EDGE_GUARD * m.h and v[-1] > 1e-9 * max(peak, 1.0)
    if near_lo or near_hi:
        raise HilbertConvergenceError(
            f"x={x:.6g} nella cella di bordo con densità non trascurabile: dominio troppo stretto")
    nz = jumps != 0
    value = float(np.sum(jumps[nz] * np.log(dist[nz])))
    for w, p in m.tails:
        value += w / (x - p)
    return value


# =========================
# Mezzo laplaciano A0 = d/dx H
# =========================

def _near_count(h, delta):
    """Numero di nodi della parte vicina; 0 se delta < h (la parte vicina non contribuisce)."""
    if delta is None or math.isinf(delta):
        return None
    if delta < h * (1 - 1e-9):
        logger.warning("delta=%.3g < h=%.3g: parte vicina posta a zero", delta, h)
        return 0
    return int(round(delta / h))


def _segment_coefficients(d, h):
    """Integrali esatti di (1-tau)/w^2 e tau/w^2 sul segmento [d h, (d+1) h] (d != 0, -1)."""
    d = d.astype(float)
    a = 1.0 / (h * d * (d + 1.0))
    q = (np.log((d + 1.0) / d) - 1.0 / (d + 1.0)) / h
    return a - q, q, a


@dataclass(frozen=True)
class SplitOperator:
    """
    Discretizzazione lineare di L[u](x_i) = int g(x_i,y)(u(x_i)-u(y))/(x_i-y)^2 dy
    divisa in parte vicina (|x-y| < delta, differenze seconde) e lontana
    (integrazione esatta dell'interpolante lineare, chiusura con i limiti u(+-inf)).

    ``apply(values, left, right) = matrix @ values + left_coef*left + right_coef*right``
    Fuori diagonale i coefficienti sono <= 0 quando g >= 0 (schema monotono).
    """
    matrix: np.ndarray
    left_coef: np.ndarray
    right_coef: np.ndarray
    near: int
    h: float

    def apply(self, values, left_limit, right_limit):
        return self.matrix @ values + self.left_coef * left_limit + self.right_coef * right_limit

    @property
    def diagonal(self):
        return np.diag(self.matrix).copy()


def split_operator(grid, delta=None, weight=None, diag_weight=None):
    """
    Costruisce lo ``SplitOperator`` sulla griglia. ``weight(x, y)`` è il nucleo g
    (vettorializzato); ``diag_weight(x)`` il suo valore sulla diagonale, g(x,x) = c(x).
    """
    n, h = grid.n, grid.h
    x = grid.nodes
    idx = np.arange(n)
    K = _near_count(h, 2 * h if delta is None else delta)
    if K is None:
        K = 2 * n
    K_far = max(K, 1)
    g = weight if weight is not None else (lambda a, b: np.ones(np.broadcast(a, b).shape))
    c = diag_weight(x) if diag_weight is not None else np.ones(n)

    M = np.zeros((n, n))
    left = np.zeros(n)
    right = np.zeros(n)

    def couple(i_sel, j, coef, side):
        # coef * (u_i - u_j), con u_j sostituito dal limite fuori griglia
        M[i_sel, i_sel] += coef
        inside = (j >= 0) & (j < n)
        M[i_sel[inside], j[inside]] -= coef[inside]
        out = ~inside
        if side == 'right':
            right[i_sel[out]] -= coef[out]
        else:
            left[i_sel[out]] -= coef[out]

    # ---- parte vicina
    if K >= 1:
        couple(idx, idx + 1, c / (2 * h), 'right')
        couple(idx, idx - 1, c / (2 * h), 'left')
        for k in range(1, K + 1):
            t = 0.5 if k == K else 1.0
            w = t / (k * k * h)
            couple(idx, idx + k, w * g(x, x + k * h), 'right')
            couple(idx, idx - k, w * g(x, x - k * h), 'left')

    # ---- parte lontana: segmenti [x_j, x_{j+1}]
    j = np.arange(n - 1)
    D = j[None, :] - idx[:, None]
    far = (D >= K_far) | (D + 1 <= -K_far)
    if np.any(far):
        Ds = np.where(far, D, K_far)
        cj, cj1, a = _segment_coefficients(Ds, h)
        mid = 0.5 * (x[:-1] + x[1:])
        G = np.where(far, g(x[:, None], mid[None, :]), 0.0)
        M[idx, idx] += np.sum(G * a, axis=1)
        M[:, :-1] -= G * cj
        M[:, 1:] -= G * cj1

    # ---- code oltre la griglia
    zR = np.maximum(n - 1 - idx, K_far) * h
    zL = np.maximum(idx, K_far) * h
    gR = g(x, x + zR)
    gL = g(x, x - zL)
    M[idx, idx] += gR / zR + gL / zL
    right -= gR / zR
    left -= gL / zL
    return SplitOperator(M, left, right, K, h)


def half_laplacian_field(u, delta=None):
    """A_{-delta}[u] + A_delta[u] su tutti i nodi (delta di default 2h)."""
    f = as_field(u)
    op = split_operator(f.grid, delta)
    vals = op.apply(np.asarray(f.values, dtype=float), f.left_limit, f.right_limit)
    return GridField(f.x0, f.h, vals, left_limit=0.0, right_limit=0.0)


def _segment_integral(ux, wa, wb, ua, ub):
    s = (ub - ua) / (wb - wa)
    alpha = ux - ua + s * wa
    return alpha * (1.0 / wa - 1.0 / wb) - s * np.log(np.abs(wb) / np.abs(wa))


def weighted_split_value(u, x, delta=None, weight=None, diag_weight=None):
    """Valore puntuale della discretizzazione divisa in un x arbitrario."""
    f = as_field(u)
    h = f.h
    nodes = f.x
    vals = np.asarray(f.values, dtype=float)
    uL, uR = f.left_limit, f.right_limit
    K = _near_count(h, 2 * h if delta is None else delta)
    if K is None:
        K = 2 * f.n
    K_far = max(K, 1)
    g = weight if weight is not None else (lambda a, b: np.ones(np.broadcast(a, b).shape))
    c = float(diag_weight(np.array([x]))[0]) if diag_weight is not None else 1.0

    def at(z):
        return np.interp(z, nodes, vals, left=uL, right=uR)

    x = float(x)
    ux = float(at(x))
    total = 0.0
    if K >= 1:
        total += c / (2 * h) * (2 * ux - at(x + h) - at(x - h))
        for k in range(1, K + 1):
            t = 0.5 if k == K else 1.0
            w = t / (k * k * h)
            total += w * (g(x, x + k * h) * (ux - at(x + k * h)) + g(x, x - k * h) * (ux - at(x - k * h)))

    r0 = x + K_far * h
    pts = np.concatenate(([r0], nodes[nodes > r0 + 1e-12 * h]))
    if len(pts) > 1:
        ya, yb = pts[:-1], pts[1:]
        seg = _segment_integral(ux, ya - x, yb - x, at(ya), at(yb))
        total += float(np.sum(g(x, 0.5 * (ya + yb)) * seg))
    zr = max(pts[-1], r0) - x
    total += float(g(x, x + zr)) * (ux - uR) / zr

    l0 = x - K_far * h
    pts = np.concatenate((nodes[nodes < l0 - 1e-12 * h], [l0]))
    if len(pts) > 1:
        ya, yb = pts[:-1], pts[1:]
        seg = _segment_integral(ux, ya - x, yb - x, at(ya), at(yb))
        total += float(np.sum(g(x, 0.5 * (ya + yb)) * seg))
    zl = x - min(pts[0], l0)
    total += float(g(x, x - zl)) * (ux - uL) / zl
    return float(total)


def half_laplacian(u, x, delta=None):
    """A_{-delta}[u](x) + A_delta[u](x) in un punto; coincide con ``half_laplacian_field`` sui nodi."""
    return weighted_split_value(u, x, delta)


# =========================
# Norme, momenti, seminorma
# =========================

def lp_norm(m, p):
    v = np.abs(np.asarray(m.values, dtype=float))
    if math.isinf(p):
        return float(v.max())
    if p < 1:
        raise ValueError("p deve stare in [1, inf]")
    return float((m.h * np.sum(v ** p)) ** (1.0 / p))


def moments(m, k):
    if not 0 <= k <= 4:
        raise ValueError("momenti disponibili fino all'ordine 4")
    return float(m.h * np.sum(m.x ** k * m.values))


def variance(m):
    mass = m.grid_mass
    mean = moments(m, 1) / mass
    return moments(m, 2) / mass - mean ** 2


def _centered(u):
    f = as_field(u)
    a, b = f.left_limit, f.right_limit
    shift = a if abs(a - b) <= 1e-12 else 0.5 * (a + b)
    return GridField(f.x0, f.h, np.asarray(f.values) - shift,
                     left_limit=a - shift, right_limit=b - shift)


def hhalf_seminorm(u, delta=None):
    """sqrt(int u A0[u]); se i limiti differiscono si usa il campo centrato (dipende dalla finestra)."""
    f = _centered(u)
    a0 = half_laplacian_field(f, delta)
    return math.sqrt(max(f.h * float(np.sum(f.values * a0.values)), 0.0))


def _unitary_spectrum(values, h, pad=8):
    """Frequenze xi >= 0 e |u_hat(xi)|^2 della trasformata unitaria (regola dei rettangoli)."""
    N = pad * len(values)
    spec = np.fft.rfft(values, n=N) * h / math.sqrt(2 * math.pi)
    xi = 2 * math.pi * np.fft.rfftfreq(N, d=h)
    return xi, np.abs(spec) ** 2


def hhalf_fourier(u, pad=8):
    """Controllo spettrale: sqrt(pi int |xi| |u_hat|^2)."""
    f = _centered(u)
    xi, p2 = _unitary_spectrum(np.asarray(f.values, dtype=float), f.h, pad)
    integrand = xi * p2
    total = 2.0 * math.pi * trapezoid(integrand, xi)
    return math.sqrt(max(total, 0.0))


# =========================
# Entropia libera
# =========================

def _log_pair_weights(n, h):
    """W(k) = int_cella_i int_cella_j log|x-y| per |i-j| = k, in forma chiusa."""
    def G(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        nz = t != 0
        out[nz] = 0.5 * t[nz] ** 2 * np.log(np.abs(t[nz])) - 0.75 * t[nz] ** 2
        return out
    k = np.arange(-(n - 1), n) * h
    return G(k + h) - 2 * G(k) + G(k - h)


def free_entropy(m):
    """E(m) = 1/2 int int log|x-y| m(dx) m(dy); -inf se la massa è concentrata in una cella."""
    v = np.asarray(m.values, dtype=float)
    if m.h * v.max() >= ATOM_MASS * m.grid_mass:
        return -math.inf
    conv = _toeplitz_apply(v, _log_pair_weights(m.n, m.h))
    return float(0.5 * np.dot(v, conv))


@dataclass(frozen=True)
class FourierEntropyCheck:
    direct: float
    fourier: float
    offset: float


def fourier_entropy_check(m, pad=16):
    """
    Confronta E(m) con -(pi/2) f.p. int |m_hat|^2/|xi| (parte finita con taglio a |xi|=1).
    Con la trasformata unitaria lo scarto atteso è la costante -gamma/2.
    """
    v = np.asarray(m.values, dtype=float)
    N = pad * m.n
    spec = np.fft.rfft(v, n=N) * m.h / math.sqrt(2 * math.pi)
    xi = 2 * math.pi * np.fft.rfftfreq(N, d=m.h)
    spec = spec * np.sinc(xi * m.h / (2 * math.pi))
    p2 = np.abs(spec) ** 2
    p0 = p2[0]
    # taglio liscio e^{-xi}: int_0^inf (e^{-xi} - 1_{xi<=1}) / xi = -gamma
    with np.errstate(divide='ignore', invalid='ignore'):
        integrand = np.where(xi > 0, (p2 - p0 * np.exp(-xi)) / xi, p0)
    fp = trapezoid(integrand, xi) - np.euler_gamma * p0
    # |m_hat|^2 è pari: l'integrale su R è il doppio
    fourier = -0.5 * math.pi * 2.0 * fp
    direct = free_entropy(m)
    return FourierEntropyCheck(direct=direct, fourier=float(fourier), offset=float(direct - fourier))


def entropy_dissipation(m):
    H = hilbert_field(m).values
    return float(m.h * np.sum(H ** 2 * m.values))


def lp_dissipation_rate(m, p):
    """d/dt int m^p lungo il flusso di Dyson: -(p-1) int m^p A0[m]."""
    a0 = half_laplacian_field(as_field(m)).values
    return float(-(p - 1) * m.h * np.sum(np.asarray(m.values) ** p * a0))


# =========================
# Cotlar
# =========================

def cotlar_residual(u):
    H = hilbert_field(u).values
    v = np.asarray(u.values, dtype=float)
    lhs = float(u.h * np.sum(H ** 2 * v))
    rhs = float(math.pi ** 2 / 3.0 * u.h * np.sum(v ** 3))
    return lhs, rhs, lhs - rhs


def cotlar_pointwise_residual(u):
    """H[u]^2 - pi^2 u^2 - 2 H[u H[u]] sui nodi."""
    H = hilbert_field(u).values
    v = np.asarray(u.values, dtype=float)
    prod = v * H
    Hp = _toeplitz_apply(prod, _hilbert_weights(u.n))
    return GridField(u.x0, u.h, H ** 2 - math.pi ** 2 * v ** 2 - 2.0 * Hp,
                     left_limit=0.0, right_limit=0.0)


# =========================
# Wasserstein (accoppiamento per quantili)
# =========================

@dataclass(frozen=True)
class _Quantile:
    s0: np.ndarray
    s1: np.ndarray
    q0: np.ndarray
    q1: np.ndarray

    def __call__(self, s):
        i = np.clip(np.searchsorted(self.s1, s, side='left'), 0, len(self.s1) - 1)
        width = self.s1[i] - self.s0[i]
        theta = np.where(width > 0, (s - self.s0[i]) / np.where(width > 0, width, 1.0), 0.0)
        return self.q0[i] + theta * (self.q1[i] - self.q0[i])

    @property
    def breaks(self):
        return np.concatenate((self.s0, self.s1[-1:]))


def _quantile(mu):
    if isinstance(mu, ParticleEnsemble):
        N = mu.N
        s = np.arange(N + 1) / N
        return _Quantile(s[:-1], s[1:], mu.positions, mu.positions)
    if not mu.normalized:
        raise NotNormalized("Wasserstein richiede misure normalizzate")
    cell = mu.h * np.asarray(mu.values, dtype=float)
    cell = cell / cell.sum()
    cum = np.concatenate(([0.0], np.cumsum(cell)))
    e = mu.grid.edges
    keep = cell > 0
    return _Quantile(cum[:-1][keep], cum[1:][keep], e[:-1][keep], e[1:][keep])


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def wasserstein(mu, nu, p=2):
    """W_p in 1-D: (int_0^1 |Q_mu(s) - Q_nu(s)|^p ds)^(1/p), esatto a tratti (Gauss-Legendre)."""
    Qa, Qb = _quantile(mu), _quantile(nu)
    breaks = np.unique(np.clip(np.concatenate((Qa.breaks, Qb.breaks)), 0.0, 1.0))
    lo, hi = breaks[:-1], breaks[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    s = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    diff = np.abs(Qa(s) - Qb(s))
    if math.isinf(p):
        return float(diff.max())
    total = np.sum(half[:, None] * _GL_WEIGHTS[None, :] * diff ** p)
    return float(total ** (1.0 / p))


# =========================
# Insiemi di particelle
# =========================

def ensemble_to_density(e, bandwidth, grid):
    """Lisciatura gaussiana integrata sulle celle; bandwidth -> 0 dà l'istogramma."""
    edges = grid.edges
    pos = np.asarray(e.positions, dtype=float)
    cell = np.zeros(grid.n)
    for start in range(0, len(pos), 2048):
        chunk = pos[start:start + 2048, None]
        if bandwidth > 0:
            cdf = ndtr((edges[None, :] - chunk) / bandwidth)
        else:
            cdf = (edges[None, :] >= chunk).astype(float)
        cell += np.diff(cdf, axis=1).sum(axis=0)
    cell /= e.N
    if cell.sum() <= 0:
        raise InvalidMeasure("nessuna massa delle particelle cade sulla griglia")
    return GridDensity.from_samples(grid.x0, grid.h, cell / grid.h, normalize=True)
