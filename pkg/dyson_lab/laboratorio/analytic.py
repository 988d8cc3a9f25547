"""
Soluzioni di riferimento in forma chiusa e oracolo delle caratteristiche.

Due convenzioni, sempre esplicite:

* ``raw`` (libreria, H senza 1/pi): dal Dirac il semicerchio ha raggio 2 sqrt(t),
  varianza t; lo stato stazionario di Wishart ha rapporto 1/(2 eta - 1) e scala (2 eta - 1)/2.
* ``reduced`` (costante di diffusione 1): raggio sqrt(t), H = (x - sqrt(x^2 - t))/(2t),
  bordi di Marcenko-Pastur (1 +- sqrt(1/eta))^2. Solo confronto.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, StepFailure
from .measure import CdfGrid, Grid, GridDensity

logger = logging.getLogger(__name__)

CONVENTIONS = ('raw', 'reduced')
# nomi accettati in ingresso, ricondotti a CONVENTIONS
CONVENTION_ALIASES = {'paper': 'reduced'}
ACCEPTED_CONVENTIONS = CONVENTIONS + tuple(CONVENTION_ALIASES)
# R(t)^2 = r0^2 + KAPPA * t
KAPPA = {'raw': 4.0, 'reduced': 1.0}

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def canonical_convention(convention):
    name = CONVENTION_ALIASES.get(convention, convention)
    if name not in CONVENTIONS:
        raise ConfigError(f"convenzione sconosciuta: {convention!r} (ammesse: {', '.join(ACCEPTED_CONVENTIONS)})")
    return name


# =========================
# Semicerchio
# =========================

@dataclass(frozen=True)
class SemicircleFamily:
    """Semicerchio di raggio ``radius`` centrato in ``center``."""
    radius: float
    center: float = 0.0
    convention: str = 'raw'

    def __post_init__(self):
        object.__setattr__(self, 'convention', canonical_convention(self.convention))
        if not self.radius > 0:
            raise ConfigError("il raggio del semicerchio deve essere positivo")

    @classmethod
    def at_time(cls, t, convention='raw', seed_radius=0.0, center=0.0):
        """Stato al tempo t partendo da un semicerchio di raggio ``seed_radius`` (0: Dirac)."""
        convention = canonical_convention(convention)
        return cls(math.sqrt(seed_radius ** 2 + KAPPA[convention] * t), center, convention)

    @property
    def variance(self):
        return self.radius ** 2 / 4.0

    @property
    def edge(self):
        return self.center + self.radius

    def density(self, x):
        z = np.asarray(x, dtype=float) - self.center
        R = self.radius
        return 2.0 / (math.pi * R * R) * np.sqrt(np.clip(R * R - z * z, 0.0, None))

    def cdf(self, x):
        z = np.clip((np.asarray(x, dtype=float) - self.center) / self.radius, -1.0, 1.0)
        return 0.5 + (z * np.sqrt(1.0 - z * z) + np.arcsin(z)) / math.pi

    def hilbert(self, x):
        """H[m](x); con ``reduced`` è un quarto di quella coerente."""
        z = np.asarray(x, dtype=float) - self.center
        R = self.radius
        inside = np.abs(z) <= R
        root = np.sqrt(np.clip(z * z - R * R, 0.0, None))
        out = np.where(inside, 2.0 * z / R ** 2, 2.0 * (z - np.sign(z) * root) / R ** 2)
        if self.convention == 'reduced':
            out = out / 4.0
        return out

    def free_entropy(self):
        return 0.5 * (math.log(self.radius / 2.0) - 0.25)

    def on_grid(self, grid):
        """Densità mediata sulle celle (differenze della CDF), normalizzata."""
        e = grid.edges
        cell = np.diff(self.cdf(e)) / grid.h
        return GridDensity.from_samples(grid.x0, grid.h, cell, normalize=True)

    def cdf_on_grid(self, grid):
        return CdfGrid(grid.x0, grid.h, np.maximum.accumulate(self.cdf(grid.nodes)))


def semicircle_density(fam, x):
    return fam.density(x)


def semicircle_cdf(fam, x):
    return fam.cdf(x)


def semicircle_hilbert(fam, x):
    return fam.hilbert(x)


# =========================
# Marcenko-Pastur
# =========================

@dataclass(frozen=True)
class MarcenkoPastur:
    eta: float
    convention: str = 'raw'

    def __post_init__(self):
        object.__setattr__(self, 'convention', canonical_convention(self.convention))
        if self.eta < 1:
            raise ConfigError("Marcenko-Pastur richiede eta >= 1")

    @property
    def edges(self):
        return mp_edges(self.eta, self.convention)

    def density(self, x):
        return marcenko_pastur_density(self.eta, x, self.convention)

    def cdf(self, x):
        """Quadratura di Gauss-Legendre nella variabile angolare x = a + (b-a)(1-cos th)/2."""
        a, b = self.edges
        x = np.atleast_1d(np.asarray(x, dtype=float))
        th_end = np.arccos(np.clip(1.0 - 2.0 * (x - a) / (b - a), -1.0, 1.0))
        th = 0.5 * th_end[:, None] * (_GL_X[None, :] + 1.0)
        xx = a + 0.5 * (b - a) * (1.0 - np.cos(th))
        s = np.sin(th)
        scale = 1.0 / math.pi if self.convention == 'raw' else self.eta / (2.0 * math.pi)
        # xx = 0 solo per th_end = 0, dove il peso complessivo è nullo
        with np.errstate(divide='ignore', invalid='ignore'):
            integrand = np.where(xx > 0, scale * (0.5 * (b - a)) ** 2 * s * s / xx, 0.0)
        out = 0.5 * th_end * (integrand @ _GL_W)
        return np.clip(out, 0.0, 1.0)

    def on_grid(self, grid):
        cell = np.diff(self.cdf(grid.edges)) / grid.h
        return GridDensity.from_samples(grid.x0, grid.h, cell, normalize=True)

    def cdf_on_grid(self, grid):
        return CdfGrid(grid.x0, grid.h, np.maximum.accumulate(self.cdf(grid.nodes)))


def mp_edges(eta, convention='raw'):
    convention = canonical_convention(convention)
    if convention == 'raw':
        r = math.sqrt(2.0 * eta - 1.0)
        return (r - 1.0) ** 2 / 2.0, (r + 1.0) ** 2 / 2.0
    s = math.sqrt(1.0 / eta)
    return (1.0 - s) ** 2, (1.0 + s) ** 2


def marcenko_pastur_density(eta, x, convention='raw'):
    lo, hi = mp_edges(eta, convention)
    x = np.asarray(x, dtype=float)
    scale = 1.0 / math.pi if convention == 'raw' else eta / (2.0 * math.pi)
    inside = (x > lo) & (x < hi) & (x > 0)
    safe = np.where(inside, x, 1.0)
    return np.where(inside, scale * np.sqrt(np.clip((hi - safe) * (safe - lo), 0.0, None)) / safe, 0.0)


def mp_stationarity_residual(eta, F, delta=None):
    """
    Campo d_x F (eta - 1 - x + x int (F(x)-F(y))/(x-y)^2 dy), con F estesa da 0 a sinistra
    e da 1 a destra; l'integrale usa la stessa quadratura divisa dei risolutori.
    """
    from .measure import GridField, half_laplacian_field

    if F.x0 <= 0:
        raise ConfigError("la griglia di Wishart deve stare in (0, inf)")
    a0 = np.asarray(half_laplacian_field(F.as_field(), delta).values)
    x = F.x
    bracket = eta - 1.0 - x + x * a0
    dF = np.gradient(np.asarray(F.values, dtype=float), F.h)
    return GridField(F.x0, F.h, dF * bracket, left_limit=0.0, right_limit=0.0)


# =========================
# Spike: riferimento ODE
# =========================

@dataclass(frozen=True)
class SpikeReference:
    times: np.ndarray
    Z: np.ndarray
    spike: np.ndarray
    t0: float
    convention: str


def spike_absorption_reference(lambda0, convention='raw', t_start=0.0, seed_radius=0.0,
                               t_max=100.0, rtol=1e-10, atol=1e-12):
    """
    Integra Z = lambda^2 - R(t)^2 con R(t)^2 = r0^2 + kappa t. Nella variabile w = sqrt(Z)
    l'equazione w' = -kappa / (2 (w + sqrt(w^2 + R^2))) è regolare e attraversa lo zero
    trasversalmente: t0 è l'evento w = 0.
    """
    convention = canonical_convention(convention)
    kappa = KAPPA[convention]
    R2_0 = seed_radius ** 2 + kappa * t_start
    if not lambda0 > 0 or lambda0 ** 2 <= R2_0:
        raise ConfigError("lo spike deve partire a destra del bordo del bulk")

    def R2(t):
        return seed_radius ** 2 + kappa * t

    def rhs(t, w):
        return [-kappa / (2.0 * (w[0] + math.sqrt(max(w[0] ** 2 + R2(t), 0.0))))]

    def hit(t, w):
        return w[0]
    hit.terminal = True
    hit.direction = -1

    w0 = math.sqrt(lambda0 ** 2 - R2_0)
    sol = solve_ivp(rhs, (t_start, t_start + t_max), [w0], method='RK45', events=hit,
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success or len(sol.t_events[0]) == 0:
        raise StepFailure("assorbimento non raggiunto entro l'orizzonte", t=float(sol.t[-1]))
    t0 = float(sol.t_events[0][0])
    times = np.linspace(t_start, t0, 401)
    w = np.clip(sol.sol(times)[0], 0.0, None)
    Z = w ** 2
    spike = np.sqrt(Z + R2(times))
    logger.info("assorbimento (%s): lambda0=%g t0=%.8g", convention, lambda0, t0)
    return SpikeReference(times, Z, spike, t0, convention)


# =========================
# Oracolo delle caratteristiche (Burgers complessa)
# =========================

@dataclass(frozen=True)
class BurgersSeed:
    """Dato iniziale con trasformata di Stieltjes G0 e derivata in forma chiusa."""
    kind: str
    params: tuple

    def G0(self, w):
        if self.kind == 'atomic':
            weights, positions = self.params
            return sum(a / (w - p) for a, p in zip(weights, positions))
        if self.kind == 'semicircle':
            c, R = self.params
            z = w - c
            return 2.0 * (z - np.sqrt(z - R) * np.sqrt(z + R)) / R ** 2
        a, b = self.params
        return (np.log(w - a) - np.log(w - b)) / (b - a)

    def dG0(self, w):
        if self.kind == 'atomic':
            weights, positions = self.params
            return sum(-a / (w - p) ** 2 for a, p in zip(weights, positions))
        if self.kind == 'semicircle':
            c, R = self.params
            z = w - c
            return 2.0 * (1.0 - z / (np.sqrt(z - R) * np.sqrt(z + R))) / R ** 2
        a, b = self.params
        return (1.0 / (w - a) - 1.0 / (w - b)) / (b - a)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == 'atomic':
            weights, positions = self.params
            return sum(a * (x >= p) for a, p in zip(weights, positions))
        if self.kind == 'semicircle':
            c, R = self.params
            return SemicircleFamily(R, c).cdf(x)
        a, b = self.params
        return np.clip((x - a) / (b - a), 0.0, 1.0)

    def cdf_on_grid(self, grid):
        return CdfGrid(grid.x0, grid.h, np.maximum.accumulate(np.clip(self.cdf(grid.nodes), 0.0, 1.0)))


def atomic_seed(weights, positions):
    weights = tuple(float(w) for w in weights)
    if abs(sum(weights) - 1.0) > 1e-12 or any(w < 0 for w in weights):
        raise ConfigError("i pesi atomici devono essere non negativi e sommare a 1")
    return BurgersSeed('atomic', (weights, tuple(float(p) for p in positions)))


def semicircle_seed(center, radius):
    return BurgersSeed('semicircle', (float(center), float(radius)))


def uniform_seed(a, b):
    if not b > a:
        raise ConfigError("seme uniforme: serve a < b")
    return BurgersSeed('uniform', (float(a), float(b)))


NEWTON_TOL = 1e-13
NEWTON_ITER = 60
BISECT_DEPTH = 8


def _newton(seed, z, s, G):
    """Risolve G = G0(z - s G) per punto; restituisce (G, convergenza)."""
    done = np.zeros(z.shape, dtype=bool)
    for _ in range(NEWTON_ITER):
        w = z - s * G
        F = G - seed.G0(w)
        dF = 1.0 + s * seed.dG0(w)
        step = F / dF
        # smorzamento: il passo non deve portare Im G sopra zero
        G_new = G - step
        lam = np.ones(z.shape)
        for _ in range(30):
            bad = (G_new.imag > 0) | ~np.isfinite(G_new)
            if not np.any(bad):
                break
            lam = np.where(bad, 0.5 * lam, lam)
            G_new = G - lam * step
        G = np.where(done, G, G_new)
        done = done | (np.abs(F) < NEWTON_TOL * (1.0 + np.abs(G)))
        if np.all(done):
            break
    w = z - s * G
    done = np.abs(G - seed.G0(w)) < 1e-10 * (1.0 + np.abs(G))
    return G, done


def _bisect_offset(seed, x, s, G, e_from, e_to, depth=BISECT_DEPTH):
    """
    Continuazione di un solo punto da Im z = e_from a e_to. Se Newton non converge
    il tratto viene diviso nella media geometrica degli offset, fino a ``depth`` livelli.
    """
    G_new, ok = _newton(seed, np.array([x + 1j * e_to]), s, np.array([G]))
    if ok[0] or depth == 0:
        return G_new[0], bool(ok[0])
    e_mid = math.sqrt(e_from * e_to)
    G_mid, ok_mid = _bisect_offset(seed, x, s, G, e_from, e_mid, depth - 1)
    if not ok_mid:
        return G_mid, False
    return _bisect_offset(seed, x, s, G_mid, e_mid, e_to, depth - 1)


def burgers_stieltjes(seed, t, x, eps, convention='raw'):
    """
    G_t(x + i eps) per continuazione da Im z = 1 fino a ``eps``; ``ok`` vale False
    nei punti in cui nessun gradino della scala è andato a convergenza.
    """
    convention = canonical_convention(convention)
    s = t * KAPPA[convention] / 4.0
    x = np.asarray(x, dtype=float)
    ladder = [1.0]
    while ladder[-1] * 0.5 > eps:
        ladder.append(ladder[-1] * 0.5)
    ladder.append(eps)
    G = 1.0 / (x + 1j * ladder[0])
    ok = np.ones(x.shape, dtype=bool)
    prev = None
    for e in ladder:
        G_new, conv = _newton(seed, x + 1j * e, s, G)
        if prev is not None:
            for i in np.flatnonzero(~conv & ok):
                G_new[i], conv[i] = _bisect_offset(seed, x[i], s, G[i], prev, e)
        ok &= conv
        G, prev = G_new, e
    return G, ok


def burgers_characteristics(seed, t, grid, convention='raw', levels=3, with_mask=False):
    """
    Densità al tempo t da G = G0(z - s G), s = t (raw) o t/4 (reduced), con
    m = -Im G(x + i eta)/pi a eta_k = 10^-k h, k = 1..levels, estrapolata alla Richardson.
    I punti senza convergenza a qualche livello sono esclusi e ricostruiti per
    interpolazione dai vicini; con ``with_mask`` restituisce anche la loro maschera.
    La massa è rinormalizzata; lo scarto grezzo finisce nel log.
    """
    x = grid.nodes
    failed = np.zeros(x.shape, dtype=bool)
    if t <= 0:
        e = grid.edges
        cell = np.diff(seed.cdf(e)) / grid.h
        m = GridDensity.from_samples(grid.x0, grid.h, cell, normalize=True)
        return (m, failed) if with_mask else m
    rows = []
    for k in range(1, levels + 1):
        G, ok = burgers_stieltjes(seed, t, x, 10.0 ** (-k) * grid.h, convention)
        failed |= ~ok
        rows.append(-G.imag / math.pi)
    # eliminazione successiva dei termini O(eta), O(eta^2)
    table = [np.asarray(r) for r in rows]
    factor = 10.0
    while len(table) > 1:
        table = [(factor * table[i + 1] - table[i]) / (factor - 1.0) for i in range(len(table) - 1)]
        factor *= 10.0
    dens = np.clip(np.nan_to_num(table[0]), 0.0, None)
    if failed.any():
        if failed.all():
            raise StepFailure(f"Newton non convergente in tutti i {x.size} punti", t=t)
        logger.warning("Newton non convergente in %d punti su %d a t=%g (primo x=%.6g): esclusi",
                       int(failed.sum()), x.size, t, float(x[failed][0]))
        dens[failed] = np.interp(x[failed], x[~failed], dens[~failed])
    raw_mass = float(grid.h * dens.sum())
    logger.info("caratteristiche t=%g: massa grezza %.10f", t, raw_mass)
    m = GridDensity.from_samples(grid.x0, grid.h, dens, normalize=True)
    return (m, failed) if with_mask else m
