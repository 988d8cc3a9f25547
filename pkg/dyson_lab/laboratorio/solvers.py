"""
Risolutori deterministici dell'equazione di campo medio.

* forma integrata (CDF): ``d_t u + (L[u] + b + B(x;u)) d_x u = eps d_xx u``, schema upwind
  esplicito monotono, bordi fissati a 0 e 1;
* forma densità: ``d_t m + d_x(m (sigma(m) K[m] + b)) = eps d_xx m``, volumi finiti conservativi
  con flusso upwind sulle facce;
* Wishart: forma CDF con nucleo f(x, y) = x, velocità aggiuntiva eta - 1 e griglia in (0, inf).
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CflViolation, ConfigError, SchemeBreakdown, StepFailure
from .kernel import (
    B_operator, BetaKernel, InteractionKernel, K_field, L_operator, _parse_call, dyson_kernel,
    linear_drift, regular_matrix, validate_hypotheses, wishart_kernel,
)
from .measure import (
    CdfGrid, Grid, GridDensity, GridField, cdf_to_density, density_to_cdf, hhalf_seminorm,
    hilbert_field, lp_norm,
)
from .snapshots import manifest_hash, read_manifest, read_snapshot, write_manifest, write_snapshot

logger = logging.getLogger(__name__)

FORMS = ('cdf', 'density', 'coupled', 'wishart')
DEFAULT_CFL = 0.45
CLAMP_TOL = 1e-6
CLIP_TOL = 1e-6
# celle con massa relativa sotto questa soglia non limitano il passo
ACTIVE_FRACTION = 1e-12
MIN_DT = 1e-14
EDGE_CELLS = 5
SIGMA_STEP = 1e-6


# =========================
# Specifica
# =========================

@dataclass(frozen=True)
class DtPolicy:
    """'adaptive' (cfl * limite) oppure 'fixed' (``dt`` costante, verificato a ogni passo)."""
    mode: str = 'adaptive'
    dt: float = None

    def __post_init__(self):
        if self.mode not in ('adaptive', 'fixed'):
            raise ConfigError(f"politica del passo sconosciuta: {self.mode!r}")
        if self.mode == 'fixed' and not (self.dt is not None and self.dt > 0):
            raise ConfigError("la politica 'fixed' richiede dt > 0")


@dataclass(frozen=True)
class Penalty:
    """Barriera riflettente in R0: velocità di richiamo -(1/eps)(x - R0)_+."""
    R0: float
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("la penalizzazione richiede eps > 0")

    def velocity(self, x):
        return -np.clip(np.asarray(x) - self.R0, 0.0, None) / self.eps


def parse_coupling(text):
    """'none' | 'attraction(k)': b_i = k (media(m_altro) - x)."""
    name, values = _parse_call(text or 'none')
    if name == 'none' and not values:
        return None
    if name == 'attraction' and len(values) == 1:
        return values[0]
    raise ConfigError(f"accoppiamento sconosciuto: {text!r}")


@dataclass(frozen=True)
class PdeSpec:
    form: str
    grid: Grid
    t_end: float
    kernel: InteractionKernel = field(default_factory=dyson_kernel)
    beta: BetaKernel = None
    sigma: object = None
    viscosity: float = 0.0
    delta: float = None
    cfl: float = DEFAULT_CFL
    dt_policy: DtPolicy = DtPolicy()
    sample_times: tuple = ()
    eta: float = None
    coupling: str = 'none'
    penalty: Penalty = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigError(f"forma sconosciuta: {self.form!r} (ammesse: {', '.join(FORMS)})")
        if self.t_end < 0:
            raise ConfigError("t_end deve essere non negativo")
        if not 0 < self.cfl < 1:
            raise ConfigError("cfl deve stare in (0, 1)")
        if self.viscosity < 0:
            raise ConfigError("la viscosità deve essere non negativa")
        if self.delta is None:
            object.__setattr__(self, 'delta', 2.0 * self.grid.h)
        if self.form == 'wishart':
            if self.eta is None or self.eta < 1:
                raise ConfigError("Wishart richiede eta >= 1")
            if self.grid.lo < -1e-12:
                raise ConfigError("la griglia di Wishart deve stare in (0, inf)")
            if self.kernel.name != 'wishart':
                object.__setattr__(self, 'kernel', wishart_kernel(self.kernel.drift))
        if np.any(self.kernel.c(self.grid.nodes) < 0):
            raise ConfigError("c(x) = f(x, x) deve essere non negativa sulla griglia")
        parse_coupling(self.coupling)
        times = set(float(t) for t in self.sample_times) | {float(self.t_end)}
        if any(t < 0 or t > self.t_end + 1e-12 for t in times):
            raise ConfigError("tempi di campionamento fuori da [0, t_end]")
        object.__setattr__(self, 'sample_times', tuple(sorted(t for t in times if t > 0)))

    def describe(self):
        g = self.grid
        return {
            'form': self.form,
            'kernel': self.kernel.name,
            'drift': self.kernel.drift.name,
            'beta': None if self.beta is None else self.beta.name,
            'sigma': None if self.sigma is None else getattr(self.sigma, 'name', 'custom'),
            'viscosity': self.viscosity,
            'grid': {'x0': g.x0, 'h': g.h, 'n': g.n},
            'delta': self.delta,
            'cfl': self.cfl,
            'dt_policy': {'mode': self.dt_policy.mode, 'dt': self.dt_policy.dt},
            't_end': self.t_end,
            'eta': self.eta,
            'coupling': self.coupling,
            'penalty': None if self.penalty is None else {'R0': self.penalty.R0, 'eps': self.penalty.eps},
            'scheme': {'clamp_tol': CLAMP_TOL, 'clip_tol': CLIP_TOL, 'active_fraction': ACTIVE_FRACTION},
        }


@dataclass(frozen=True)
class Sigma:
    """sigma(m) con nome, per il manifest."""
    func: object
    name: str = 'custom'

    def __call__(self, m):
        return np.broadcast_to(np.asarray(self.func(m), dtype=float), np.shape(m))


def parse_sigma(text):
    """'one' | 'constant(s)' | 'identity' (sigma(m) = m)"""
    if text is None or isinstance(text, Sigma):
        return text
    name, values = _parse_call(text)
    if name == 'one' and not values:
        return None
    if name == 'constant' and len(values) == 1:
        s = values[0]
        if s < 0:
            raise ConfigError("sigma deve essere non negativa")
        return Sigma(lambda m: np.full(np.shape(m), s), name=f'constant({s:g})')
    if name == 'identity' and not values:
        return Sigma(lambda m: np.clip(m, 0.0, None), name='identity')
    raise ConfigError(f"sigma sconosciuta: {text!r}")


# =========================
# Registro del flusso
# =========================

@dataclass
class FlowRecord:
    times: list
    densities: list
    cdfs: list
    fields: list
    health: dict
    meta: dict
    extras: dict = field(default_factory=dict)
    source: dict = None

    def index(self, t):
        times = np.asarray(self.times)
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"tempo {t} non campionato")
        return i

    def density_at(self, t):
        return self.densities[self.index(t)]

    def cdf_at(self, t):
        return self.cdfs[self.index(t)]

    def save(self, directory, extra_payload=None):
        """Istantanee CSV + ``manifest.json``; restituisce il percorso del manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, t in enumerate(self.times):
            files += write_snapshot(directory / f'density_{i:03d}.csv', self.densities[i], time=t)
            files += write_snapshot(directory / f'cdf_{i:03d}.csv', self.cdfs[i], time=t)
        payload = {
            'kind': 'flow',
            'times': [float(t) for t in self.times],
            'health': self.health,
            'meta': self.meta,
            'extras': _plain(self.extras),
        }
        payload.update(extra_payload or {})
        return write_manifest(directory, payload, files)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = read_manifest(directory)
        densities, cdfs = [], []
        for i in range(len(manifest['times'])):
            densities.append(read_snapshot(directory / f'density_{i:03d}.csv')[0])
            cdfs.append(read_snapshot(directory / f'cdf_{i:03d}.csv')[0])
        return cls(manifest['times'], densities, cdfs, [None] * len(densities),
                   manifest['health'], manifest['meta'], manifest.get('extras', {}),
                   source={'path': str(directory), 'sha256': manifest_hash(directory)})


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class _Health:
    def __init__(self):
        self.steps = 0
        self.dt_min = math.inf
        self.dt_max = 0.0
        self.clamp_max = 0.0
        self.clamp_total = 0.0
        self.clip_max = 0.0
        self.clip_total = 0.0

    def step(self, dt):
        self.steps += 1
        self.dt_min = min(self.dt_min, dt)
        self.dt_max = max(self.dt_max, dt)

    def clamp(self, amount, t):
        self.clamp_max = max(self.clamp_max, amount)
        self.clamp_total += amount
        if amount > CLAMP_TOL:
            raise SchemeBreakdown(f"correzione di monotonia {amount:.3g} oltre {CLAMP_TOL:g} a t={t:.6g}")

    def clip(self, mass, t):
        self.clip_max = max(self.clip_max, mass)
        self.clip_total += mass
        if mass > CLIP_TOL:
            raise SchemeBreakdown(f"massa negativa tagliata {mass:.3g} oltre {CLIP_TOL:g} a t={t:.6g}")

    def as_dict(self):
        return {
            'steps': self.steps,
            'dt_min': self.dt_min if self.steps else None,
            'dt_max': self.dt_max if self.steps else None,
            'clamp_max': self.clamp_max, 'clamp_total': self.clamp_total,
            'clip_max': self.clip_max, 'clip_total': self.clip_total,
        }


def _march(spec, steppers, record):
    """Avanza tutti gli ``steppers`` con passo comune fino ai tempi di campionamento."""
    policy = spec.dt_policy
    t = 0.0
    record(0.0)
    for target in spec.sample_times:
        while target - t > 1e-13 * max(1.0, target):
            rate = max(s.prepare(t) for s in steppers)
            bound = 1.0 / rate if rate > 0 else math.inf
            if policy.mode == 'fixed':
                if policy.dt > bound * (1 + 1e-12):
                    raise CflViolation(policy.dt, bound, t)
                dt = policy.dt
            else:
                dt = spec.cfl * bound
            dt = min(dt, target - t)
            if dt < MIN_DT:
                raise StepFailure(f"passo temporale degenerato ({dt:.3g})", t=t)
            for s in steppers:
                s.advance(t, dt)
            t = target if dt == target - t else t + dt
        t = target
        record(t)


# =========================
# Forma CDF
# =========================

def _check_grid(obj, g):
    if obj.n != g.n or not math.isclose(obj.h, g.h, rel_tol=1e-12) or abs(obj.x0 - g.x0) > 1e-9 * g.h:
        raise ConfigError("il dato iniziale non sta sulla griglia della specifica")


class _CdfStepper:
    def __init__(self, u0, spec, health):
        g = spec.grid
        _check_grid(u0, g)
        self.spec = spec
        self.h = g.h
        self.x = g.nodes
        self.u = np.array(u0.values, dtype=float)
        self.op = L_operator(spec.kernel, g, spec.delta)
        self.diag = np.clip(self.op.diagonal, 0.0, None)
        self.B = B_operator(spec.beta, g) if spec.beta is not None else None
        self.const = spec.eta - 1.0 if spec.form == 'wishart' else 0.0
        self.eps = spec.viscosity
        self.health = health

    def velocity(self, t):
        """(V con b(x-), V con b(x+)); coincidono dove il drift è continuo."""
        v = self.op.apply(self.u, 0.0, 1.0) + self.const
        if self.B is not None:
            W, P, p = self.B
            v = v + W @ (P @ self.u + p)
        bl, br = self.spec.kernel.drift.limits(self.x, t)
        return v + bl, v + br

    def prepare(self, t):
        u, h = self.u, self.h
        ext = np.concatenate(([0.0], u, [1.0]))
        self.dm = (u - ext[:-2]) / h
        self.dp = (ext[2:] - u) / h
        self.vl, self.vr = self.velocity(t)
        speed = np.maximum(np.abs(self.vl), np.abs(self.vr))
        rate = self.diag * np.maximum(self.dm, self.dp) + 2.0 * speed / h + 4.0 * self.eps / h ** 2
        return float(rate.max())

    def advance(self, t, dt):
        # selezione nel drift multivoco: b(x-) all'indietro se V > 0, b(x+) in avanti se V < 0
        trans = np.where(self.vl > 0, self.vl * self.dm,
                         np.where(self.vr < 0, self.vr * self.dp, 0.0))
        new = self.u - dt * trans
        if self.eps > 0:
            new = new + dt * self.eps * (self.dp - self.dm) / self.h
        fixed = np.maximum.accumulate(np.clip(new, 0.0, 1.0))
        self.health.clamp(float(np.max(np.abs(fixed - new))), t)
        self.u = fixed

    def cdf(self):
        g = self.spec.grid
        return CdfGrid(g.x0, g.h, self.u)


def _cdf_flow(u0, spec, extras_hook=None):
    health = _Health()
    stepper = _CdfStepper(u0, spec, health)
    times, dens, cdfs, fields = [], [], [], []
    extras = {}

    def record(t):
        u = stepper.cdf()
        times.append(t)
        cdfs.append(u)
        dens.append(cdf_to_density(u, normalize=u.values[-1] - u.values[0] > 0))
        v = stepper.velocity(t)[0]
        fields.append({'velocity': GridField(u.x0, u.h, v)})
        if extras_hook is not None:
            extras_hook(t, u, extras)
        logger.info("forma CDF: campione a t=%.6g", t)

    logger.info("forma CDF (%s, nucleo %s): n=%d t_end=%g", spec.form, spec.kernel.name, spec.grid.n, spec.t_end)
    _march(spec, [stepper], record)
    return FlowRecord(times, dens, cdfs, fields, health.as_dict(), spec.describe(), extras)


def solve_cdf(u0, spec):
    if spec.form not in ('cdf', 'wishart'):
        raise ConfigError("solve_cdf richiede la forma 'cdf' o 'wishart'")
    if spec.form == 'wishart':
        return solve_wishart(u0, spec)
    return _cdf_flow(u0, spec)


def solve_wishart(u0, spec):
    """Forma CDF di Wishart; registra max d_x F nelle prime celle (gradiente al bordo)."""
    if spec.form != 'wishart':
        raise ConfigError("solve_wishart richiede la forma 'wishart'")

    def edge(t, u, extras):
        grad = np.diff(np.concatenate(([0.0], np.asarray(u.values[:EDGE_CELLS + 1])))) / u.h
        extras.setdefault('edge_gradient', []).append(float(grad.max()))

    return _cdf_flow(u0, spec, edge)


def wishart_spec(eta, grid, t_end, **kwargs):
    """Specifica di Wishart con drift di default b = -x."""
    kwargs.setdefault('kernel', wishart_kernel(linear_drift(1.0)))
    return PdeSpec('wishart', grid, t_end, eta=eta, **kwargs)


def shifted_datum(u0, distance):
    """Traslato a sinistra di u0 a distanza sup esattamente ``distance`` (bisezione sullo spostamento)."""
    x = u0.x
    width = x[-1] - x[0]
    lo, hi = 0.0, width

    def shifted(s):
        return np.interp(x + s, x, u0.values, left=0.0, right=1.0)

    if np.max(shifted(hi) - u0.values) < distance:
        raise ConfigError("distanza richiesta troppo grande per il dato")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.max(shifted(mid) - u0.values) < distance:
            lo = mid
        else:
            hi = mid
    return CdfGrid(u0.x0, u0.h, np.maximum.accumulate(shifted(hi)))


def solve_with_B(u0, beta, spec, perturbation=1e-3):
    """
    Forma CDF con V += B(x; u). Una seconda corsa da un dato a distanza sup ``perturbation``
    fornisce il certificato di Gronwall ``sup|u1 - u2|(t) <= 1.2 d0 exp(C t)``,
    C = ||beta||_{L^inf L^1} * sup_t ||d_x u||_inf.
    """
    if spec.form != 'cdf':
        raise ConfigError("solve_with_B richiede la forma 'cdf'")
    spec_b = _replace(spec, beta=beta)
    hh = []

    def seminorm(t, u, extras):
        hh.append(hhalf_seminorm(u))

    flow = _cdf_flow(u0, spec_b, seminorm)
    flow.extras['hhalf'] = hh
    if beta is None or perturbation is None:
        return flow
    u1 = shifted_datum(u0, perturbation)
    other = _cdf_flow(u1, spec_b)
    flow.extras['gronwall'] = gronwall_certificate(flow, other, beta)
    return flow


def gronwall_certificate(flow_a, flow_b, beta):
    h = flow_a.cdfs[0].h
    x = flow_a.cdfs[0].x
    norm = beta.linf_l1(x, h)
    slope = max(float(np.max(np.diff(np.concatenate(([0.0], u.values))) / h))
                for u in list(flow_a.cdfs) + list(flow_b.cdfs))
    C = norm * slope
    dist = [float(np.max(np.abs(np.asarray(a.values) - np.asarray(b.values))))
            for a, b in zip(flow_a.cdfs, flow_b.cdfs)]
    d0 = dist[0]
    env = [1.2 * d0 * math.exp(C * t) for t in flow_a.times]
    return {
        'C': C, 'beta_linf_l1': norm, 'slope': slope, 'd0': d0,
        'distances': dist, 'envelope': env,
        'passed': all(d <= e for d, e in zip(dist, env)),
    }


def solve_singular_drift(u0, spec, box=None):
    """Forma CDF con drift singolare monotono; il drift deve superare la validazione."""
    drift = spec.kernel.drift
    if drift.variant != 'singular':
        raise ConfigError("solve_singular_drift richiede un drift 'singular'")
    g = spec.grid
    report = validate_hypotheses(spec.kernel, box or (g.lo, g.hi), lattice=101)
    if not report.drift_monotone['passed']:
        raise ConfigError(f"il drift {drift.name} non soddisfa b + C_b Id non decrescente")
    flow = _cdf_flow(u0, spec)
    flow.extras['hypotheses'] = report.as_dict()
    return flow


def _replace(spec, **changes):
    data = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
    data.update(changes)
    return PdeSpec(**data)


# =========================
# Forma densità
# =========================

class _DensityStepper:
    def __init__(self, m0, spec, health):
        g = spec.grid
        _check_grid(m0, g)
        self.spec = spec
        self.h = g.h
        self.x = g.nodes
        self.faces = g.edges[1:-1]
        self.m = np.array(m0.values, dtype=float)
        self.tails = m0.tails
        self.kernel = spec.kernel
        self.R = None if spec.kernel.pure else regular_matrix(spec.kernel, g)
        self.sigma = spec.sigma
        self.eps = spec.viscosity
        self.penalty = spec.penalty
        self.extra = None
        self.health = health

    def density(self):
        g = self.spec.grid
        mass = g.h * self.m.sum()
        return GridDensity(g.x0, g.h, self.m, normalized=abs(mass - 1.0) <= 1e-8)

    def interaction(self):
        dens = GridDensity(self.spec.grid.x0, self.h, self.m, normalized=False)
        return np.asarray(K_field(self.kernel, dens, self.R))

    def prepare(self, t):
        K = self.interaction()
        Kf = 0.5 * (K[:-1] + K[1:])
        drift = self.kernel.drift(self.faces, t)
        if self.extra is not None:
            drift = drift + self.extra(self.faces)
        if self.penalty is not None:
            drift = drift + self.penalty.velocity(self.faces)
        m = self.m
        v = Kf + drift
        if self.sigma is None:
            up = np.where(v > 0, m[:-1], m[1:])
            flux = up * v
            dspeed = 0.0
        else:
            # direzione dal campo con sigma valutata a monte della velocità senza sigma
            v = self.sigma(np.where(v > 0, m[:-1], m[1:])) * Kf + drift
            up = np.where(v > 0, m[:-1], m[1:])
            flux = up * (self.sigma(up) * Kf + drift)
            lo = np.clip(up - SIGMA_STEP, 0.0, None)
            hi = up + SIGMA_STEP
            ds = (self.sigma(hi) - self.sigma(lo)) / (hi - lo)
            dspeed = np.abs(up * ds * Kf)
        # d(flusso)/dm a monte: sigma + m sigma'
        speed = np.abs(v) + dspeed
        if self.eps > 0:
            flux = flux - self.eps * (m[1:] - m[:-1]) / self.h
        self.flux = flux
        out = np.zeros_like(m)
        out[:-1] += np.where(v > 0, speed, 0.0)
        out[1:] += np.where(v < 0, speed, 0.0)
        rate = out / self.h + 2.0 * self.eps / self.h ** 2
        active = m > ACTIVE_FRACTION * max(float(m.max()), 1e-300)
        return float(rate[active].max()) if np.any(active) else 0.0

    def advance(self, t, dt):
        m = self.m
        # bordi chiusi: flusso nullo sulle due facce esterne
        F = np.concatenate(([0.0], self.flux, [0.0]))
        new = m - dt / self.h * (F[1:] - F[:-1])
        neg = new < 0
        if np.any(neg):
            self.health.clip(float(-self.h * new[neg].sum()), t)
            new = np.where(neg, 0.0, new)
        self.m = new


def _density_flow(m0, spec, extras_hook=None):
    health = _Health()
    stepper = _DensityStepper(m0, spec, health)
    flow = _collect([stepper], [health], spec, extras_hook)[0]
    return flow


def _collect(steppers, healths, spec, extras_hook=None):
    series = [([], [], [], [], {}) for _ in steppers]

    def record(t):
        for k, s in enumerate(steppers):
            times, dens, cdfs, fields, extras = series[k]
            d = s.density()
            times.append(t)
            dens.append(d)
            cdfs.append(density_to_cdf(d))
            fields.append({'H': hilbert_field(d)})
            if extras_hook is not None:
                extras_hook(t, d, extras)
        logger.info("forma densità: campione a t=%.6g", t)

    logger.info("forma densità (nucleo %s, drift %s): n=%d t_end=%g",
                spec.kernel.name, spec.kernel.drift.name, spec.grid.n, spec.t_end)
    _march(spec, steppers, record)
    return [FlowRecord(times, dens, cdfs, fields, health.as_dict(), spec.describe(), extras)
            for (times, dens, cdfs, fields, extras), health in zip(series, healths)]


def solve_density(m0, spec):
    if spec.form != 'density':
        raise ConfigError("solve_density richiede la forma 'density'")
    return _density_flow(m0, spec)


def solve_sigma(m0, sigma, spec):
    """Flusso m sigma(m) K[m]; sigma = None riproduce esattamente ``solve_density``."""
    if spec.form != 'density':
        raise ConfigError("solve_sigma richiede la forma 'density'")
    sigma = parse_sigma(sigma) if isinstance(sigma, str) else sigma
    if sigma is not None and not isinstance(sigma, Sigma):
        sigma = Sigma(sigma)
    return _density_flow(m0, _replace(spec, sigma=sigma))


def solve_coupled(m0_1, m0_2, spec, b1=None, b2=None):
    """
    Due flussi in parallelo con passo comune; all'inizio di ogni passo i drift di
    accoppiamento sono congelati sulle densità correnti. ``b1``/``b2`` sono funzioni
    ``(m_self, m_other, x) -> velocità``; senza di esse vale ``spec.coupling``.
    """
    if spec.form != 'coupled':
        raise ConfigError("solve_coupled richiede la forma 'coupled'")
    k = parse_coupling(spec.coupling)
    if b1 is None and b2 is None and k is not None:
        def attraction(m_self, m_other, x):
            mean = float(m_other.h * np.sum(m_other.x * m_other.values) / (m_other.h * np.sum(m_other.values)))
            return k * (mean - x)
        b1 = b2 = attraction
    h1, h2 = _Health(), _Health()
    s1 = _DensityStepper(m0_1, spec, h1)
    s2 = _DensityStepper(m0_2, spec, h2)

    class _Frozen:
        """Congela l'accoppiamento all'inizio del passo."""
        def __init__(self, own, other, fn):
            self.own, self.other, self.fn = own, other, fn

        def prepare(self, t):
            if self.fn is not None:
                ds, do = self.own.density(), self.other.density()
                self.own.extra = lambda x: self.fn(ds, do, x)
            return self.own.prepare(t)

        def advance(self, t, dt):
            self.own.advance(t, dt)

        def density(self):
            return self.own.density()

    pair = [_Frozen(s1, s2, b1), _Frozen(s2, s1, b2)]
    # entrambi i drift leggono le densità prima di qualsiasi aggiornamento del passo
    return tuple(_collect(pair, [h1, h2], spec))


# =========================
# Riflessione per penalizzazione
# =========================

@dataclass(frozen=True)
class ReflectionReport:
    eps: float
    overshoot_mass: float
    mass: float
    mean_overshoot: float
    sup_beyond: float
    linf_initial: float
    linf_max: float

    @property
    def linf_ok(self):
        return self.linf_max <= self.linf_initial + CLIP_TOL

    def as_dict(self):
        return {
            'eps': self.eps, 'overshoot_mass': self.overshoot_mass, 'mass': self.mass,
            'mean_overshoot': self.mean_overshoot, 'sup_beyond': self.sup_beyond,
            'linf_initial': self.linf_initial, 'linf_max': self.linf_max, 'linf_ok': self.linf_ok,
        }


@dataclass
class ReflectionSweep:
    flows: dict
    reports: list

    def scaling(self):
        """Pendenze log-log della massa oltre R0 rispetto a eps fra valori consecutivi."""
        rs = sorted(self.reports, key=lambda r: r.eps)
        out = []
        for a, b in zip(rs[:-1], rs[1:]):
            ma, mb = a.overshoot_mass, b.overshoot_mass
            if ma > 0 and mb > 0:
                out.append(math.log(mb / ma) / math.log(b.eps / a.eps))
        return out


def reflection_report(flow, R0, eps, kappa=None):
    d0 = flow.densities[0]
    kappa = 2 * d0.h if kappa is None else kappa
    last = flow.densities[-1]
    x = last.x
    beyond = x > R0
    cells = last.h * np.asarray(last.values)
    over = float(cells[beyond].sum())
    mean_over = float(np.sum(cells[beyond] * (x[beyond] - R0)) / over) if over > 0 else 0.0
    u = np.cumsum(cells) - 0.5 * cells
    far = x >= R0 + kappa
    sup_beyond = float(np.max(1.0 - u[far])) if np.any(far) else 0.0
    return ReflectionReport(
        eps=eps, overshoot_mass=over, mass=last.mass,
        mean_overshoot=mean_over, sup_beyond=sup_beyond,
        linf_initial=lp_norm(d0, math.inf),
        linf_max=max(lp_norm(d, math.inf) for d in flow.densities),
    )


def solve_reflected(m0, R0, eps_sequence, spec, kappa=None):
    """Una corsa penalizzata per ogni eps; ``ReflectionSweep`` con i flussi e i rapporti."""
    if spec.form != 'density':
        raise ConfigError("solve_reflected richiede la forma 'density'")
    flows, reports = {}, []
    for eps in eps_sequence:
        flow = _density_flow(m0, _replace(spec, penalty=Penalty(R0, eps)))
        rep = reflection_report(flow, R0, eps, kappa)
        flow.extras['reflection'] = rep.as_dict()
        flows[eps] = flow
        reports.append(rep)
        logger.info("riflessione eps=%g: massa oltre R0 %.3g, massa totale %.12g", eps, rep.overshoot_mass, rep.mass)
    return ReflectionSweep(flows, reports)


def solve(initial, spec, **kwargs):
    """Smistamento per forma; ``initial`` è CdfGrid (cdf, wishart) o GridDensity (density)."""
    if spec.form == 'wishart':
        return solve_wishart(_as_cdf(initial), spec)
    if spec.form == 'cdf':
        if spec.beta is not None:
            return solve_with_B(_as_cdf(initial), spec.beta, spec, kwargs.get('perturbation', 1e-3))
        if spec.kernel.drift.variant == 'singular':
            return solve_singular_drift(_as_cdf(initial), spec)
        return solve_cdf(_as_cdf(initial), spec)
    if spec.form == 'density':
        if spec.sigma is not None:
            return solve_sigma(_as_density(initial), spec.sigma, spec)
        return solve_density(_as_density(initial), spec)
    raise ConfigError("la forma 'coupled' richiede solve_coupled")


def _as_cdf(obj):
    return density_to_cdf(obj) if isinstance(obj, GridDensity) else obj


def _as_density(obj):
    return cdf_to_density(obj, normalize=True) if isinstance(obj, CdfGrid) else obj
