"""
Sistema di particelle interagenti (moto browniano di Dyson generalizzato).

Eulero-Maruyama vettorizzato sulle repliche (array R x N), con riordino dopo ogni passo.
Il rumore viene da Philox con chiave ``seed`` e contatore ``[0, passo, livello, ramo]``:
la replica r legge i valori ``[r*N, (r+1)*N)`` dello stream, in ordine crescente di particella,
quindi il risultato di una replica non dipende da quante repliche girano insieme.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import SemicircleFamily
from .errors import ConfigError, StepFailure
from .kernel import InteractionKernel, dyson_kernel
from .measure import GridDensity, ParticleEnsemble, hilbert

logger = logging.getLogger(__name__)

HALVING_DEPTH = 20
GAP_FLOOR_FACTOR = 1e-12
# sotto questo gap il drift non è affidabile (sotto-passi)
OVERFLOW_GAP = 1e-14
# tolleranza relativa con cui un tempo di campionamento cade sulla griglia di dt
SAMPLE_SNAP = 1e-9
# elementi per blocco nel calcolo a coppie (R x N x N)
PAIR_BLOCK = 4_000_000


@dataclass(frozen=True)
class Barrier:
    """Barriera in R0: penalizzazione -(1/eps)(x - R0)_+ oppure riflessione esatta (``hard``)."""
    R0: float
    eps: float = None
    hard: bool = False

    def __post_init__(self):
        if not self.hard and not (self.eps is not None and self.eps > 0):
            raise ConfigError("la barriera penalizzata richiede eps > 0")


@dataclass(frozen=True)
class SdeConfig:
    N: int
    dt: float
    t_end: float
    seed: int
    initial: np.ndarray
    kernel: InteractionKernel = field(default_factory=dyson_kernel)
    noise_scale: float = None
    barrier: Barrier = None
    wishart_eta: float = None
    replicas: int = 1
    sample_times: tuple = ()
    moments_only: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("servono almeno N=1 particelle")
        if not self.dt > 0:
            raise ConfigError("dt deve essere positivo")
        if self.t_end < 0:
            raise ConfigError("t_end deve essere non negativo")
        if self.replicas < 1:
            raise ConfigError("servono almeno una replica")
        if self.wishart_eta is not None and self.wishart_eta < 1:
            raise ConfigError("Wishart richiede eta >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("il seme deve essere un intero a 64 bit senza segno")
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (self.N,):
            raise ConfigError(f"posizioni iniziali: attese {self.N}, ricevute {init.size}")
        if self.wishart_eta is not None and np.any(init <= 0):
            raise ConfigError("con Wishart le posizioni iniziali devono essere positive")
        object.__setattr__(self, 'initial', np.sort(init))
        if self.noise_scale is None:
            object.__setattr__(self, 'noise_scale', math.sqrt(2.0 / self.N))
        times = tuple(sorted(set(float(t) for t in (self.sample_times or (self.t_end,)))))
        if any(t < 0 or t > self.t_end + 1e-12 for t in times):
            raise ConfigError("tempi di campionamento fuori da [0, t_end]")
        for t in times:
            k = t / self.dt
            if abs(k - round(k)) > SAMPLE_SNAP * max(1.0, k):
                raise ConfigError(f"il tempo di campionamento {t:g} non è multiplo di dt={self.dt:g}")
        object.__setattr__(self, 'sample_times', times)

    @property
    def steps(self):
        return int(round(self.t_end / self.dt))


# =========================
# Processo a(t) dello spike
# =========================

@dataclass(frozen=True)
class APath:
    """a(t): 'constant' (a0), 'linear' (a0 + v t), 'sqrt' (a0 + k sqrt(t)), 'table' (interpolazione)."""
    kind: str = 'constant'
    a0: float = 0.0
    rate: float = 0.0
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ('constant', 'linear', 'sqrt', 'table'):
            raise ConfigError(f"processo a(t) sconosciuto: {self.kind!r}")
        if self.kind == 'table' and (len(self.times) < 2 or len(self.times) != len(self.values)):
            raise ConfigError("a(t) tabulato: servono almeno due coppie (t, a)")

    def __call__(self, t):
        if self.kind == 'constant':
            return self.a0
        if self.kind == 'linear':
            return self.a0 + self.rate * t
        if self.kind == 'sqrt':
            return self.a0 + self.rate * math.sqrt(max(t, 0.0))
        return float(np.interp(t, self.times, self.values))


def parse_apath(text):
    """'constant' | 'linear(v)' | 'sqrt(k)'"""
    from .kernel import _parse_call

    name, values = _parse_call(text or 'constant')
    if name == 'constant' and len(values) <= 1:
        return APath('constant', values[0] if values else 0.0)
    if name in ('linear', 'sqrt') and len(values) == 1:
        return APath(name, 0.0, values[0])
    raise ConfigError(f"processo a(t) non riconosciuto: {text!r}")


@dataclass(frozen=True)
class SpikeConfig:
    lambda0: float
    a_path: APath = APath()


# =========================
# Drift e passo
# =========================

def _pair_sum(pos, kernel, wishart):
    """(1/N) sum_{j != i} f(l_i, l_j)/(l_i - l_j) per ogni riga di ``pos`` (R x N)."""
    R, N = pos.shape
    out = np.empty_like(pos)
    block = max(1, PAIR_BLOCK // max(N * N, 1))
    eye = np.eye(N, dtype=bool)
    for start in range(0, R, block):
        p = pos[start:start + block]
        D = p[:, :, None] - p[:, None, :]
        D = np.where(eye[None], np.inf, D)
        if kernel.pure or wishart:
            S = (1.0 / D).sum(axis=2)
            if wishart:
                S = p * S
        else:
            F = kernel.f(p[:, :, None], p[:, None, :])
            S = np.where(eye[None], 0.0, F / D).sum(axis=2)
        out[start:start + block] = S / N
    return out


def _velocity(pos, cfg, t):
    wishart = cfg.wishart_eta is not None
    v = _pair_sum(pos, cfg.kernel, wishart)
    v = v + cfg.kernel.drift(pos, t)
    if wishart:
        v = v + (cfg.wishart_eta - 1.0)
    return v


def drift(e, k, t=0.0, barrier=None, wishart_eta=None):
    """Velocità per particella: (1/N) sum f(l_i,l_j)/(l_i-l_j) + b(l_i) (+ penalizzazione)."""
    pos = np.asarray(e.positions, dtype=float)[None, :]
    if np.any(np.diff(pos[0]) < OVERFLOW_GAP):
        raise StepFailure("gap sotto la soglia di overflow", t=t)
    v = _pair_sum(pos, k, wishart_eta is not None)[0] + k.drift(pos[0], t)
    if wishart_eta is not None:
        v = v + (wishart_eta - 1.0)
    if barrier is not None and not barrier.hard:
        v = v - np.clip(pos[0] - barrier.R0, 0.0, None) / barrier.eps
    return v


def _normals(seed, step, level, branch, rows, N):
    """Normali standard per le righe ``rows`` dal blocco di contatore (passo, livello, ramo)."""
    bitgen = np.random.Philox(key=int(seed), counter=[0, step, level, branch])
    gen = np.random.Generator(bitgen)
    top = int(rows.max()) + 1
    return gen.standard_normal(top * N).reshape(top, N)[rows]


def _apply_barrier(pos, cfg, tau):
    b = cfg.barrier
    if b is None:
        return pos
    if b.hard:
        return np.where(pos > b.R0, 2 * b.R0 - pos, pos)
    # la parte lineare della penalizzazione è integrata esattamente sul passo
    over = pos - b.R0
    return np.where(over > 0, b.R0 + over * math.exp(-tau / b.eps), pos)


def _em(pos, cfg, t, tau, dW):
    v = _velocity(pos, cfg, t)
    if cfg.wishart_eta is not None:
        noise = cfg.noise_scale * np.sqrt(np.clip(pos, 0.0, None)) * dW
    else:
        noise = cfg.noise_scale * dW
    new = pos + v * tau + noise
    new = _apply_barrier(new, cfg, tau)
    if cfg.wishart_eta is not None:
        new = np.abs(new)
    return np.sort(new, axis=1)


def _gap_floor(pos):
    width = float(np.max(pos) - np.min(pos)) if pos.size > 1 else 1.0
    return GAP_FLOOR_FACTOR * max(width, 1.0)


def _bad_rows(new):
    if new.shape[1] < 2:
        return ~np.all(np.isfinite(new), axis=1)
    gaps = np.diff(new, axis=1)
    return ~np.all(np.isfinite(new), axis=1) | (gaps.min(axis=1) < _gap_floor(new))


def _advance(pos, rows, cfg, t, tau, dW, step, level, branch, stats):
    new = _em(pos, cfg, t, tau, dW)
    bad = _bad_rows(new)
    if not np.any(bad):
        return new
    if level >= HALVING_DEPTH:
        raise StepFailure(f"gap sotto la soglia dopo {HALVING_DEPTH} dimezzamenti", t=t)
    stats['halvings'] += 1
    logger.warning("passo dimezzato a t=%.6g (livello %d, %d repliche)", t, level + 1, int(bad.sum()))
    sub_rows = rows[bad]
    xi = _normals(cfg.seed, step, level + 1, branch, sub_rows, pos.shape[1])
    # ponte browniano: incremento della prima metà dato l'incremento totale
    dW1 = 0.5 * dW[bad] + math.sqrt(tau / 4.0) * xi
    dW2 = dW[bad] - dW1
    mid = _advance(pos[bad], sub_rows, cfg, t, 0.5 * tau, dW1, step, level + 1, 2 * branch, stats)
    end = _advance(mid, sub_rows, cfg, t + 0.5 * tau, 0.5 * tau, dW2, step, level + 1, 2 * branch + 1, stats)
    new[bad] = end
    return new


def step(e, config, rng=None, t=0.0, step_index=0, replica=0):
    """
    Un passo di Eulero-Maruyama per un insieme; ``rng`` (opzionale) fornisce le normali,
    altrimenti si usa lo stream contatore-based della replica.
    """
    pos = np.asarray(e.positions, dtype=float)[None, :]
    if rng is not None:
        dW = math.sqrt(config.dt) * rng.standard_normal(e.N)[None, :]
    else:
        dW = math.sqrt(config.dt) * _normals(config.seed, step_index, 0, 0, np.array([replica]), e.N)
    stats = {'halvings': 0}
    new = _advance(pos, np.array([replica]), config, t, config.dt, dW, step_index, 0, 0, stats)
    return ParticleEnsemble(new[0])


# =========================
# Spike
# =========================

@dataclass(frozen=True)
class SpikeStep:
    value: float
    absorbed: bool


def bulk_hilbert(bulk, x):
    """H[bulk](x) per insieme (somma senza esclusione), densità su griglia o semicerchio."""
    if isinstance(bulk, ParticleEnsemble):
        return float(np.mean(1.0 / (x - bulk.positions)))
    if isinstance(bulk, GridDensity):
        return float(hilbert(bulk, x))
    if isinstance(bulk, SemicircleFamily):
        return float(bulk.hilbert(x))
    raise TypeError(f"bulk non supportato: {type(bulk).__name__}")


def bulk_edge(bulk):
    if isinstance(bulk, ParticleEnsemble):
        return float(bulk.positions[-1])
    if isinstance(bulk, GridDensity):
        idx = np.flatnonzero(np.asarray(bulk.values) > 0)
        return float(bulk.grid.edges[idx[-1] + 1]) if idx.size else float(bulk.grid.lo)
    if isinstance(bulk, SemicircleFamily):
        return bulk.edge
    raise TypeError(f"bulk non supportato: {type(bulk).__name__}")


def spike_step(spike, bulk, dt, a_increment=0.0, gap_floor=None):
    """lambda' = lambda + H[bulk](lambda) dt + (a(t+dt) - a(t)); assorbito se lambda' <= bordo + gap."""
    edge = bulk_edge(bulk)
    if spike <= edge:
        raise ConfigError("lo spike deve stare strettamente a destra del bulk")
    new = spike + bulk_hilbert(bulk, spike) * dt + a_increment
    floor = GAP_FLOOR_FACTOR * max(abs(edge), 1.0) if gap_floor is None else gap_floor
    return SpikeStep(float(new), bool(new <= edge + floor))


@dataclass(frozen=True)
class SpikePath:
    times: np.ndarray
    spike: np.ndarray
    Z: np.ndarray
    absorbed_at: float = None


def simulate_spike(spike, bulk_provider, dt, t_end, t_start=0.0):
    """
    Integra lo spike contro un bulk ``bulk_provider(t)``. Z = lambda^2 - bordo^2; l'assorbimento
    è fissato all'attraversamento di zero di sqrt(Z), estrapolato linearmente dagli ultimi passi.
    """
    a = spike.a_path
    t = t_start
    lam = float(spike.lambda0)
    n = int(round((t_end - t_start) / dt))
    times, lams, Zs = [t], [lam], []
    edge = bulk_edge(bulk_provider(t))
    Zs.append(lam * lam - edge * edge)
    absorbed_at = None
    for k in range(n):
        bulk = bulk_provider(t)
        res = spike_step(lam, bulk, dt, a(t + dt) - a(t))
        t_new = t_start + (k + 1) * dt
        edge_new = bulk_edge(bulk_provider(t_new))
        Z_new = res.value ** 2 - edge_new ** 2
        r_prev = math.sqrt(max(Zs[-1], 0.0))
        if res.absorbed or Z_new <= 0:
            absorbed_at = t + dt * r_prev / max(r_prev - (-math.sqrt(-Z_new) if Z_new < 0 else 0.0), 1e-300)
            break
        r_new = math.sqrt(Z_new)
        drop = r_prev - r_new
        times.append(t_new)
        lams.append(res.value)
        Zs.append(Z_new)
        t, lam = t_new, res.value
        if drop > 0 and r_new <= drop:
            # sqrt(Z) è lineare vicino all'assorbimento
            absorbed_at = t + dt * r_new / drop
            break
    if absorbed_at is not None:
        logger.info("spike assorbito a t=%.8g", absorbed_at)
    return SpikePath(np.array(times), np.array(lams), np.array(Zs), absorbed_at)


# =========================
# Simulazione
# =========================

@dataclass
class TrajectoryRecord:
    """Tempi campionati, posizioni (R x N) o momenti per tempo, spike per replica, provenienza RNG."""
    times: np.ndarray
    ensembles: list
    moments: list
    spikes: list
    provenance: dict
    absorbed_at: np.ndarray = None
    halvings: int = 0

    def ensemble(self, i, replica=0):
        return ParticleEnsemble(self.ensembles[i][replica])

    def pooled(self, i):
        """Misura empirica di tutte le repliche insieme (R N particelle)."""
        return ParticleEnsemble.from_unsorted(np.ravel(self.ensembles[i]))

    def moment_rows(self):
        """Per tempo campionato: medie sulle repliche di m1, m2, m4, max, min e dello spike."""
        rows = []
        for i, t in enumerate(self.times):
            per = self.moments[i] if self.ensembles[i] is None else [_moments_row(p) for p in self.ensembles[i]]
            row = {'t': float(t)}
            for key in ('m1', 'm2', 'm4', 'max', 'min'):
                row[key] = float(np.mean([r[key] for r in per]))
            row['spike'] = None if self.spikes[i] is None else float(np.mean(self.spikes[i]))
            rows.append(row)
        return rows

    def write_jsonl(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as fh:
            for i, t in enumerate(self.times):
                R = len(self.moments[i]) if self.ensembles[i] is None else self.ensembles[i].shape[0]
                for r in range(R):
                    rec = {'t': float(t), 'replica': r}
                    if self.ensembles[i] is None:
                        rec.update(self.moments[i][r])
                    else:
                        rec['positions'] = [float(v) for v in self.ensembles[i][r]]
                    rec['spike'] = None if self.spikes[i] is None else float(self.spikes[i][r])
                    fh.write(json.dumps(rec, sort_keys=True))
                    fh.write('\n')
        return path


def _moments_row(p):
    return {
        'm1': float(np.mean(p)), 'm2': float(np.mean(p ** 2)), 'm4': float(np.mean(p ** 4)),
        'max': float(np.max(p)), 'min': float(np.min(p)),
    }


def simulate(config, spike=None):
    """Esegue ``step`` sulla griglia temporale per tutte le repliche e campiona ai tempi richiesti."""
    cfg = config
    R, N = cfg.replicas, cfg.N
    steps = cfg.steps
    sample_steps = {int(round(t / cfg.dt)): t for t in cfg.sample_times}
    pos = np.tile(cfg.initial, (R, 1))
    rows = np.arange(R)
    lam = None
    absorbed = None
    if spike is not None:
        if spike.lambda0 <= float(cfg.initial[-1]):
            raise ConfigError("lo spike iniziale deve stare a destra del bulk")
        lam = np.full(R, float(spike.lambda0))
        absorbed = np.full(R, np.nan)
    times, ensembles, moments, spikes = [], [], [], []
    stats = {'halvings': 0}

    def record(k):
        times.append(sample_steps[k])
        if cfg.moments_only:
            ensembles.append(None)
            moments.append([_moments_row(p) for p in pos])
        else:
            ensembles.append(pos.copy())
            moments.append(None)
        spikes.append(None if lam is None else lam.copy())

    logger.info("simulazione: N=%d repliche=%d passi=%d dt=%g", N, R, steps, cfg.dt)
    if 0 in sample_steps:
        record(0)
    for k in range(steps):
        t = k * cfg.dt
        dW = math.sqrt(cfg.dt) * _normals(cfg.seed, k, 0, 0, rows, N)
        if lam is not None:
            live = np.isnan(absorbed)
            if np.any(live):
                H = np.mean(1.0 / (lam[live, None] - pos[live]), axis=1)
                lam_new = lam[live] + H * cfg.dt + (spike.a_path(t + cfg.dt) - spike.a_path(t))
        pos = _advance(pos, rows, cfg, t, cfg.dt, dW, k, 0, 0, stats)
        if lam is not None and np.any(live):
            idx = np.flatnonzero(live)
            edge = pos[idx, -1]
            hit = lam_new <= edge + _gap_floor(pos)
            absorbed[idx[hit]] = t + cfg.dt
            lam[idx] = np.where(hit, edge, lam_new)
            still = np.isnan(absorbed)
            lam[~still] = pos[~still, -1]
        if k + 1 in sample_steps:
            record(k + 1)
    provenance = {
        'generator': 'Philox', 'seed': int(cfg.seed),
        'counter': '[0, step, level, branch]', 'stream_layout': 'replica-major, ascending particle',
        'noise_scale': cfg.noise_scale, 'dt': cfg.dt, 'halving_depth': HALVING_DEPTH,
    }
    logger.info("simulazione conclusa (%d dimezzamenti)", stats['halvings'])
    return TrajectoryRecord(np.array(times), ensembles, moments, spikes, provenance,
                            absorbed_at=absorbed, halvings=stats['halvings'])


# =========================
# Dati iniziali e riassunti
# =========================

def seed_cluster(N, radius=0.0, center=0.0):
    """Quantili medi del semicerchio di raggio ``radius`` (punti equispaziati se radius=0)."""
    if radius <= 0:
        return center + 1e-9 * (np.arange(N) - 0.5 * (N - 1))
    q = (np.arange(N) + 0.5) / N
    fam = SemicircleFamily(radius, center)
    # inversione della CDF per bisezione vettoriale
    lo = np.full(N, center - radius)
    hi = np.full(N, center + radius)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = fam.cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GapLawRow:
    t: float
    mean_s2: float
    stderr: float
    expected: float

    @property
    def zscore(self):
        return (self.mean_s2 - self.expected) / self.stderr if self.stderr > 0 else math.inf


def gap_law_summary(record, s0=None):
    """Per N=2: stima di E[s_t^2] con errore standard, contro s0^2 + 4t."""
    if record.ensembles[0] is None or record.ensembles[0].shape[1] != 2:
        raise ConfigError("la legge del gap richiede N=2 con posizioni registrate")
    if s0 is None:
        if record.times[0] != 0:
            raise ConfigError("serve s0 o un campione a t=0")
        s0 = float(np.mean(np.diff(record.ensembles[0], axis=1)))
    rows = []
    for t, ens in zip(record.times, record.ensembles):
        s2 = np.diff(ens, axis=1)[:, 0] ** 2
        se = float(np.std(s2, ddof=1) / math.sqrt(len(s2))) if len(s2) > 1 else 0.0
        rows.append(GapLawRow(float(t), float(np.mean(s2)), se, s0 ** 2 + 4.0 * float(t)))
    return rows
