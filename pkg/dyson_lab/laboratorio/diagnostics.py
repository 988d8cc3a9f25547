"""
Verifica delle identità e delle stime lungo i flussi registrati.

Ogni controllo restituisce un ``CheckReport`` con i valori misurati per tempo,
la tolleranza usata (costruita dai contatori di salute dello schema dove possibile),
la violazione peggiore e la provenienza dei dati.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import PreconditionError
from .measure import entropy_dissipation, free_entropy, lp_norm, variance, wasserstein

logger = logging.getLogger(__name__)

LINF_SLACK_PER_H = 5.0
LP_SLACK = 1e-6
ENTROPY_REL = 0.01
ENTROPY_ABS = 1e-4
ENTROPY_MONOTONE_SLACK = 1e-9
VARIANCE_REL = 0.02
OU_RESIDUAL = 0.05
COMPARISON_SLACK = 1e-8
# pendenza attesa -1/2 a meno di un fattore 3
SLOPE_RANGE = (-1.5, -1.0 / 6.0)


@dataclass
class CheckReport:
    name: str
    passed: bool
    values: dict
    tolerance: dict
    worst: float
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {
            'name': self.name, 'passed': bool(self.passed), 'values': self.values,
            'tolerance': self.tolerance, 'worst': float(self.worst),
            'provenance': self.provenance, 'notes': list(self.notes),
        }


def _provenance(*flows):
    out = {}
    for k, f in enumerate(flows):
        src = getattr(f, 'source', None)
        if src:
            out[f'input_{k}'] = src
    return out


def _health_slack(*flows):
    total = 0.0
    for f in flows:
        hl = f.health or {}
        total += float(hl.get('clip_total') or 0.0) + float(hl.get('clamp_total') or 0.0)
    return total


def _grid_h(flow):
    return float(flow.densities[0].h)


# =========================
# Controlli su un flusso
# =========================

def check_linf_bound(flow, C=None, t_min=None):
    """sup_x m(t,x) sqrt(t) <= C per t >= t_min; senza C si usa 1 + 5h (Dyson puro)."""
    h = _grid_h(flow)
    limit = 1.0 + LINF_SLACK_PER_H * h if C is None else float(C)
    times, vals = [], []
    for t, d in zip(flow.times, flow.densities):
        if t <= 0 or (t_min is not None and t < t_min - 1e-12):
            continue
        times.append(float(t))
        vals.append(lp_norm(d, math.inf) * math.sqrt(t))
    if not vals:
        raise PreconditionError("nessun tempo positivo campionato")
    c_fit = max(vals)
    return CheckReport(
        'linf', c_fit <= limit, {'t': times, 'm_sqrt_t': vals, 'C_fit': c_fit},
        {'C': limit}, c_fit - limit, _provenance(flow),
    )


def check_lp_decay(flow, ps=(2, 3, math.inf)):
    slack = LP_SLACK + _health_slack(flow)
    values = {'t': [float(t) for t in flow.times]}
    worst = -math.inf
    for p in ps:
        norms = [lp_norm(d, p) for d in flow.densities]
        values[f'p={p}'] = norms
        if len(norms) > 1:
            worst = max(worst, float(np.max(np.diff(norms))))
    worst = max(worst, 0.0) if math.isfinite(worst) else 0.0
    return CheckReport('lp', worst <= slack, values, {'slack': slack}, worst - slack, _provenance(flow))


def check_entropy_identity(flow, t_range=(0.1, 1.0)):
    """
    E(m_t) - E(m_t0) = int_t0^t int H[m]^2 m: integrale in tempo con Simpson cumulativo,
    residuo <= 1% |E(m_t) - E(m_t0)| + 1e-4; E non decrescente.
    """
    lo, hi = t_range
    idx = [i for i, t in enumerate(flow.times) if lo - 1e-12 <= t <= hi + 1e-12]
    if len(idx) < 3:
        raise PreconditionError("servono almeno tre campioni nell'intervallo")
    t = np.array([flow.times[i] for i in idx], dtype=float)
    E = np.array([free_entropy(flow.densities[i]) for i in idx])
    D = np.array([entropy_dissipation(flow.densities[i]) for i in idx])
    if not np.all(np.isfinite(E)):
        raise PreconditionError("entropia infinita: misura concentrata in una cella")
    integral = cumulative_simpson(D, x=t, initial=0.0)
    dE = E - E[0]
    residual = dE - integral
    allowed = ENTROPY_REL * np.abs(dE) + ENTROPY_ABS
    excess = np.abs(residual) - allowed
    monotone = bool(np.all(np.diff(E) >= -ENTROPY_MONOTONE_SLACK - _health_slack(flow)))
    worst = float(excess.max())
    return CheckReport(
        'entropy', worst <= 0 and monotone,
        {'t': t.tolist(), 'E': E.tolist(), 'dissipation': D.tolist(),
         'integral': integral.tolist(), 'residual': residual.tolist(), 'E_nondecreasing': monotone},
        {'relative': ENTROPY_REL, 'absolute': ENTROPY_ABS}, worst, _provenance(flow),
        notes=[] if monotone else ["E decresce lungo il flusso"],
    )


def check_variance_identity(flow, drift_k=0.0, t_range=None):
    """
    Dyson puro (``drift_k = 0``): pendenza della retta Var(t) entro 2% di 1.
    Con b = -k x: Var' = 1 - 2k Var, residuo massimo <= 5%.
    """
    t = np.array(flow.times, dtype=float)
    keep = np.ones(len(t), dtype=bool) if t_range is None else (t >= t_range[0] - 1e-12) & (t <= t_range[1] + 1e-12)
    t = t[keep]
    var = np.array([variance(d) for d, k in zip(flow.densities, keep) if k])
    if len(t) < 3:
        raise PreconditionError("servono almeno tre campioni")
    if drift_k == 0:
        slope = float(np.polyfit(t, var, 1)[0])
        err = abs(slope - 1.0)
        return CheckReport(
            'variance', err <= VARIANCE_REL, {'t': t.tolist(), 'variance': var.tolist(), 'slope': slope},
            {'relative': VARIANCE_REL}, err - VARIANCE_REL, _provenance(flow),
        )
    dvar = np.gradient(var, t)
    residual = dvar - (1.0 - 2.0 * drift_k * var)
    worst = float(np.max(np.abs(residual)))
    return CheckReport(
        'variance', worst <= OU_RESIDUAL,
        {'t': t.tolist(), 'variance': var.tolist(), 'dvar': dvar.tolist(), 'residual': residual.tolist()},
        {'absolute': OU_RESIDUAL, 'k': drift_k}, worst - OU_RESIDUAL, _provenance(flow),
    )


# =========================
# Controlli su coppie di flussi
# =========================

def _common_times(a, b):
    tb = np.asarray(b.times, dtype=float)
    pairs = []
    for i, t in enumerate(a.times):
        j = int(np.argmin(np.abs(tb - t)))
        if abs(tb[j] - t) <= 1e-9 * max(1.0, abs(t)):
            pairs.append((float(t), i, j))
    if not pairs:
        raise PreconditionError("nessun tempo di campionamento in comune")
    return pairs


def check_w_contraction(flow1, flow2, p=2):
    """W_p(mu_t, nu_t) non crescente; margine 2 (massa tagliata + correzioni + h^2)."""
    pairs = _common_times(flow1, flow2)
    h = max(_grid_h(flow1), _grid_h(flow2))
    slack = 2.0 * (_health_slack(flow1, flow2) + h * h) + 1e-9
    dist = [wasserstein(flow1.densities[i], flow2.densities[j], p) for _, i, j in pairs]
    worst = float(np.max(np.diff(dist))) if len(dist) > 1 else 0.0
    return CheckReport(
        'w_contraction', worst <= slack, {'t': [t for t, _, _ in pairs], f'W{p}': dist},
        {'slack': slack}, worst - slack, _provenance(flow1, flow2),
    )


def _support_edge(u, tol=1e-6):
    v = np.asarray(u.values)
    below = np.flatnonzero(v < 1.0 - tol)
    return float(u.x[below[-1]] + u.h) if below.size else float(u.x[0])


def check_comparison(flow1, flow2, slack=COMPARISON_SLACK):
    """
    Ordinamento delle CDF conservato nel tempo. I dati iniziali devono essere ordinati
    (altrimenti ``PreconditionError``); si riporta anche il bordo del supporto del flusso
    dominato contro bordo iniziale + 2 sqrt(t).
    """
    pairs = _common_times(flow1, flow2)
    u1, u2 = flow1.cdfs[pairs[0][1]], flow2.cdfs[pairs[0][2]]
    if u1.n != u2.n or abs(u1.x0 - u2.x0) > 1e-9 * u1.h or not math.isclose(u1.h, u2.h):
        raise PreconditionError("le CDF devono stare sulla stessa griglia")
    a, b = np.asarray(u1.values), np.asarray(u2.values)
    if np.all(a <= b + slack):
        lo, hi, order = flow1, flow2, pairs
    elif np.all(b <= a + slack):
        lo, hi, order = flow2, flow1, [(t, j, i) for t, i, j in pairs]
    else:
        raise PreconditionError("dati iniziali non ordinati: le CDF si incrociano")
    gaps, edges, bounds = [], [], []
    edge0 = _support_edge(hi.cdfs[order[0][2]])
    for t, i, j in order:
        ul, uh = lo.cdfs[i], hi.cdfs[j]
        gaps.append(float(np.max(np.asarray(ul.values) - np.asarray(uh.values))))
        edges.append(_support_edge(uh))
        bounds.append(edge0 + 2.0 * math.sqrt(t) + 2 * uh.h)
    worst = max(gaps)
    edge_ok = all(e <= bd for e, bd in zip(edges, bounds))
    return CheckReport(
        'comparison', worst <= slack,
        {'t': [t for t, _, _ in pairs], 'max_violation': gaps, 'edge': edges, 'edge_bound': bounds,
         'edge_ok': edge_ok},
        {'slack': slack}, worst - slack, _provenance(flow1, flow2),
        notes=[] if edge_ok else ["bordo del supporto oltre bordo iniziale + 2 sqrt(t)"],
    )


def check_drift_perturbation(flow_b, flow_b2, drift_gap, rate):
    """W_2^2(m^b, m^b') <= (e^{C t} - 1) ||b - b'||_inf^2 (+ margine di schema)."""
    pairs = _common_times(flow_b, flow_b2)
    slack = 2.0 * (_health_slack(flow_b, flow_b2) + _grid_h(flow_b) ** 2)
    w2sq = [wasserstein(flow_b.densities[i], flow_b2.densities[j], 2) ** 2 for _, i, j in pairs]
    bound = [(math.exp(rate * t) - 1.0) * drift_gap ** 2 + slack for t, _, _ in pairs]
    excess = max(w - bd for w, bd in zip(w2sq, bound))
    return CheckReport(
        'drift_perturbation', excess <= 0,
        {'t': [t for t, _, _ in pairs], 'W2_squared': w2sq, 'bound': bound},
        {'C': rate, 'gap': drift_gap, 'slack': slack}, excess, _provenance(flow_b, flow_b2),
    )


# =========================
# Chiusura particelle / PDE / riferimento
# =========================

def convergence_report(particles, pde, analytic, t=None, w2_particle_pde=None, w2_pde_analytic=None):
    """
    ``particles``: {N: TrajectoryRecord}; ``analytic(t)``: GridDensity di riferimento.
    Tabella W1/W2 al tempo ``t`` (di default l'ultimo del flusso) e pendenza log-log
    dell'errore particelle-riferimento rispetto a N.
    """
    t = float(pde.times[-1]) if t is None else float(t)
    ref = analytic(t)
    m_pde = pde.density_at(t)
    rows = []
    for N in sorted(particles):
        rec = particles[N]
        i = int(np.argmin(np.abs(np.asarray(rec.times) - t)))
        if abs(rec.times[i] - t) > 1e-9 * max(1.0, t):
            raise PreconditionError(f"traiettoria N={N} senza campione a t={t}")
        emp = rec.pooled(i)
        rows.append({
            'N': int(N), 't': t,
            'W1_particle_pde': wasserstein(emp, m_pde, 1), 'W2_particle_pde': wasserstein(emp, m_pde, 2),
            'W1_particle_ref': wasserstein(emp, ref, 1), 'W2_particle_ref': wasserstein(emp, ref, 2),
        })
    pde_ref = {'W1': wasserstein(m_pde, ref, 1), 'W2': wasserstein(m_pde, ref, 2)}
    slope = None
    ok = True
    notes = []
    if len(rows) >= 2:
        Ns = np.log([r['N'] for r in rows])
        errs = np.log([max(r['W2_particle_ref'], 1e-300) for r in rows])
        slope = float(np.polyfit(Ns, errs, 1)[0])
        ok = SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]
        if not ok:
            notes.append(f"pendenza {slope:.3f} fuori da [{SLOPE_RANGE[0]:.3f}, {SLOPE_RANGE[1]:.3f}]")
    worst = 0.0
    if w2_particle_pde is not None and rows:
        excess = rows[-1]['W2_particle_pde'] - w2_particle_pde
        worst = max(worst, excess)
        ok = ok and excess <= 0
    if w2_pde_analytic is not None:
        excess = pde_ref['W2'] - w2_pde_analytic
        worst = max(worst, excess)
        ok = ok and excess <= 0
    return CheckReport(
        'convergence', ok, {'rows': rows, 'pde_ref': pde_ref, 'slope': slope},
        {'slope_range': list(SLOPE_RANGE), 'W2_particle_pde': w2_particle_pde,
         'W2_pde_analytic': w2_pde_analytic},
        worst, _provenance(pde), notes,
    )


SINGLE_CHECKS = {
    'linf': check_linf_bound,
    'lp': check_lp_decay,
    'entropy': check_entropy_identity,
    'variance': check_variance_identity,
}
PAIR_CHECKS = {
    'w2': check_w_contraction,
    'comparison': check_comparison,
    'drift_perturbation': check_drift_perturbation,
}
