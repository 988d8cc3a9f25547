"""
Corpi dei comandi: dal RunConfig validato agli oggetti numerici, esecuzione e scrittura
degli artefatti nella cartella di uscita.

Nessun accesso al database: i job degli sweep girano in processi separati.
"""
import copy
import itertools
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy.special import gammainc, ndtr

from . import reports
from .analytic import (
    MarcenkoPastur, SemicircleFamily, atomic_seed, burgers_characteristics, mp_stationarity_residual,
    semicircle_seed, spike_absorption_reference, uniform_seed,
)
from .diagnostics import PAIR_CHECKS, SINGLE_CHECKS
from .errors import ConfigError, LabError
from .forms import set_path, validate_document
from .kernel import parse_beta, parse_kernel
from .measure import (
    CdfGrid, Grid, GridDensity, MASS_TOL, cdf_to_density, density_to_cdf,
    ensemble_to_density, free_entropy, lp_norm, variance,
)
from .particles import Barrier, SdeConfig, SpikeConfig, gap_law_summary, parse_apath, seed_cluster, simulate
from .snapshots import file_sha256, manifest_hash, read_snapshot, write_manifest, write_snapshot
from .solvers import (
    DtPolicy, FlowRecord, Penalty, PdeSpec, parse_sigma, solve, solve_coupled, solve_reflected,
    solve_singular_drift,
)

logger = logging.getLogger(__name__)

# sotto questo numero di particelle la densità empirica non viene scritta
MIN_PARTICLES_FOR_DENSITY = 10


def resolve_path(path):
    """Percorsi relativi rispetto a ``LAB_OUT_ROOT``."""
    path = Path(path)
    return path if path.is_absolute() else Path(settings.LAB_OUT_ROOT) / path


def default_out(command, config):
    return resolve_path(config.cleaned.get('out') or Path(command) / config.hash[:12])


# =========================
# Costruzione degli oggetti
# =========================

def build_grid(section):
    return Grid.covering(section['lo'], section['hi'], section['h'])


def _mixture_cdf(ini):
    centers = ini['centers']
    widths = ini['widths'] if len(ini['widths']) == len(centers) else ini['widths'] * len(centers)
    weights = ini.get('weights') or [1.0] * len(centers)
    total = float(sum(weights))
    fams = [(w / total, SemicircleFamily(r, c)) for w, r, c in zip(weights, widths, centers)]
    return lambda x: sum(w * f.cdf(x) for w, f in fams)


def initial_cdf_function(ini, grid, convention='raw'):
    """Funzione di ripartizione del dato iniziale (vettorizzata)."""
    kind = ini['kind']
    c = ini.get('center') or 0.0
    if kind == 'semicircle':
        return SemicircleFamily(ini['radius'], c).cdf
    if kind == 'dirac':
        return SemicircleFamily(ini.get('width') or 2.0 * grid.h, c).cdf
    if kind == 'semicircles':
        return _mixture_cdf(ini)
    if kind == 'uniform':
        return uniform_seed(ini['a'], ini['b']).cdf
    if kind == 'gaussian':
        return lambda x: ndtr((np.asarray(x, dtype=float) - c) / ini['std'])
    if kind == 'skewed':
        return lambda x: gammainc(ini['shape'], np.clip((np.asarray(x, dtype=float) - c) / ini['scale'], 0.0, None))
    if kind == 'marcenko_pastur':
        return MarcenkoPastur(ini['eta'], convention).cdf
    if kind == 'atomic':
        return atomic_seed(ini['weights'], ini['positions']).cdf
    raise ConfigError(f"dato iniziale {kind!r} senza funzione di ripartizione")


def build_initial(ini, grid, convention='raw'):
    """(densità, CDF) del dato iniziale; per le istantanee la griglia è quella del file."""
    if ini['kind'] == 'snapshot':
        obj, _ = read_snapshot(ini['path'])
        if isinstance(obj, GridDensity):
            return obj, density_to_cdf(obj)
        if isinstance(obj, CdfGrid):
            return cdf_to_density(obj, normalize=True), obj
        raise ConfigError("un'istantanea di tipo 'field' non è un dato iniziale")
    F = initial_cdf_function(ini, grid, convention)
    e = grid.edges
    ends = F(np.array([e[0], e[-1]]))
    lost = 1.0 - float(ends[1] - ends[0])
    if lost > MASS_TOL:
        logger.warning("dato iniziale %s: massa %.3g fuori dalla griglia (rinormalizzato)", ini['kind'], lost)
    density = GridDensity.from_samples(grid.x0, grid.h, np.diff(F(e)) / grid.h, normalize=True)
    return density, density_to_cdf(density)


def build_kernel(section, wishart=False):
    drift = section.get('drift') or ('linear(1)' if wishart else None)
    return parse_kernel(section['name'], drift)


def sample_times(section, include_zero=False):
    times = set(section.get('sample_times') or ())
    n = section.get('samples') or 0
    times |= {section['t_end'] * k / n for k in range(1, n + 1)}
    times.add(section['t_end'])
    if include_zero:
        times.add(0.0)
    return tuple(sorted(times))


def build_pde_spec(config, grid):
    pde = config.section('pde')
    kern = config.section('kernel')
    dtp = pde.get('dt_policy') or {'mode': 'adaptive', 'dt': None}
    pen = pde.get('penalty')
    penalty = None
    if pen is not None and not pde.get('reflection_eps'):
        if pen.get('eps') is None:
            raise ConfigError("pde.penalty: una corsa penalizzata singola richiede eps")
        penalty = Penalty(pen['R0'], pen['eps'])
    return PdeSpec(
        form=pde['form'], grid=grid, t_end=pde['t_end'],
        kernel=build_kernel(kern, wishart=pde['form'] == 'wishart'),
        beta=parse_beta(kern.get('beta')), sigma=parse_sigma(pde['sigma']),
        viscosity=pde['viscosity'], delta=pde.get('delta'), cfl=pde['cfl'],
        dt_policy=DtPolicy(dtp['mode'], dtp.get('dt')), sample_times=sample_times(pde),
        eta=pde.get('eta'), coupling=pde['coupling'], penalty=penalty,
    )


def build_sde(config):
    """(SdeConfig, SpikeConfig o None)."""
    sde = config.section('sde')
    wishart = sde.get('eta') is not None
    if sde.get('positions'):
        initial = np.asarray(sde['positions'], dtype=float)
    elif sde['radius'] > 0:
        initial = seed_cluster(sde['n'], sde['radius'], sde['center'])
    else:
        # Dirac: Eulero-Maruyama non regge gap di 1e-9, si parte dal semicerchio dopo un passo
        radius = 2.0 * math.sqrt(sde['dt'])
        logger.info("dato di Dirac sostituito dal semicerchio di raggio %.3g", radius)
        initial = seed_cluster(sde['n'], radius, sde['center'])
    bar = sde.get('barrier')
    barrier = Barrier(bar['R0'], bar.get('eps'), bool(bar.get('hard'))) if bar else None
    sp = sde.get('spike')
    spike = SpikeConfig(sp['lambda0'], parse_apath(sp['a'])) if sp else None
    times = sample_times(sde, include_zero=True)
    cfg = SdeConfig(
        N=sde['n'], dt=sde['dt'], t_end=sde['t_end'], seed=config.seed, initial=initial,
        kernel=build_kernel(config.section('kernel'), wishart=wishart),
        noise_scale=sde.get('noise_scale'), barrier=barrier, wishart_eta=sde.get('eta'),
        replicas=sde['replicas'], sample_times=times, moments_only=bool(sde.get('moments_only')),
    )
    return cfg, spike


def burgers_seed(ini):
    """Seme dell'oracolo delle caratteristiche dal dato iniziale."""
    kind = ini['kind']
    if kind == 'atomic':
        return atomic_seed(ini['weights'], ini['positions'])
    if kind == 'dirac':
        return atomic_seed([1.0], [ini.get('center') or 0.0])
    if kind == 'semicircle':
        return semicircle_seed(ini.get('center') or 0.0, ini['radius'])
    if kind == 'uniform':
        return uniform_seed(ini['a'], ini['b'])
    raise ConfigError(f"l'oracolo delle caratteristiche non accetta il dato {kind!r}")


def _summary(out, manifest, kind, metrics):
    return {
        'kind': kind, 'out': str(out), 'manifest': str(manifest),
        'manifest_sha256': file_sha256(manifest), 'metrics': metrics,
    }


def _base_payload(config, kind):
    return {'kind': kind, 'config_hash': config.hash, 'seed': config.seed, 'convention': config.convention}


# =========================
# simulate
# =========================

def run_simulate(config, out):
    cfg, spike = build_sde(config)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    record = simulate(cfg, spike)
    files = [record.write_jsonl(out / 'trajectory.jsonl')]
    rows = record.moment_rows()
    headers, table = reports.dict_rows(rows)
    files.append(reports.write_csv(out / 'moments.csv', headers, table))
    metrics = {'N': cfg.N, 'replicas': cfg.replicas, 'halvings': record.halvings,
               'm2_final': rows[-1]['m2'], 'max_final': rows[-1]['max']}

    if cfg.N == 2 and not cfg.moments_only:
        law = gap_law_summary(record)
        files.append(reports.write_gap_law(out / 'gap_law.csv', law))
        metrics['gap_zscore_max'] = max(abs(r.zscore) for r in law[1:]) if len(law) > 1 else 0.0
    if not cfg.moments_only and cfg.N >= MIN_PARTICLES_FOR_DENSITY:
        grid = build_grid(config.section('grid'))
        for i, t in enumerate(record.times):
            dens = ensemble_to_density(record.pooled(i), 2.0 * grid.h, grid)
            files += write_snapshot(out / f'density_{i:03d}.csv', dens, time=t)
    absorbed = None
    if spike is not None:
        absorbed = [None if math.isnan(a) else float(a) for a in record.absorbed_at]
        hits = [a for a in absorbed if a is not None]
        metrics['absorbed_fraction'] = len(hits) / len(absorbed)
        metrics['absorbed_mean'] = float(np.mean(hits)) if hits else None

    payload = _base_payload(config, 'trajectory')
    payload.update({
        'times': [float(t) for t in record.times], 'provenance': record.provenance,
        'halvings': record.halvings, 'absorbed_at': absorbed,
        'N': cfg.N, 'replicas': cfg.replicas, 'kernel': cfg.kernel.name,
    })
    manifest = write_manifest(out, payload, files)
    logger.info("simulate: %s", manifest)
    return _summary(out, manifest, 'trajectory', metrics)


# =========================
# solve
# =========================

def _flow_metrics(flow):
    last = flow.densities[-1]
    return {
        't_end': float(flow.times[-1]), 'mass': last.mass, 'linf': lp_norm(last, math.inf),
        'variance': variance(last), 'free_entropy': free_entropy(last),
        'steps': flow.health.get('steps'), 'dt_min': flow.health.get('dt_min'),
        'clamp_max': flow.health.get('clamp_max'), 'clip_max': flow.health.get('clip_max'),
    }


def run_solve(config, out):
    out = Path(out)
    pde = config.section('pde')
    kern = config.section('kernel')
    grid = build_grid(config.section('grid'))
    m0, u0 = build_initial(config.section('initial'), grid, config.convention)
    spec = build_pde_spec(config, m0.grid)
    payload = _base_payload(config, 'flow')

    if spec.form == 'coupled':
        if pde.get('second') is None:
            raise ConfigError("la forma 'coupled' richiede la sezione pde.second")
        m2, _ = build_initial(pde['second'], m0.grid, config.convention)
        flows = solve_coupled(m0, m2, spec)
        for k, flow in enumerate(flows, start=1):
            flow.save(out / f'species_{k}', payload)
        files = [out / f'species_{k}' / 'manifest.json' for k in (1, 2)]
        top = write_manifest(out, dict(payload, kind='coupled'), files)
        metrics = {f'{key}_{k}': v for k, flow in enumerate(flows, start=1) for key, v in _flow_metrics(flow).items()}
        return _summary(out, top, 'coupled', metrics)

    if pde.get('reflection_eps'):
        pen = pde.get('penalty')
        if pen is None:
            raise ConfigError("la riflessione richiede pde.penalty.R0")
        sweep = solve_reflected(m0, pen['R0'], pde['reflection_eps'], spec, pde.get('kappa'))
        files = []
        for k, eps in enumerate(pde['reflection_eps']):
            sweep.flows[eps].save(out / f'eps_{k:02d}', payload)
            files.append(out / f'eps_{k:02d}' / 'manifest.json')
        files.append(reports.write_reflection(out / 'reflection.csv', sweep))
        scaling = sweep.scaling()
        top = write_manifest(out, dict(payload, kind='reflection', scaling=scaling,
                                       reports=[r.as_dict() for r in sweep.reports]), files)
        metrics = {'linf_ok': all(r.linf_ok for r in sweep.reports), 'scaling': scaling}
        return _summary(out, top, 'reflection', metrics)

    if spec.form == 'cdf' and spec.beta is None and spec.kernel.drift.variant == 'singular':
        box = tuple(kern['box']) if kern.get('box') else None
        flow = solve_singular_drift(u0, spec, box=box)
    else:
        initial = m0 if spec.form == 'density' else u0
        flow = solve(initial, spec, perturbation=pde['perturbation'])
    manifest = flow.save(out, payload)
    metrics = _flow_metrics(flow)
    if 'gronwall' in flow.extras:
        metrics['gronwall_passed'] = flow.extras['gronwall']['passed']
    logger.info("solve: %s", manifest)
    return _summary(out, manifest, 'flow', metrics)


# =========================
# reference
# =========================

def run_reference(config, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ref = config.section('reference')
    conv = config.convention
    kind = ref['kind']
    grid = build_grid(config.section('grid'))
    files = []
    payload = _base_payload(config, 'reference')
    payload['reference'] = kind
    metrics = {}

    if kind == 'semicircle':
        rows = []
        for i, t in enumerate(ref['times']):
            fam = SemicircleFamily.at_time(t, conv, ref['seed_radius'], ref['center'])
            files += write_snapshot(out / f'density_{i:03d}.csv', fam.on_grid(grid), time=t)
            files += write_snapshot(out / f'cdf_{i:03d}.csv', fam.cdf_on_grid(grid), time=t)
            rows.append([t, fam.radius, fam.variance, fam.edge, fam.free_entropy()])
        files.append(reports.write_csv(out / 'reference.csv',
                                       ['t', 'radius', 'variance', 'edge', 'free_entropy'], rows))
        metrics['radius_final'] = rows[-1][1]
        payload['times'] = list(ref['times'])
    elif kind == 'marcenko_pastur':
        mp = MarcenkoPastur(ref['eta'], conv)
        cdf = mp.cdf_on_grid(grid)
        files += write_snapshot(out / 'density_000.csv', mp.on_grid(grid))
        files += write_snapshot(out / 'cdf_000.csv', cdf)
        lo, hi = mp.edges
        if conv == 'raw':
            resid = mp_stationarity_residual(ref['eta'], cdf)
            files += write_snapshot(out / 'residual_000.csv', resid)
            bulk = (grid.nodes > lo + 0.1 * (hi - lo)) & (grid.nodes < hi - 0.1 * (hi - lo))
            metrics['residual_bulk'] = float(np.max(np.abs(np.asarray(resid.values)[bulk]))) if bulk.any() else None
        payload['edges'] = [lo, hi]
        metrics.update({'edge_lo': lo, 'edge_hi': hi})
    elif kind == 'characteristics':
        seed = burgers_seed(config.section('initial'))
        for i, t in enumerate(ref['times']):
            files += write_snapshot(out / f'density_{i:03d}.csv',
                                    burgers_characteristics(seed, t, grid, conv, ref['levels']), time=t)
        payload['times'] = list(ref['times'])
        payload['seed'] = {'kind': seed.kind, 'params': seed.params}
    else:
        sr = spike_absorption_reference(ref['lambda0'], conv, ref['t_start'], ref['seed_radius'])
        files.append(reports.write_csv(out / 'spike.csv', ['t', 'Z', 'spike'],
                                       [[float(t), float(z), float(s)] for t, z, s in zip(sr.times, sr.Z, sr.spike)]))
        payload['t0'] = sr.t0
        metrics['t0'] = sr.t0
    manifest = write_manifest(out, payload, files)
    logger.info("reference %s: %s", kind, manifest)
    return _summary(out, manifest, 'reference', metrics)


# =========================
# verify
# =========================

def _single_kwargs(name, ver):
    if name == 'linf':
        return {'C': ver.get('C'), 't_min': ver.get('t_min')}
    if name == 'entropy' and ver.get('t_range'):
        return {'t_range': tuple(ver['t_range'])}
    if name == 'variance':
        kw = {'drift_k': ver.get('drift_k') or 0.0}
        if ver.get('t_range'):
            kw['t_range'] = tuple(ver['t_range'])
        return kw
    return {}


def _pair_kwargs(name, ver):
    if name == 'w2' and ver.get('p'):
        return {'p': ver['p']}
    if name == 'comparison' and ver.get('slack') is not None:
        return {'slack': ver['slack']}
    if name == 'drift_perturbation':
        return {'drift_gap': ver['drift_gap'], 'rate': ver['rate']}
    return {}


def run_verify(config, inputs, out):
    """Controlli su flussi salvati; ``results`` è la lista di (input, CheckReport)."""
    ver = config.section('verify')
    paths = [resolve_path(p) for p in (inputs or ver['inputs'])]
    if not paths:
        raise ConfigError("verify: nessun flusso in ingresso")
    flows = [FlowRecord.load(p) for p in paths]
    results = []
    for name in ver['checks']:
        if name in SINGLE_CHECKS:
            for path, flow in zip(paths, flows):
                results.append((str(path), SINGLE_CHECKS[name](flow, **_single_kwargs(name, ver))))
        else:
            if len(flows) != 2:
                raise ConfigError(f"il controllo {name!r} richiede esattamente due flussi")
            results.append((f"{paths[0]} | {paths[1]}", PAIR_CHECKS[name](flows[0], flows[1], **_pair_kwargs(name, ver))))
    for where, rep in results:
        log = logger.info if rep.passed else logger.warning
        log("controllo %s su %s: %s (peggiore %.3g)", rep.name, where, 'ok' if rep.passed else 'fallito', rep.worst)
    out = Path(out)
    meta = dict(_base_payload(config, 'verify'), inputs=[str(p) for p in paths],
                input_sha256=[manifest_hash(p) for p in paths])
    json_path, _, _ = reports.write_check_report(out, results, meta)
    return {
        'kind': 'verify', 'out': str(out), 'manifest': str(json_path),
        'manifest_sha256': file_sha256(json_path), 'passed': all(r.passed for _, r in results),
        'results': results, 'metrics': {'checks': len(results), 'failed': sum(not r.passed for _, r in results)},
    }


# =========================
# sweep
# =========================

RUNNERS = {'simulate': run_simulate, 'solve': run_solve, 'reference': run_reference}


def _init_worker():
    import django

    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'dyson_lab.settings')
    django.setup()


def _label(value):
    return value if isinstance(value, (int, float, str, bool)) or value is None else repr(value)


def _run_job(job):
    """Un punto dello sweep; gli errori di calcolo diventano una riga con stato 'failed'."""
    index, command, document, out, axes = job
    row = {'job': index}
    row.update({name: _label(v) for name, v in axes.items()})
    config = validate_document(document)
    row['config_hash'] = config.hash
    try:
        summary = RUNNERS[command](config, out)
    except LabError as exc:
        logger.warning("sweep job %03d fallito: %s", index, exc)
        row.update({'status': 'failed', 'error': str(exc)})
        return row
    row.update({'status': 'ok', 'error': '', 'manifest_sha256': summary['manifest_sha256']})
    row.update(summary['metrics'])
    logger.info("sweep job %03d concluso", index)
    return row


def sweep_jobs(config, out):
    """Prodotto cartesiano degli assi, nell'ordine in cui compaiono; job_XXX per punto."""
    sw = config.section('sweep')
    if sw is None or not sw.get('axes'):
        raise ConfigError("sweep: servono gli assi in sweep.axes")
    names = list(sw['axes'])
    base = copy.deepcopy(config.document)
    base.pop('sweep', None)
    base.pop('out', None)
    jobs = []
    for index, values in enumerate(itertools.product(*(sw['axes'][n] for n in names))):
        doc = copy.deepcopy(base)
        for name, value in zip(names, values):
            set_path(doc, name, value)
        # errori di schema di un punto: tutto lo sweep si ferma prima di partire
        validate_document(doc)
        jobs.append((index, sw['command'], doc, str(Path(out) / f'job_{index:03d}'), dict(zip(names, values))))
    return jobs


def run_sweep(config, out, jobs=None):
    out = Path(out)
    todo = sweep_jobs(config, out)
    workers = max(1, int(jobs or config.cleaned.get('jobs') or settings.LAB_JOBS))
    logger.info("sweep: %d job su %d processi", len(todo), workers)
    if workers == 1:
        rows = [_run_job(job) for job in todo]
    else:
        ctx = multiprocessing.get_context('spawn')
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker) as pool:
            rows = list(pool.map(_run_job, todo))
    csv_path, _ = reports.write_sweep(out, rows)
    failed = sum(r['status'] != 'ok' for r in rows)
    return {
        'kind': 'sweep', 'out': str(out), 'manifest': str(csv_path),
        'manifest_sha256': file_sha256(csv_path), 'rows': rows,
        'metrics': {'jobs': len(rows), 'failed': failed},
    }
