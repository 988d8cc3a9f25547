"""
Istantanee su disco: CSV ``x,value`` (un nodo per riga) con sidecar JSON
``{x0, h, n, kind, mass, time}`` e ``manifest.json`` con gli hash sha256 dei file.
"""
import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .errors import InvalidMeasure
from .measure import CdfGrid, GridDensity, GridField

logger = logging.getLogger(__name__)

KINDS = ('density', 'cdf', 'field')


def _num(v):
    # 17 cifre significative: rilettura bit-identica
    return format(float(v), '.17g')


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=json_default)


def json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"oggetto non serializzabile: {type(obj).__name__}")


def config_hash(data):
    """sha256 del JSON canonico (chiavi ordinate, separatori compatti)."""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


def _kind_of(obj):
    if isinstance(obj, GridDensity):
        return 'density'
    if isinstance(obj, CdfGrid):
        return 'cdf'
    if isinstance(obj, GridField):
        return 'field'
    raise TypeError(f"tipo non supportato: {type(obj).__name__}")


def write_snapshot(path, obj, time=None):
    """Scrive ``path`` (.csv) e il sidecar ``path`` con estensione .json; restituisce i due percorsi."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = _kind_of(obj)
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['x', 'value'])
        for x, v in zip(obj.x, obj.values):
            writer.writerow([_num(x), _num(v)])
    meta = {
        'x0': float(obj.x0),
        'h': float(obj.h),
        'n': int(obj.n),
        'kind': kind,
        'mass': float(obj.mass) if kind == 'density' else None,
        'time': None if time is None else float(time),
    }
    if kind == 'density' and obj.tails:
        meta['tails'] = [list(t) for t in obj.tails]
    if kind == 'field':
        meta['limits'] = [float(obj.left_limit), float(obj.right_limit)]
    sidecar = path.with_suffix('.json')
    with open(sidecar, 'w', encoding='utf-8') as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write('\n')
    return path, sidecar


def read_snapshot(path):
    """Rilegge un'istantanea; restituisce ``(oggetto, meta)``."""
    path = Path(path)
    sidecar = path.with_suffix('.json')
    with open(sidecar, encoding='utf-8') as fh:
        meta = json.load(fh)
    with open(path, newline='', encoding='utf-8') as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ['x', 'value']:
            raise InvalidMeasure(f"{path}: intestazione attesa 'x,value', trovata {header!r}")
        values = [float(row[1]) for row in reader if row]
    if len(values) != meta['n']:
        raise InvalidMeasure(f"{path}: {len(values)} righe ma n={meta['n']} nel sidecar")
    kind = meta['kind']
    if kind == 'density':
        tails = tuple(tuple(t) for t in meta.get('tails', ()))
        total = meta['h'] * sum(values) + sum(w for w, _ in tails)
        obj = GridDensity(meta['x0'], meta['h'], values,
                          normalized=abs(total - 1.0) <= 1e-8, tails=tails)
    elif kind == 'cdf':
        obj = CdfGrid(meta['x0'], meta['h'], values)
    elif kind == 'field':
        left, right = meta.get('limits', (None, None))
        obj = GridField(meta['x0'], meta['h'], values, left_limit=left, right_limit=right)
    else:
        raise InvalidMeasure(f"{sidecar}: tipo di istantanea sconosciuto {kind!r}")
    return obj, meta


def write_manifest(directory, payload, files):
    """
    ``manifest.json`` nella cartella: ``payload`` più la mappa nome -> sha256 dei file.
    Nessun timestamp: stessa configurazione e seme danno manifest identici byte per byte.
    """
    directory = Path(directory)
    hashes = {}
    for f in sorted(Path(p) for p in files):
        hashes[f.relative_to(directory).as_posix()] = file_sha256(f)
    manifest = dict(payload)
    manifest['files'] = hashes
    path = directory / 'manifest.json'
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True, default=json_default))
        fh.write('\n')
    logger.info("manifest scritto in %s (%d file)", path, len(hashes))
    return path


def read_manifest(directory):
    with open(Path(directory) / 'manifest.json', encoding='utf-8') as fh:
        return json.load(fh)


def manifest_hash(directory):
    return file_sha256(Path(directory) / 'manifest.json')
