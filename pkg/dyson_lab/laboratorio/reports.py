"""
Tabelle leggibili: CSV per i grafici e fogli Excel (openpyxl) per la consultazione.
"""
import csv
import json
import math
from pathlib import Path

import openpyxl

from .snapshots import json_default

CHECK_HEADERS = ['Controllo', 'Input', 'Esito', 'Violazione peggiore', 'Tolleranza', 'Note']


def _csv_cell(v):
    if v is None:
        return ''
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True, default=json_default)
    return v


def _xlsx_cell(v):
    # openpyxl non scrive inf/nan come numeri
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True, default=json_default)
    return v


def _sheet_title(text):
    for ch in '[]:*?/\\':
        text = text.replace(ch, '_')
    return text[:31]


def write_csv(path, headers, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(headers)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])
    return path


def write_xlsx(path, sheets):
    """``sheets``: lista di (titolo, intestazioni, righe); il primo usa il foglio attivo."""
    wb = openpyxl.Workbook()
    ws = wb.active
    for k, (title, headers, rows) in enumerate(sheets):
        if k:
            ws = wb.create_sheet()
        ws.title = _sheet_title(title)
        ws.append(list(headers))
        for row in rows:
            ws.append([_xlsx_cell(v) for v in row])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(path)
    return path


def dict_rows(records, headers=None):
    """Intestazioni (ordine di prima apparizione) e righe da una lista di dizionari."""
    if headers is None:
        headers = []
        for rec in records:
            for key in rec:
                if key not in headers:
                    headers.append(key)
    return headers, [[rec.get(h) for h in headers] for rec in records]


# ---------------------------
# Verifica
# ---------------------------

def _series_table(values):
    """Colonne allineate al tempo ``t`` di un CheckReport."""
    t = values.get('t')
    if not isinstance(t, list):
        return None
    cols = [k for k, v in values.items() if isinstance(v, list) and len(v) == len(t)]
    return cols, [list(r) for r in zip(*(values[c] for c in cols))]


def write_check_report(directory, results, meta=None):
    """
    ``results``: lista di (input, CheckReport). Scrive ``report.json``, ``report.csv``
    e ``report.xlsx`` (riepilogo più un foglio per controllo con le serie temporali).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    passed = all(rep.passed for _, rep in results)
    payload = {
        'passed': passed,
        'meta': meta or {},
        'checks': [dict(rep.as_dict(), input=where) for where, rep in results],
    }
    json_path = directory / 'report.json'
    with open(json_path, 'w', encoding='utf-8') as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True, default=json_default))
        fh.write('\n')

    rows = [[rep.name, where, 'OK' if rep.passed else 'FALLITO', float(rep.worst),
             rep.tolerance, '; '.join(rep.notes)] for where, rep in results]
    csv_path = write_csv(directory / 'report.csv', CHECK_HEADERS, rows)

    sheets = [('Riepilogo', CHECK_HEADERS, rows)]
    for k, (_, rep) in enumerate(results):
        table = _series_table(rep.values)
        if table:
            sheets.append((f"{rep.name}_{k}", table[0], table[1]))
    xlsx_path = write_xlsx(directory / 'report.xlsx', sheets)
    return json_path, csv_path, xlsx_path


# ---------------------------
# Sweep e tabelle dei comandi
# ---------------------------

def write_sweep(directory, records):
    headers, rows = dict_rows(records)
    directory = Path(directory)
    csv_path = write_csv(directory / 'sweep.csv', headers, rows)
    xlsx_path = write_xlsx(directory / 'sweep.xlsx', [('Sweep', headers, rows)])
    return csv_path, xlsx_path


def write_gap_law(path, rows):
    return write_csv(path, ['t', 'mean_s2', 'stderr', 'expected', 'zscore'],
                     [[r.t, r.mean_s2, r.stderr, r.expected, r.zscore] for r in rows])


def write_reflection(path, sweep):
    headers = ['eps', 'overshoot_mass', 'mass', 'mean_overshoot', 'sup_beyond',
               'linf_initial', 'linf_max', 'linf_ok']
    rows = []
    for rep in sorted(sweep.reports, key=lambda r: r.eps, reverse=True):
        d = rep.as_dict()
        rows.append([d[h] for h in headers])
    return write_csv(path, headers, rows)
