"""Writers for experiment outputs.  Floats are written with ``repr`` so
identical runs give identical bytes."""
from __future__ import annotations

import csv
import json
import os
from fractions import Fraction

import numpy as np

TABLE_COLUMNS = ("parameter", "estimate", "stderr", "trials", "seed")


def _cell(x):
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    if isinstance(x, Fraction):
        return str(x)
    return str(x)


def write_csv(path, rows, columns=TABLE_COLUMNS):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def write_pairs(path, pairs, header=("log_r", "log_stat")):
    """Two-column CSV (e.g. log-log fit data)."""
    write_csv(path, [dict(zip(header, p)) for p in pairs], columns=header)


def to_jsonable(x):
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_ndjson(path, records):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(to_jsonable(rec), sort_keys=True) + "\n")


def write_matrix_csv(path, ids, values):
    """Square matrix with a header row of vertex ids."""
    ids = [int(i) for i in ids]
    rows = [dict({"id": i}, **{str(j): values[a][b] for b, j in enumerate(ids)}) for a, i in enumerate(ids)]
    write_csv(path, rows, columns=["id"] + [str(j) for j in ids])
