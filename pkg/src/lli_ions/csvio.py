"""CSV and JSON persistence for run logs, series and Allan curves.

All CSVs are UTF-8 with a header row; floats are written with ``repr`` so a
read-back is lossless and repeated writes are byte-identical.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .analysis import AllanCurve, FrequencySeries, MeasurementRecord

RECORD_COLUMNS = ("block", "utc_seconds", "variant", "tau_s", "phase_setting_rad", "parity",
                  "shots", "contrast_flag")
FIELD_LOG_COLUMNS = ("utc_seconds", "delta_b_gauss")
TRAP_LOG_COLUMNS = ("utc_seconds", "omega_cm_hz")
SERIES_COLUMNS = ("utc_seconds", "f_hz", "sigma_f_hz", "f_r_hz", "f_l_hz", "zeeman_corrected",
                  "quadrupole_corrected")
ALLAN_COLUMNS = ("tau_s", "sigma_hz", "n_groups")


class SchemaError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _read(path, columns):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != tuple(columns):
            raise SchemaError(f"{path}: expected columns {','.join(columns)}, got {header}")
        return [row for row in r if row]


def write_records(path, records):
    _write(path, RECORD_COLUMNS, ((r.block, r.utc, r.variant, r.tau, r.phase_setting, r.parity,
                                   r.shots, r.contrast_flag) for r in records))


def read_records(path) -> list[MeasurementRecord]:
    out = []
    for row in _read(path, RECORD_COLUMNS):
        out.append(MeasurementRecord(int(row[0]), float(row[1]), row[2], float(row[3]), float(row[4]),
                                     float(row[5]), int(row[6]), row[7] in ("1", "true", "True")))
    return out


def write_log(path, log, columns=FIELD_LOG_COLUMNS):
    t, v = log
    _write(path, columns, zip(np.asarray(t, dtype=float), np.asarray(v, dtype=float)))


def read_log(path, columns=FIELD_LOG_COLUMNS):
    rows = _read(path, columns)
    return (np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


def write_runlog(directory, runlog) -> dict:
    """Records, field log, trap log and a JSON manifest; returns the written paths."""
    d = Path(directory)
    paths = {"records": d / "records.csv", "field_log": d / "field_log.csv",
             "trap_log": d / "trap_log.csv", "manifest": d / "manifest.json"}
    write_records(paths["records"], runlog.records)
    write_log(paths["field_log"], runlog.field_log, FIELD_LOG_COLUMNS)
    write_log(paths["trap_log"], runlog.trap_log, TRAP_LOG_COLUMNS)
    manifest = {"scheme": runlog.scheme, "seed": runlog.seed, "n_records": len(runlog.records),
                "n_blocks": runlog.n_blocks, "calibrations": len(runlog.calibrations),
                "config": runlog.config}
    write_json(paths["manifest"], manifest)
    return paths


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if hasattr(o, "numerator"):  # Fraction
        return float(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def write_series(path, s: FrequencySeries):
    nan = np.full(len(s), math.nan)
    fr = s.f_r if s.f_r is not None else nan
    fl = s.f_l if s.f_l is not None else nan
    _write(path, SERIES_COLUMNS, zip(s.utc, s.f, s.sigma_f, fr, fl, s.zeeman_corrected,
                                     s.quadrupole_corrected))


def read_series(path) -> FrequencySeries:
    rows = _read(path, SERIES_COLUMNS)
    col = list(zip(*rows)) if rows else [[] for _ in SERIES_COLUMNS]
    flt = [np.array([float(x) for x in c]) for c in col[:5]]
    return FrequencySeries(flt[0], flt[1], flt[2], flt[3], flt[4],
                           zeeman_corrected=np.array([x == "1" for x in col[5]]),
                           quadrupole_corrected=np.array([x == "1" for x in col[6]]))


def write_allan(path, a: AllanCurve):
    _write(path, ALLAN_COLUMNS, zip(a.taus, a.sigma, a.n_groups))
