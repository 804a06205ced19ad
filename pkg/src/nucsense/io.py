"""CSV and JSON writers for traces, spectra, sweeps and trajectories.

Every CSV is UTF-8, comma separated, with a header row whose column names
carry units.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Header and float columns of a CSV written by this module."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(x) for x in row] for row in r], dtype=float)
    return header, data.reshape(-1, len(header))


def write_trace(path, trace) -> Path:
    cols = [trace.t, trace.s]
    header = ["t_s", "S_arb"]
    if trace.s_d is not None:
        cols += [trace.s_d, trace.s_o]
        header += ["S_d_arb", "S_o_arb"]
    return write_csv(path, header, zip(*cols))


def write_spectrum(path, spec) -> Path:
    return write_csv(path, ["frequency_hz", "magnitude_arb"], zip(spec.freqs, spec.mags))


def write_sweep(path, sweep) -> Path:
    return write_csv(path, ["frequency_hz", "integrated_signal_arb", "stderr_over_configs_arb"],
                     sweep.rows())


def write_phasor(path, rows) -> Path:
    return write_csv(path, ["block_index", "angle_rad", "weight_re_s", "weight_im_s"], rows)


def write_trajectory(path, t, m) -> Path:
    m = np.asarray(m)
    return write_csv(path, ["t_s", "m_x", "m_y", "m_z"], zip(t, m[:, 0], m[:, 1], m[:, 2]))


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dump_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, so equal objects give equal text."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_default, allow_nan=True)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(obj) + "\n", encoding="utf-8")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
