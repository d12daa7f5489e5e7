"""Delimited-text and JSON file formats.

Floats are written with ``repr`` so that files round-trip exactly and two
runs with the same inputs produce identical bytes.  Parse errors name the
file and the offending line.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataIOError, ValidationError
from .funnel import FunnelMap
from .simulator import Histogram2D, ShotMatrix, SweepSpec
from .calibration import TemperatureSweep

SHOTS_HEADER = ("detuning_ueV", "current_pA")
ORACLE_HEADER = ("true_branch",)
PROFILE_HEADER = ("epsilon_ueV", "p20")
TEMPERATURE_HEADER = ("t_mc_K", "width_V")
BRANCH_LABELS = ("singlet", "triplet")


def fmt(x):
    """Shortest round-tripping text for a float; ``nan`` and ``inf`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats for ``json``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _open_for_write(path):
    path = Path(path)
    if not path.parent.is_dir():
        raise DataIOError(f"output directory does not exist: {path.parent}", code="io.missing_directory")
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}", code="io.write_failed") from exc


def write_text(path, text):
    with _open_for_write(path) as fh:
        fh.write(text)


def write_json(path, obj):
    write_text(path, dumps(obj))


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}", code="io.read_failed") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})", code="io.parse_error") from exc


def write_rows(path, header, rows):
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path, header):
    """Read a numeric CSV whose first line must equal ``header``.

    Returns an array of shape ``(rows, len(header))``.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}", code="io.read_failed") from exc
    rows = []
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != tuple(header):
            raise ValidationError(
                f"{path}: line 1: expected header {','.join(header)}", code="io.bad_header"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}",
                    code="io.parse_error",
                )
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise ValidationError(f"{path}: line {line_no}: non-numeric field", code="io.parse_error") from None
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"{path}: line {line_no}: non-finite value", code="io.parse_error")
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows", code="io.empty_file")
    return np.asarray(rows, dtype=float).reshape(-1, len(header))


def read_matrix(path):
    """Read a headerless numeric CSV matrix."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}", code="io.read_failed") from exc
    rows = []
    with fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValidationError(f"{path}: line {line_no}: non-numeric field", code="io.parse_error") from None
            if rows and len(rows[-1]) != len(rows[0]):
                raise ValidationError(f"{path}: line {line_no}: ragged row", code="io.parse_error")
    if not rows:
        raise ValidationError(f"{path}: no data rows", code="io.empty_file")
    return np.asarray(rows, dtype=float)


def sidecar(path):
    """JSON sidecar that accompanies a matrix CSV."""
    return Path(path).with_suffix(".json")


# Shots ------------------------------------------------------------------------


def write_shots(path, shots):
    write_rows(path, SHOTS_HEADER, zip(shots.detuning.tolist(), shots.current.tolist()))


def write_oracle(path, shots):
    write_rows(path, ORACLE_HEADER, ([BRANCH_LABELS[int(b)]] for b in shots.true_branch))


def read_shots(path, boundary_sign=1):
    """Load shots; the sweep grid is the detunings in order of first appearance."""
    data = read_table(path, SHOTS_HEADER)
    detuning, current = data[:, 0], data[:, 1]
    _, first = np.unique(detuning, return_index=True)
    grid = detuning[np.sort(first)]
    counts = np.array([(detuning == e).sum() for e in grid])
    spec = SweepSpec(detuning_grid=tuple(grid), shots_per_point=int(counts.max()), boundary_sign=boundary_sign)
    return ShotMatrix(
        detuning=detuning,
        current=current,
        true_branch=np.full(detuning.size, -1, dtype=np.int8),
        spec=spec,
        params_used=None,
    )


# Histograms -------------------------------------------------------------------


def write_histogram(path, hist):
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in hist.counts.tolist():
            w.writerow(row)
    write_json(
        sidecar(path),
        {
            "layout": "rows are detuning columns, columns are current bins",
            "detuning_edges_ueV": hist.detuning_edges,
            "current_edges_pA": hist.current_edges,
        },
    )


def read_histogram(path):
    counts = read_matrix(path)
    meta = read_json(sidecar(path))
    try:
        det = np.asarray(meta["detuning_edges_ueV"], dtype=float)
        cur = np.asarray(meta["current_edges_pA"], dtype=float)
    except KeyError as exc:
        raise ValidationError(f"{sidecar(path)}: missing key {exc.args[0]!r}", code="io.bad_sidecar") from None
    if counts.shape != (det.size - 1, cur.size - 1):
        raise ValidationError(
            f"{path}: matrix shape {counts.shape} does not match edges in {sidecar(path)}",
            code="io.shape_mismatch",
        )
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ValidationError(f"{path}: counts must be non-negative integers", code="io.bad_counts")
    return Histogram2D(detuning_edges=det, current_edges=cur, counts=counts.astype(np.int64))


# Profiles, temperature sweeps and funnel maps ----------------------------------


def write_profile(path, grid, p20):
    write_rows(path, PROFILE_HEADER, zip(np.asarray(grid, float).tolist(), np.asarray(p20, float).tolist()))


def read_temperature_sweep(path, gate_label=""):
    data = read_table(path, TEMPERATURE_HEADER)
    return TemperatureSweep(t_mc=data[:, 0], width=data[:, 1], gate_label=gate_label)


def write_temperature_sweep(path, sweep):
    write_rows(path, TEMPERATURE_HEADER, zip(sweep.t_mc.tolist(), sweep.width.tolist()))


def write_funnel_map(path, fmap):
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in fmap.probability.tolist():
            w.writerow([fmt(v) for v in row])
    write_json(
        sidecar(path),
        {
            "layout": "rows are detuning points, columns are field points",
            "b_grid_uT": fmap.b_grid,
            "epsilon_grid_ueV": fmap.epsilon_grid,
        },
    )


def read_funnel_map(path):
    prob = read_matrix(path)
    meta = read_json(sidecar(path))
    try:
        fmap = FunnelMap(meta["b_grid_uT"], meta["epsilon_grid_ueV"], prob)
    except KeyError as exc:
        raise ValidationError(f"{sidecar(path)}: missing key {exc.args[0]!r}", code="io.bad_sidecar") from None
    return fmap.validate()
