"""Run bookkeeping, on-disk formats and convergence tables.

On-disk layout written by :func:`write_run`::

    series.csv            t,energy,modified_energy,dissipation,mass
                          one row per recorded time, '%.16e' (17 significant
                          digits, lossless for doubles), 'nan' for missing
    <name>_t<t>.f64       raw little-endian float64, C order
    <name>_t<t>.json      {"name", "t", "shape", "dtype": "<f8", "order": "C", "grid"}
    run.json              resolved configuration, scheme, library versions
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .hilbert import DimensionError, InnerProduct

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("t", "energy", "modified_energy", "dissipation", "mass")


class RunIOError(OSError):
    pass


@dataclass
class RunRecord:
    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    modified_energy: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (t, {name: array})
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # named per-step series
    final_state: object = None  # last state, kept in memory only

    def append(self, t, energy, modified_energy=math.nan, dissipation=math.nan, mass=math.nan, **extra):
        if self.times and not t > self.times[-1]:
            raise ValueError(f"times must increase strictly ({t} after {self.times[-1]})")
        self.times.append(float(t))
        self.energy.append(float(energy))
        self.modified_energy.append(float(modified_energy))
        self.dissipation.append(float(dissipation))
        self.mass.append(float(mass))
        for k, v in extra.items():
            self.extra.setdefault(k, []).append(float(v))

    def add_snapshot(self, t, **fields):
        self.snapshots.append((float(t), {k: np.array(v, dtype=float) for k, v in fields.items()}))

    def __len__(self):
        return len(self.times)

    def array(self, name):
        if name in SERIES_COLUMNS:
            key = "times" if name == "t" else name
            return np.asarray(getattr(self, key))
        return np.asarray(self.extra[name])

    def snapshot(self, t, name, tol=1e-9):
        for ts, fields in self.snapshots:
            if abs(ts - t) <= tol:
                return fields[name]
        raise KeyError(f"no snapshot of {name!r} at t={t}")


def first_increase(series, rtol: float = 1e-11, scale: Optional[float] = None):
    """Index of the first step whose value rises by more than ``rtol * scale``.

    ``scale`` defaults to ``|series[0]|``.  Returns ``None`` for a monotone
    nonincreasing series.
    """
    e = np.asarray(series, dtype=float)
    if e.size < 2:
        return None
    scale = abs(e[0]) if scale is None else scale
    bad = np.nonzero(np.diff(e) > rtol * scale)[0]
    if not np.all(np.isfinite(e)):
        nonfinite = int(np.nonzero(~np.isfinite(e))[0][0])
        bad = np.append(bad, nonfinite - 1)
    return int(bad.min()) + 1 if bad.size else None


def is_monotone(series, rtol: float = 1e-11, scale: Optional[float] = None) -> bool:
    return first_increase(series, rtol, scale) is None


def count_local_maxima(series, rel_prominence: float = 1e-3) -> int:
    """Number of interior peaks with prominence above ``rel_prominence * max|series|``."""
    e = np.asarray(series, dtype=float)
    peaks, _ = find_peaks(e, prominence=rel_prominence * np.max(np.abs(e)))
    return int(peaks.size)


# ---------------------------------------------------------------------------
# errors and convergence
# ---------------------------------------------------------------------------


def l2_error(ip: InnerProduct, u, ref, coords=None, t=None) -> float:
    """``sqrt((u - ref, u - ref))``; ``ref`` may be an array or ``ref(coords, t)``."""
    u = np.asarray(u, dtype=float)
    if callable(ref):
        ref = ref(coords, t) if t is not None else ref(coords)
    ref = np.asarray(ref, dtype=float)
    if u.shape != ref.shape:
        raise DimensionError(f"grid mismatch: {u.shape} vs {ref.shape}")
    d = u - ref
    return float(np.sqrt(ip(d, d)))


def observed_orders(errors: Sequence[float], ratio: float = 2.0):
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)


@dataclass
class ConvergenceTable:
    variables: tuple
    levels: list = field(default_factory=list)  # dicts: h, tau, errors{var}
    aborted: Optional[str] = None

    def add(self, h, tau, errors: dict):
        self.levels.append({"h": h, "tau": tau, "errors": dict(errors)})

    def errors(self, var):
        return np.array([lv["errors"][var] for lv in self.levels])

    def orders(self, var):
        """Orders between consecutive levels (length ``len(levels) - 1``)."""
        e = self.errors(var)
        if e.size < 2:
            return np.array([])
        taus = np.array([lv["tau"] for lv in self.levels], dtype=float)
        return np.log(e[:-1] / e[1:]) / np.log(taus[:-1] / taus[1:])

    def rows(self):
        out = []
        ords = {v: self.orders(v) for v in self.variables}
        for i, lv in enumerate(self.levels):
            row = {"h": lv["h"], "tau": lv["tau"]}
            for v in self.variables:
                row[f"Error_{v}"] = lv["errors"][v]
                row[f"Order_{v}"] = "★" if i == 0 else ords[v][i - 1]
            out.append(row)
        return out

    def header(self):
        cols = ["h", "tau"]
        for v in self.variables:
            cols += [f"Error_{v}", f"Order_{v}"]
        return cols

    def to_csv(self, path):
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(self.header())
                for row in self.rows():
                    w.writerow([_fmt(row[c]) if not isinstance(row[c], str) else row[c]
                                for c in self.header()])
                if self.aborted:
                    fh.write(f"# aborted: {self.aborted}\n")
        except OSError as exc:
            raise RunIOError(f"cannot write {path}: {exc}") from exc

    def format(self) -> str:
        lines = ["  ".join(f"{c:>12}" for c in self.header())]
        for row in self.rows():
            cells = []
            for c in self.header():
                x = row[c]
                cells.append(f"{x:>12}" if isinstance(x, str) else f"{x:12.4e}" if c.startswith("Error") or c in ("h", "tau") else f"{x:12.4f}")
            lines.append("  ".join(cells))
        return "\n".join(lines)


class ConvergenceAborted(RuntimeError):
    def __init__(self, msg, table: ConvergenceTable):
        super().__init__(msg)
        self.table = table


def run_convergence_study(level_errors: Callable, ladder: Sequence, variables: Sequence[str],
                          jobs: int = 1, csv_path: Optional[str] = None) -> ConvergenceTable:
    """Evaluate ``level_errors((h, tau)) -> {var: error}`` over a ladder.

    Levels may run in ``jobs`` worker processes (``level_errors`` must then
    be picklable).  A failing level aborts the study; the finished levels
    are written to ``csv_path`` and carried by :class:`ConvergenceAborted`.
    """
    table = ConvergenceTable(tuple(variables))
    results = [None] * len(ladder)
    failure = None
    if jobs > 1 and len(ladder) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(level_errors, lv) for lv in ladder]
            for i, f in enumerate(futs):
                try:
                    results[i] = f.result()
                except Exception as exc:  # noqa: BLE001
                    failure = failure or (i, exc)
    else:
        for i, lv in enumerate(ladder):
            try:
                results[i] = level_errors(lv)
            except Exception as exc:  # noqa: BLE001
                failure = (i, exc)
                break
    stop = len(ladder) if failure is None else failure[0]
    for (h, tau), res in zip(ladder[:stop], results[:stop]):
        table.add(h, tau, res)
    if failure is not None:
        table.aborted = f"level {failure[0]} failed: {failure[1]}"
    if csv_path:
        table.to_csv(csv_path)
    if failure is not None:
        raise ConvergenceAborted(table.aborted, table) from failure[1]
    return table


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return "%.16e" % x


def snapshot_stem(name: str, t: float) -> str:
    return f"{name}_t{t:.6g}"


def versions() -> dict:
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "skewgrad": __version__}


def write_series(record: RunRecord, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for row in zip(record.times, record.energy, record.modified_energy,
                       record.dissipation, record.mass):
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_series(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [list(map(float, line.split(","))) for line in fh if line.strip()]
    data = np.array(rows).reshape(-1, len(header))
    return {c: data[:, i] for i, c in enumerate(header)}


def write_snapshot(out_dir, name, t, field_, grid_meta=None):
    stem = os.path.join(out_dir, snapshot_stem(name, t))
    arr = np.ascontiguousarray(field_, dtype="<f8")
    arr.tofile(stem + ".f64")
    header = {"name": name, "t": t, "shape": list(arr.shape), "dtype": "<f8",
              "order": "C", "grid": grid_meta or {}}
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1)
    return stem


def read_snapshot(path):
    """Read ``<stem>.f64`` (or its ``.json`` header); returns ``(array, header)``."""
    stem = path[:-4] if path.endswith(".f64") else path[:-5] if path.endswith(".json") else path
    try:
        with open(stem + ".json", encoding="utf-8") as fh:
            header = json.load(fh)
        arr = np.fromfile(stem + ".f64", dtype="<f8").reshape(header["shape"])
    except (OSError, ValueError) as exc:
        raise RunIOError(f"cannot read snapshot {stem}: {exc}") from exc
    return arr, header


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_run(record: RunRecord, out_dir, config: Optional[dict] = None):
    """Write series, snapshots and ``run.json`` under ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        write_series(record, os.path.join(out_dir, "series.csv"))
        grid_meta = record.meta.get("grid", {})
        files = []
        for t, fields in record.snapshots:
            for name, arr in fields.items():
                files.append(os.path.basename(write_snapshot(out_dir, name, t, arr, grid_meta)))
        if record.extra:
            with open(os.path.join(out_dir, "extra.csv"), "w", encoding="utf-8") as fh:
                keys = sorted(record.extra)
                fh.write(",".join(["t"] + keys) + "\n")
                for i, t in enumerate(record.times):
                    vals = [record.extra[k][i] if i < len(record.extra[k]) else math.nan for k in keys]
                    fh.write(",".join(_fmt(x) for x in [t] + vals) + "\n")
        run = {"config": _jsonable(config or {}), "meta": _jsonable(record.meta),
               "snapshots": files, "versions": versions()}
        with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
            json.dump(run, fh, indent=1, sort_keys=True)
    except OSError as exc:
        raise RunIOError(f"cannot write run to {out_dir}: {exc}") from exc
