"""CSV readers and writers.

Every file has a header row, comma separators, dot decimals and UTF-8.
Floats are written with ``repr`` so files round-trip and are byte-stable.

    telemetry  timestamp,omega,omega_dot,current,voltage
    trace      timestamp,setpoint,estimate,command,true_thrust,converged,iter,compute_us
    bench      throttle_pct,scale_force[,omega]   preceded by '# arm_L = ...' and
               '# arm_H = ...' comment lines
    summary    method,metric,axis,mean,median,stddev
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .aero import TelemetrySample

TELEMETRY_COLUMNS = ("timestamp", "omega", "omega_dot", "current", "voltage")
TRACE_COLUMNS = ("timestamp", "setpoint", "estimate", "command", "true_thrust",
                 "converged", "iter", "compute_us")
BENCH_COLUMNS = ("throttle_pct", "scale_force")
SUMMARY_COLUMNS = ("method", "metric", "axis", "mean", "median", "stddev")
COMPARISON_COLUMNS = ("throttle_pct", "thrust_estimated", "thrust_measured")


class MalformedCsv(ValueError):
    pass


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence],
              preamble: Sequence[str] = ()) -> Path:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)
    return path


def _read_rows(path, required: Sequence[str]):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc
    comments = {}
    lines = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("#"):
            body = stripped[1:]
            if "=" in body:
                key, _, value = body.partition("=")
                comments[key.strip()] = (value.strip(), lineno)
            continue
        if stripped:
            lines.append((lineno, line))
    if not lines:
        raise MalformedCsv(f"{path}: no header row")
    header_lineno, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    missing = [c for c in required if c not in header]
    if missing:
        raise MalformedCsv(f"{path}:{header_lineno}: missing column(s) {', '.join(missing)}")
    rows = []
    for lineno, line in lines[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise MalformedCsv(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append((lineno, {h: (float(c) if c.strip() else None) for h, c in zip(header, cells)}))
        except ValueError as exc:
            raise MalformedCsv(f"{path}:{lineno}: {exc}") from exc
    return header, rows, comments


def read_telemetry(path) -> list[TelemetrySample]:
    _, rows, _ = _read_rows(path, TELEMETRY_COLUMNS)
    out = []
    last_t = None
    for lineno, r in rows:
        if any(r[c] is None for c in TELEMETRY_COLUMNS):
            raise MalformedCsv(f"{path}:{lineno}: empty field")
        if r["omega"] < 0:
            raise MalformedCsv(f"{path}:{lineno}: negative omega")
        if last_t is not None and r["timestamp"] < last_t:
            raise MalformedCsv(f"{path}:{lineno}: timestamp decreases")
        last_t = r["timestamp"]
        out.append(TelemetrySample(omega=r["omega"], omega_dot=r["omega_dot"],
                                   current_ia=r["current"], voltage=r["voltage"],
                                   timestamp=r["timestamp"]))
    return out


def write_telemetry(path, samples: Iterable[TelemetrySample]) -> Path:
    return write_csv(path, TELEMETRY_COLUMNS,
                     ((s.timestamp, s.omega, s.omega_dot, s.current_ia, s.voltage) for s in samples))


@dataclass(frozen=True)
class BenchRecord:
    throttle_pct: float
    scale_force_Fs: float
    arm_L: float
    arm_H: float
    omega: float | None = None


def read_bench(path) -> list[BenchRecord]:
    _, rows, comments = _read_rows(path, BENCH_COLUMNS)
    arms = {}
    for key in ("arm_L", "arm_H"):
        if key not in comments:
            raise MalformedCsv(f"{path}: missing '# {key} = <metres>' header line")
        value, lineno = comments[key]
        try:
            arms[key] = float(value)
        except ValueError as exc:
            raise MalformedCsv(f"{path}:{lineno}: {key} is not a number") from exc
    out = []
    for lineno, r in rows:
        thr, fs = r["throttle_pct"], r["scale_force"]
        if thr is None or fs is None:
            raise MalformedCsv(f"{path}:{lineno}: empty field")
        if not 0.0 <= thr <= 100.0:
            raise MalformedCsv(f"{path}:{lineno}: throttle_pct {thr} outside [0, 100]")
        out.append(BenchRecord(thr, fs, arms["arm_L"], arms["arm_H"], r.get("omega")))
    if not out:
        raise MalformedCsv(f"{path}: no data rows")
    return out


def write_bench(path, records: Sequence[BenchRecord]) -> Path:
    path = Path(path)
    with_omega = any(r.omega is not None for r in records)
    cols = BENCH_COLUMNS + (("omega",) if with_omega else ())
    rows = [(r.throttle_pct, r.scale_force_Fs) + ((r.omega,) if with_omega else ()) for r in records]
    preamble = (f"arm_L = {records[0].arm_L!r}", f"arm_H = {records[0].arm_H!r}")
    return write_csv(path, cols, rows, preamble)


def read_comparison(path):
    """Estimated vs measured thrust table: (throttle, estimated, measured) lists."""
    _, rows, _ = _read_rows(path, COMPARISON_COLUMNS)
    cols = tuple([] for _ in COMPARISON_COLUMNS)
    for lineno, r in rows:
        for c, name in zip(cols, COMPARISON_COLUMNS):
            if r[name] is None:
                raise MalformedCsv(f"{path}:{lineno}: empty {name}")
            c.append(r[name])
    return cols


def write_trace(path, trace, timing: bool = False) -> Path:
    rows = zip(trace.timestamp.tolist(), trace.setpoint.tolist(), trace.estimate.tolist(),
               trace.command.tolist(), trace.true_thrust.tolist(), trace.converged.tolist(),
               trace.iterations.tolist(),
               trace.compute_us.tolist() if timing else [None] * len(trace))
    return write_csv(path, TRACE_COLUMNS, rows)
