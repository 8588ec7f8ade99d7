"""Result rows and their CSV / JSON serialization.

Floats are written with 17 significant digits so a round trip is exact;
non-finite values become the literal strings ``inf``, ``-inf`` and ``nan``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

from ..errors import ArgumentError, ConfigurationError

ROW_STATUSES = ("converged", "max-iters", "infeasible", "equal-power", "pass", "fail")


@dataclass
class ResultRow:
    experiment: str
    trial: int
    seed: int
    # sweep coordinates; unused axes keep the base-config value
    t_g: int
    rcs_variance_m2: float
    gamma_peb_m: float
    v_max_mps: float
    grid_m: int
    grid_n: int
    n_ap: int
    m_t: int
    target: int  # -1 for rows not tied to a target
    peb_exact_m: float
    peb_approx_m: float
    crlb_m2: float
    min_sinr_db: float
    min_se_bps_hz: float
    iterations: int
    status: str
    runtime_ms: float
    mean_resolvable_paths: float
    check: str = ""  # oracle-check only: which oracle
    oracle_error: float = float("nan")  # oracle-check only: worst relative error

    def __post_init__(self):
        if self.status not in ROW_STATUSES:
            raise ArgumentError(f"unknown row status {self.status!r}")

    def sort_key(self):
        return (
            self.t_g,
            self.rcs_variance_m2,
            self.n_ap,
            self.m_t,
            self.gamma_peb_m,
            self.grid_m,
            self.grid_n,
            self.v_max_mps,
            self.check,
            self.trial,
            self.target,
        )


FIELDS = tuple(f.name for f in fields(ResultRow))
_TYPES = {f.name: f.type for f in fields(ResultRow)}


def _fmt(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return _fmt(value)
    return value


def _parse(name, text):
    kind = _TYPES[name]
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, name)) for name in FIELDS])
    return buf.getvalue()


def rows_to_json(rows) -> str:
    data = [{k: _json_value(v) for k, v in asdict(row).items()} for row in rows]
    # repr of a Python float is already the shortest exact form
    return json.dumps(data, indent=1) + "\n"


def write_results(rows, path, fmt="csv"):
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"unknown output format {fmt!r}")
    text = rows_to_csv(rows) if fmt == "csv" else rows_to_json(rows)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results to {path}: {exc.strerror}") from None


def read_results(path, fmt=None) -> list:
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read results from {path}: {exc.strerror}") from None
    if fmt == "json":
        out = []
        for d in json.loads(text):
            # non-finite floats come back as strings
            out.append(ResultRow(**{k: _parse(k, v) if isinstance(v, str) else v for k, v in d.items()}))
        return out
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != FIELDS:
        raise ConfigurationError(f"{path}: unexpected CSV header")
    return [ResultRow(**{k: _parse(k, v) for k, v in zip(FIELDS, rec)}) for rec in reader]
