"""Dataset readers (NIST StRD, CSV) and result writers (CSV, JSON)."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import stats
from .errors import MissingDataMarker, ParseError, TooFewReplicates
from .models import Dataset
from .recycler import CoverageReport, RecycleRun, SimulatedPivots, confidence_interval
from .wls_solver import FitResult, Status

__all__ = [
    "RunConfig",
    "NistDataset",
    "parse_nist_strd",
    "parse_csv",
    "load_dataset",
    "bundled_dataset",
    "fmt_float",
    "emit_results",
    "TableResult",
    "FitOutput",
]

COMMANDS = ("fit", "recycle", "coverage", "simdist", "tables")


@dataclass
class RunConfig:
    """Everything a CLI command needs.  ``workers`` and ``out`` never affect results."""

    command: str
    model: str = "model1"
    data: str | None = None
    theta0: list[float] | None = None
    start: list[float] | None = None
    n: list[int] = field(default_factory=lambda: [150])
    noise_sd: float = 0.25
    scheme: list[str] = field(default_factory=lambda: ["multinomial"])
    B: int = 10_000
    reps: int = 10_000
    level: float = 0.95
    c: list[float] | None = None
    seed: int = 0
    workers: int = 1
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.B < 1 or self.reps < 1:
            raise ValueError("B and reps must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    def echo(self) -> dict:
        """Result-relevant settings, for embedding in output files."""
        d = {k: v for k, v in vars(self).items() if k not in ("workers", "out", "format")}
        return d


# reading ------------------------------------------------------------------------


@dataclass(frozen=True)
class NistDataset:
    name: str
    data: Dataset
    certified: np.ndarray | None = None
    certified_sd: np.ndarray | None = None
    residual_sd: float | None = None
    starts: tuple[np.ndarray, ...] = ()
    declared_n: int | None = None


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PARAM_RE = re.compile(rf"^\s*b(\d+)\s*=\s*((?:{_NUM}\s*)+)$")
_RSD_RE = re.compile(rf"Residual\s+Standard\s+Deviation:\s*({_NUM})")
_NOBS_RE = re.compile(r"Number\s+of\s+Observations:\s*(\d+)")
_NAME_RE = re.compile(r"Dataset\s+Name:\s*(\S+)")


def parse_nist_strd(path) -> NistDataset:
    """Read a NIST StRD nonlinear-regression file.

    The observations follow the last line that starts with ``Data:``; each
    row is ``y x``.  Certified parameter values, their standard deviations
    and the residual SD come from the header when present.
    """
    path = Path(path)
    text = path.read_text()
    return _parse_nist_text(text, path)


def _parse_nist_text(text: str, path) -> NistDataset:
    lines = text.splitlines()
    marker = None
    for i, line in enumerate(lines):
        if line.lstrip().startswith("Data:"):
            marker = i
    if marker is None:
        raise MissingDataMarker("no 'Data:' line", path=path)

    header = lines[:marker]
    name_m = _NAME_RE.search("\n".join(header))
    name = name_m.group(1) if name_m else Path(str(path)).stem

    params = {}
    for line in header:
        m = _PARAM_RE.match(line)
        if m:
            params[int(m.group(1))] = [float(v) for v in m.group(2).split()]
    certified = certified_sd = None
    starts: tuple[np.ndarray, ...] = ()
    if params:
        rows = [params[k] for k in sorted(params)]
        width = min(len(r) for r in rows)
        if width >= 2:
            certified = np.array([r[-2] for r in rows])
            certified_sd = np.array([r[-1] for r in rows])
            starts = tuple(np.array([r[k] for r in rows]) for k in range(width - 2))
    joined = "\n".join(header)
    rsd = _RSD_RE.search(joined)
    nobs = _NOBS_RE.search(joined)

    ys, xs = [], []
    for lineno in range(marker + 1, len(lines)):
        fields = lines[lineno].split()
        if not fields:
            continue
        if len(fields) != 2:
            raise ParseError(f"expected 2 columns 'y x', got {len(fields)}", path=path, line=lineno + 1)
        try:
            y, x = float(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError(f"non-numeric row {lines[lineno].strip()!r}", path=path, line=lineno + 1) from None
        ys.append(y)
        xs.append(x)
    if not ys:
        raise ParseError("no observations after 'Data:'", path=path, line=marker + 1)
    declared = int(nobs.group(1)) if nobs else None
    if declared is not None and declared != len(ys):
        raise ParseError(f"header declares {declared} observations, found {len(ys)}", path=path)
    try:
        data = Dataset(np.array(xs), np.array(ys))
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None
    return NistDataset(
        name=name,
        data=data,
        certified=certified,
        certified_sd=certified_sd,
        residual_sd=float(rsd.group(1)) if rsd else None,
        starts=starts,
        declared_n=declared,
    )


def parse_csv(path, x_col=0, y_col=1, has_header: bool = True) -> Dataset:
    """Read two numeric columns from a CSV file, keeping row order.

    Columns are given by header name or 0-based index.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError("empty CSV file", path=path)
    start = 0
    xi, yi = x_col, y_col
    if has_header:
        head = [h.strip() for h in rows[0]]
        start = 1
        xi = _col_index(head, x_col, path)
        yi = _col_index(head, y_col, path)
    xs, ys = [], []
    for k, row in enumerate(rows[start:], start=start + 1):
        vals = []
        for col in (xi, yi):
            if col >= len(row):
                raise ParseError("missing column", path=path, line=k, column=col + 1)
            try:
                vals.append(float(row[col]))
            except ValueError:
                raise ParseError(f"non-numeric cell {row[col]!r}", path=path, line=k, column=col + 1) from None
        xs.append(vals[0])
        ys.append(vals[1])
    if not xs:
        raise ParseError("no data rows", path=path)
    try:
        return Dataset(np.array(xs), np.array(ys))
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None


def _col_index(head, col, path):
    if isinstance(col, int):
        return col
    if isinstance(col, str) and col.isdigit():
        return int(col)
    try:
        return head.index(col)
    except ValueError:
        raise ParseError(f"no column named {col!r}", path=path, line=1) from None


def bundled_dataset(name: str = "Chwirut1") -> NistDataset:
    """One of the NIST files shipped with the package."""
    res = resources.files("recycle_nls") / "data" / f"{name}.dat"
    return _parse_nist_text(res.read_text(), f"{name}.dat")


def load_dataset(spec: str, x_col=0, y_col=1, has_header: bool = True) -> tuple[Dataset, NistDataset | None]:
    """``spec`` is a path (``.dat`` -> NIST, otherwise CSV) or ``nist:<Name>`` for a bundled file."""
    if spec.startswith("nist:"):
        nd = bundled_dataset(spec[5:])
        return nd.data, nd
    if spec.lower().endswith(".dat"):
        nd = parse_nist_strd(spec)
        return nd.data, nd
    return parse_csv(spec, x_col, y_col, has_header), None


# writing --------------------------------------------------------------------------


def fmt_float(v) -> str:
    """17 significant digits: enough to round-trip any double."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _summary(a) -> dict:
    a = np.asarray(a, float)
    a = a[np.isfinite(a)]
    if a.size == 0:
        return {"n": 0, "mean": None, "sd": None}
    s = stats.summarize(a)
    return {"n": s.n, "mean": s.mean, "sd": s.sd, "min": s.min, "max": s.max}


def fit_record(res: FitResult, nist: NistDataset | None = None) -> dict:
    se = res.sigma_hat * np.sqrt(np.diag(res.sigma) / res.n)
    out = {
        "theta": res.theta,
        "std_error": se,
        "q": res.q,
        "sigma_hat": res.sigma_hat,
        "sigma_inv": res.sigma_inv,
        "sigma": res.sigma,
        "iters": res.iters,
        "converged": res.converged,
        "status": res.status.label,
        "criterion": res.criterion.name.lower(),
        "grad_norm": res.grad_norm,
        "n": res.n,
    }
    if nist is not None and nist.certified is not None:
        out["certified"] = {"theta": nist.certified, "std_error": nist.certified_sd,
                            "residual_sd": nist.residual_sd}
    return out


def _normal_scores(run: RecycleRun) -> np.ndarray:
    """Normal quantile of (rank - 1/2)/B' for each usable replicate; NaN elsewhere."""
    out = np.full(run.B, np.nan)
    ok = np.flatnonzero(run.ok)
    if ok.size:
        order = ok[np.argsort(run.r_star_stud[ok], kind="stable")]
        m = order.size
        out[order] = [stats.normal_quantile((k + 0.5) / m) for k in range(m)]
    return out


def recycle_summary(run: RecycleRun, level: float = 0.95) -> dict:
    ok = run.ok
    cis = []
    for j in range(run.base.p):
        try:
            ci = confidence_interval(run, j, level)
            cis.append({"param": j + 1, "level": level, "lower": ci.lower, "upper": ci.upper,
                        "length": ci.length, "method": ci.method})
        except TooFewReplicates:
            cis.append({"param": j + 1, "level": level, "lower": None, "upper": None,
                        "length": None, "method": "bootstrap-t"})
    piv = run.r_star_stud[ok]
    piv = piv[np.isfinite(piv)]
    return {
        "theta_star": [_summary(run.theta_star[ok, j]) for j in range(run.base.p)],
        "sigma_star": _summary(run.sigma_star[ok]),
        "r_star": _summary(run.r_star[ok]),
        "r_star_stud": _summary(piv),
        "ks_normal": stats.ks_vs_normal(piv) if piv.size else None,
        "confidence_intervals": cis,
        "excluded": run.n_excluded,
        "unreliable": run.unreliable,
    }


@dataclass
class FitOutput:
    """A fit together with the certified values of its dataset, if any."""

    fit: FitResult
    nist: NistDataset | None = None


@dataclass
class TableResult:
    """Rows of a tabulated summary plus any per-cell warnings."""

    kind: str
    rows: list[dict]
    warnings: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _write_csv(header, rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else fmt_float(v) if isinstance(v, (float, np.floating)) else v
                    for v in row])


def _csv_payload(result) -> tuple[list, list]:
    if isinstance(result, RecycleRun):
        p = result.base.p
        header = ["b", *[f"theta_star_{j + 1}" for j in range(p)], "sigma_star", "r_star",
                  "r_star_stud", "flag", "normal_score"]
        scores = _normal_scores(result)
        rows = [
            [b + 1, *result.theta_star[b].tolist(), float(result.sigma_star[b]), float(result.r_star[b]),
             float(result.r_star_stud[b]), Status(int(result.flags[b])).label,
             None if math.isnan(scores[b]) else float(scores[b])]
            for b in range(result.B)
        ]
        return header, rows
    if isinstance(result, SimulatedPivots):
        p = result.theta_hat.shape[1] if result.theta_hat.ndim == 2 else 0
        header = ["rep", *[f"theta_hat_{j + 1}" for j in range(p)], "sigma_hat", "r", "r_stud"]
        rows = [[int(result.rep_index[k]), *result.theta_hat[k].tolist(), float(result.sigma_hat[k]),
                 float(result.r[k]), float(result.r_stud[k])] for k in range(result.r.size)]
        return header, rows
    if isinstance(result, CoverageReport):
        header = ["rep", "param", "lower", "upper", "length", "covered"]
        rows = []
        for k, rep in enumerate(result.rep_index):
            for j in range(result.lower.shape[1]):
                lo, hi = float(result.lower[k, j]), float(result.upper[k, j])
                rows.append([int(rep), j + 1, lo, hi, hi - lo, int(result.covered[k, j])])
        return header, rows
    if isinstance(result, FitOutput):
        result = result.fit
    if isinstance(result, FitResult):
        rec = fit_record(result)
        header = ["param", "estimate", "std_error"]
        rows = [[j + 1, float(rec["theta"][j]), float(rec["std_error"][j])] for j in range(result.p)]
        rows.append(["sigma", result.sigma_hat, None])
        return header, rows
    if isinstance(result, TableResult):
        keys = []
        for r in result.rows:
            keys.extend(k for k in r if k not in keys)
        return keys, [[r.get(k) for k in keys] for r in result.rows]
    raise TypeError(f"cannot emit {type(result).__name__}")


def _json_payload(result, config: dict | None) -> dict:
    doc: dict = {"config": config or {}}
    if isinstance(result, RecycleRun):
        scores = _normal_scores(result)
        doc.update({
            "kind": "recycle",
            "scheme": str(result.scheme),
            "tau": result.tau,
            "c": result.c,
            "B": result.B,
            "base": fit_record(result.base),
            "summary": recycle_summary(result, (config or {}).get("level", 0.95)),
            "replicates": [
                {"b": b + 1, "theta_star": result.theta_star[b], "sigma_star": result.sigma_star[b],
                 "r_star": result.r_star[b], "r_star_stud": result.r_star_stud[b],
                 "flag": Status(int(result.flags[b])).label, "normal_score": scores[b]}
                for b in range(result.B)
            ],
        })
    elif isinstance(result, SimulatedPivots):
        doc.update({
            "kind": "simdist",
            "summary": {"r": _summary(result.r), "r_stud": _summary(result.r_stud),
                        "sigma_hat": _summary(result.sigma_hat), "dropped": result.dropped,
                        "ks_normal": stats.ks_vs_normal(result.r_stud) if result.r_stud.size else None},
            "reps": [{"rep": int(result.rep_index[k]), "theta_hat": result.theta_hat[k],
                      "sigma_hat": result.sigma_hat[k], "r": result.r[k], "r_stud": result.r_stud[k]}
                     for k in range(result.r.size)],
        })
    elif isinstance(result, CoverageReport):
        doc.update({
            "kind": "coverage",
            "summary": {"coverage": result.coverage, "mean_length": result.mean_length,
                        "used": result.used, "dropped": result.dropped, "unreliable": result.unreliable},
            "intervals": [{"rep": int(r), "lower": result.lower[k], "upper": result.upper[k],
                           "covered": result.covered[k]} for k, r in enumerate(result.rep_index)],
        })
    elif isinstance(result, FitOutput):
        doc.update({"kind": "fit", "fit": fit_record(result.fit, result.nist)})
    elif isinstance(result, FitResult):
        doc.update({"kind": "fit", "fit": fit_record(result)})
    elif isinstance(result, TableResult):
        doc.update({"kind": result.kind, "rows": result.rows, "warnings": result.warnings, **result.extra})
    else:
        raise TypeError(f"cannot emit {type(result).__name__}")
    return _jsonable(doc)


def render(result, fmt: str = "json", config: dict | None = None) -> str:
    if fmt == "json":
        return json.dumps(_json_payload(result, config), indent=1, allow_nan=False) + "\n"
    if fmt == "csv":
        header, rows = _csv_payload(result)
        if not rows:
            raise ValueError("nothing to emit")
        buf = io.StringIO()
        _write_csv(header, rows, buf)
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def emit_results(result, fmt: str, path, config: dict | None = None) -> None:
    """Write ``result`` as CSV or JSON to ``path`` ("-" or None for stdout)."""
    text = render(result, fmt, config)
    if path in (None, "-"):
        import sys

        sys.stdout.write(text)
        return
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
