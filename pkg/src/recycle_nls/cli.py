"""Command-line front end: ``recycle-nls {fit,recycle,coverage,simdist,tables}``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import stats
from .cli_io import FitOutput, RunConfig, TableResult, emit_results, load_dataset
from .errors import ParseError, RecycleError
from .models import RegressionModel, get_model, model_from_expression, register_model
from .recycler import (
    P_SAMPLE,
    coverage_study,
    direction,
    run_recycle,
    sampling_distribution_sim,
    simulate_dataset,
    unit_vector,
)
from .weights import parse_scheme
from .wls_solver import fit

SEED_ENV = "RECYCLE_NLS_SEED"
DEFAULT_N = (10, 30, 50, 80, 150)
ALL_SCHEMES = ("multinomial", "dirichlet:1", "exponential")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _schemes(text: str) -> list[str]:
    if text == "all":
        return list(ALL_SCHEMES)
    return [str(parse_scheme(s)) for s in text.split(",") if s.strip()]


def _parse_c(text: str | None, p: int) -> np.ndarray | None:
    """``e<j>`` (1-based coordinate) or a comma list, normalized to unit length."""
    if text is None:
        return None
    t = text.strip().lower()
    if t.startswith("e") and t[1:].isdigit():
        j = int(t[1:])
        if not 1 <= j <= p:
            raise ValueError(f"--c {text}: coordinate out of range for p={p}")
        return unit_vector(j - 1, p)
    v = np.array(_floats(text))
    if v.size != p:
        raise ValueError(f"--c needs {p} components, got {v.size}")
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise ValueError("--c must be nonzero")
    return direction(v / norm)


def load_model_config(path: str) -> RegressionModel:
    """Register a custom model from JSON: name, p, expr, and optional lower/upper/start."""
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno, column=exc.colno) from None
    try:
        model = model_from_expression(
            spec["name"], spec["expr"], int(spec["p"]),
            lower=spec.get("lower"), upper=spec.get("upper"), start=spec.get("start"),
        )
    except KeyError as exc:
        raise ParseError(f"model config lacks {exc.args[0]!r}", path=path) from None
    return register_model(model, replace=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recycle-nls", description=__doc__)
    ap.add_argument("command", choices=["fit", "recycle", "coverage", "simdist", "tables"])
    ap.add_argument("--model", default=None, help="model1, model2, chwirut1 or a custom model name")
    ap.add_argument("--model-config", default=None, help="JSON file declaring a custom model")
    ap.add_argument("--data", default=None,
                    help="NIST .dat file, CSV file (x,y) or nist:<Name> for a bundled file")
    ap.add_argument("--x-col", default="0", help="CSV x column (name or 0-based index)")
    ap.add_argument("--y-col", default="1", help="CSV y column (name or 0-based index)")
    ap.add_argument("--no-header", action="store_true", help="CSV file has no header row")
    ap.add_argument("--scheme", default=None,
                    help="multinomial, dirichlet[:alpha], exponential; comma list or 'all'")
    ap.add_argument("--B", type=int, default=10_000, help="recycled replicates per fit")
    ap.add_argument("--reps", type=int, default=10_000, help="outer simulated datasets")
    ap.add_argument("--n", default=None, help="sample size(s), comma list")
    ap.add_argument("--theta0", default=None, help="true parameter for simulations")
    ap.add_argument("--start", default=None, help="starting value for the base fit")
    ap.add_argument("--noise-sd", type=float, default=0.25)
    ap.add_argument("--level", type=float, default=0.95)
    ap.add_argument("--c", default=None, help="direction: e1, e2, ... or a comma list")
    ap.add_argument("--seed", type=int, default=None, help=f"falls back to ${SEED_ENV}, then 0")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None, help="output path (default stdout)")
    ap.add_argument("--format", choices=["csv", "json"], default="json")
    return ap


def _resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    return int(env) if env not in (None, "") else 0


def _config(ns) -> RunConfig:
    if ns.model_config:
        model = load_model_config(ns.model_config)
        ns.model = ns.model or model.name
    if ns.model is None:
        ns.model = "chwirut1" if ns.data else "model1"
    default_schemes = list(ALL_SCHEMES) if ns.command == "tables" else ["multinomial"]
    default_n = list(DEFAULT_N) if ns.command == "tables" else [150]
    return RunConfig(
        command=ns.command,
        model=ns.model,
        data=ns.data,
        theta0=_floats(ns.theta0) if ns.theta0 else None,
        start=_floats(ns.start) if ns.start else None,
        n=_ints(ns.n) if ns.n else default_n,
        noise_sd=ns.noise_sd,
        scheme=_schemes(ns.scheme) if ns.scheme else default_schemes,
        B=ns.B,
        reps=ns.reps,
        level=ns.level,
        c=None,
        seed=_resolve_seed(ns.seed),
        workers=ns.workers,
        out=ns.out,
        format=ns.format,
    )


def _need_data(cfg, ns):
    if cfg.data is None:
        raise ValueError(f"{cfg.command} needs --data")
    return load_dataset(cfg.data, ns.x_col, ns.y_col, has_header=not ns.no_header)


def cmd_fit(cfg, model, c, ns):
    data, nist = _need_data(cfg, ns)
    return FitOutput(fit(model, data, None, cfg.start), nist)


def cmd_recycle(cfg, model, c, ns):
    data, _ = _need_data(cfg, ns)
    return run_recycle(model, data, cfg.scheme[0], cfg.B, c, seed=cfg.seed,
                       workers=cfg.workers, theta_start=cfg.start)


def _theta0(cfg, model):
    return np.asarray(cfg.theta0 if cfg.theta0 is not None else model.start, float)


def cmd_simdist(cfg, model, c, ns):
    c = c if c is not None else np.full(model.p, model.p ** -0.5)
    return sampling_distribution_sim(model, _theta0(cfg, model), cfg.n[0], c, cfg.reps,
                                     cfg.noise_sd, cfg.seed, workers=cfg.workers)


def cmd_coverage(cfg, model, c, ns):
    th0 = _theta0(cfg, model)
    if len(cfg.n) == 1 and len(cfg.scheme) == 1:
        return coverage_study(model, th0, cfg.n[0], cfg.scheme[0], cfg.B, cfg.reps, cfg.level,
                              cfg.noise_sd, cfg.seed, workers=cfg.workers)
    rows, warnings = [], []
    for n in cfg.n:
        for s in cfg.scheme:
            try:
                rep = coverage_study(model, th0, n, s, cfg.B, cfg.reps, cfg.level, cfg.noise_sd,
                                     cfg.seed, workers=cfg.workers)
            except (RecycleError, ArithmeticError, ValueError, RuntimeError) as exc:
                warnings.append(f"n={n} scheme={s}: {exc}")
                continue
            for j in range(model.p):
                rows.append({"model": model.name, "n": n, "scheme": s, "param": j + 1,
                             "coverage": float(rep.coverage[j]), "mean_length": float(rep.mean_length[j]),
                             "used": rep.used, "dropped": rep.dropped, "unreliable": rep.unreliable})
    return TableResult("coverage_table", rows, warnings)


def _row(**kw):
    return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in kw.items()}


def _table_sampling(cfg, model, c):
    """One row per (n, scheme), carrying the simulated-distribution columns alongside."""
    th0 = _theta0(cfg, model)
    c = c if c is not None else np.full(model.p, model.p ** -0.5)
    rows, warnings = [], []
    for n in cfg.n:
        sim_cols = dict(sim_mean=None, sim_se=None, sim_sigma=None, sim_ks_normal=None)
        sim = None
        try:
            sim = sampling_distribution_sim(model, th0, n, c, cfg.reps, cfg.noise_sd, cfg.seed,
                                            workers=cfg.workers)
            s = stats.summarize(sim.r_stud)
            sim_cols = dict(sim_mean=s.mean, sim_se=s.sd, sim_sigma=float(np.mean(sim.sigma_hat)),
                            sim_ks_normal=stats.ks_vs_normal(sim.r_stud))
            if sim.dropped:
                warnings.append(f"n={n} simulated: {sim.dropped} of {cfg.reps} fits dropped")
        except (RecycleError, ArithmeticError, ValueError) as exc:
            warnings.append(f"n={n} simulated: {exc}")
        try:
            data = simulate_dataset(model, th0, n, cfg.noise_sd, cfg.seed, n, P_SAMPLE)
            base = fit(model, data, None, th0)
        except (RecycleError, ArithmeticError, ValueError) as exc:
            warnings.append(f"n={n} sample fit: {exc}")
            continue
        for sch in cfg.scheme:
            try:
                run = run_recycle(model, data, sch, cfg.B, c, seed=cfg.seed, workers=cfg.workers,
                                  base=base, domain=(P_SAMPLE, n))
                piv = run.pivots()
                s = stats.summarize(piv)
            except (RecycleError, ArithmeticError, ValueError, RuntimeError) as exc:
                warnings.append(f"n={n} {sch}: {exc}")
                continue
            if run.unreliable:
                warnings.append(f"n={n} {sch}: {run.n_excluded} of {run.B} replicates excluded")
            rows.append(_row(
                model=model.name, n=n, scheme=sch, **sim_cols,
                mean=s.mean, se=s.sd, sigma=float(np.mean(run.sigma_star[run.ok])),
                used=s.n, excluded=run.n_excluded, ks_normal=stats.ks_vs_normal(piv),
                ks_simulated=stats.ks_two_sample(piv, sim.r_stud) if sim is not None and sim.r_stud.size else None,
            ))
    return TableResult("sampling_table", rows, warnings)


def _table_dataset(cfg, model, c, ns):
    """Least-squares fit of a real dataset, then recycled means and SEs per scheme."""
    data, _ = _need_data(cfg, ns)
    base = fit(model, data, None, cfg.start)
    p = model.p

    def row(label, stat, theta, sigma):
        return _row(column=label, stat=stat, **{f"theta_{j + 1}": float(theta[j]) for j in range(p)},
                    sigma=float(sigma))

    rows = [row("lse", "estimate", base.theta, base.sigma_hat)]
    warnings = []
    for sch in cfg.scheme:
        try:
            run = run_recycle(model, data, sch, cfg.B, c, seed=cfg.seed, workers=cfg.workers, base=base)
        except (RecycleError, ArithmeticError, ValueError, RuntimeError) as exc:
            warnings.append(f"{sch}: {exc}")
            continue
        ok = run.ok
        th, sg = run.theta_star[ok], run.sigma_star[ok]
        rows.append(row(sch, "mean", th.mean(axis=0), sg.mean()))
        rows.append(row(sch, "se", th.std(axis=0, ddof=1), sg.std(ddof=1)))
        if run.unreliable:
            warnings.append(f"{sch}: {run.n_excluded} of {run.B} replicates excluded")
    return TableResult("dataset_table", rows, warnings)


def cmd_tables(cfg, model, c, ns):
    if cfg.data is not None:
        return _table_dataset(cfg, model, c, ns)
    return _table_sampling(cfg, model, c)


COMMANDS = {
    "fit": cmd_fit,
    "recycle": cmd_recycle,
    "coverage": cmd_coverage,
    "simdist": cmd_simdist,
    "tables": cmd_tables,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = _config(ns)
        model = get_model(cfg.model)
        c = _parse_c(ns.c, model.p)
        cfg.c = None if c is None else c.tolist()
        result = COMMANDS[cfg.command](cfg, model, c, ns)
        emit_results(result, cfg.format, cfg.out, cfg.echo())
    except (ParseError, OSError) as exc:
        print(f"recycle-nls: {exc}", file=sys.stderr)
        return 2
    except (RecycleError, ArithmeticError, ValueError, KeyError, RuntimeError) as exc:
        print(f"recycle-nls: {exc}", file=sys.stderr)
        return 1
    if isinstance(result, TableResult) and result.warnings and cfg.format == "csv":
        for w in result.warnings:
            print(f"recycle-nls: warning: {w}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
