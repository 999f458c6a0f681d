"""Batch experiment runner.

    python -m markov_ldp run config.json [--output-dir DIR] [--seed N] [--threads K]
    python -m markov_ldp list-models
    python -m markov_ldp describe TASK

Exit codes: 0 when every task assertion passes, 1 when a task fails, 2 for
config or name errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import drift, ldp, simulate, spectral
from .io import write_csv, write_json, write_manifest
from .markov_core import TransitionKernel
from .models import MODELS, build_model, ou_grid

log = logging.getLogger("markov_ldp")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Param:
    kind: str
    required: bool = False
    default: Any = None
    doc: str = ""


@dataclass(frozen=True)
class TaskSpec:
    doc: str
    params: dict
    columns: tuple
    run: Callable = field(compare=False, default=None)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_CHECKS = {
    "float": (_is_num, "a number"),
    "int": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "bool": (lambda v: isinstance(v, bool), "true or false"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "floats": (lambda v: _is_num(v) or (isinstance(v, list) and v and all(_is_num(x) for x in v)),
               "a number or non-empty list of numbers"),
    "ints": (lambda v: (isinstance(v, int) and not isinstance(v, bool))
             or (isinstance(v, list) and v and all(isinstance(x, int) and not isinstance(x, bool) for x in v)),
             "an integer or non-empty list of integers"),
    "range": (lambda v: isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v), "a [lo, hi] pair"),
    "grid": (lambda v: (isinstance(v, list) and v and all(_is_num(x) for x in v))
             or (isinstance(v, dict) and set(v) == {"lo", "hi", "points"}),
             "a list of numbers or {lo, hi, points}"),
}


def _as_list(v) -> list:
    return list(v) if isinstance(v, list) else [v]


# ---------------------------------------------------------------------------
# task bodies: each returns (rows for the CSV, JSON payload, passed)


def _task_spectral(ctx, p):
    K = spectral.scale_kernel(ctx.P, ctx.F, p["alpha"])
    trip = spectral.principal_eigen(K)
    payload = trip.to_dict()
    passed = max(trip.residual_f, trip.residual_mu) <= p["residual_tol"]
    rows = []
    if p["mmet_N"]:
        curve = spectral.mmet_exact_curve(ctx.P, ctx.F, p["alpha"], p["x"], p["mmet_N"])
        rows = [(int(n), float(np.real(e)), float(d)) for n, e, d in zip(curve.n, curve.E, curve.deviation)]
        payload["mmet"] = {"target": complex(curve.target), "predicted_slope": curve.predicted_slope}
    return rows, payload, passed


def _task_drift(ctx, p):
    V, W, C = p["V"], p["W"], p["C"]
    if V is None:
        if ctx.ou is None:
            raise ConfigError("drift task needs V unless the model is ou_grid")
        V, W, C = ctx.ou.V, ctx.ou.W, ctx.ou.C
    V = np.asarray(V, dtype=float)
    if C is None:
        C = drift.minimal_drift_set(V, spectral.nonlinear_generator(ctx.P, V)) or tuple(range(ctx.P.n))
    if p["delta"] is None or p["b"] is None:
        fit = drift.fit_drift_params(ctx.P, p["kind"], V, W, C)
        if fit is None:
            return [], {"kind": p["kind"], "holds": False, "reason": "no negative drift off C"}, not p["expect_holds"]
        delta, b = fit
    else:
        delta, b = p["delta"], p["b"]
    cert = drift.check_drift(ctx.P, p["kind"], V, W, C, delta, b)
    rows = [(i, float(V[i]), float(cert.slack[i]), i in cert.C) for i in range(ctx.P.n)]
    return rows, cert.to_dict(), cert.holds == p["expect_holds"]


def _grid(g):
    if isinstance(g, dict):
        return list(np.linspace(g["lo"], g["hi"], int(g["points"])))
    return g


def _task_lambda_curve(ctx, p):
    curve = ldp.lambda_curve(ctx.P, ctx.F, _grid(p["grid"]), check=p["check"])
    rows = [(r["a"], r["Lambda"], r["d1"], r["d2"]) for r in curve.rows()]
    convex = bool(np.all(curve.d2 > 0)) if np.ptp(ctx.F) > 0 else True
    return rows, {"grid": curve.grid, "Lambda": curve.values, "convex": convex}, convex


def _task_rate_point(ctx, p):
    rows = []
    for c in _as_list(p["c"]):
        rp = ldp.solve_rate_point(ctx.P, ctx.F, c)
        rows.append((rp.c, rp.a, rp.J, rp.sigma2))
    return rows, {"fmax": ldp.fmax(ctx.P, ctx.F), "points": [dict(zip(("c", "a", "J", "sigma2"), r)) for r in rows]}, True


def _task_tails(ctx, p):
    info = ldp.lattice_span(ctx.F)
    rows, passed = [], True
    lo, hi = p["assert_ratio"] if p["assert_ratio"] else (-math.inf, math.inf)
    ns = _as_list(p["n"])
    checked = set(_as_list(p["assert_n"])) if p["assert_n"] is not None else {max(ns)}
    for n in ns:
        if info.is_lattice:
            ta = ldp.bahadur_rao_lattice(ctx.P, ctx.F, p["x"], p["c"], n)
            exact = ldp.exact_tail_dp(ctx.P, ctx.F, p["x"], p["c"], n)
        else:
            ta = ldp.bahadur_rao_nonlattice(ctx.P, ctx.F, p["x"], p["c"], n)
            exact = math.nan
        ratio = ta.predicted / exact if exact > 0 else math.nan
        if n in checked and not math.isnan(ratio):
            passed &= lo <= ratio <= hi
        rows.append((n, ta.c, ta.predicted, exact, ratio, ta.method))
    payload = {"lattice": info.is_lattice, "span": info.span, "x": p["x"], "c": p["c"],
               "rows": [dict(zip(TASKS["tails"].columns, r)) for r in rows]}
    return rows, payload, bool(passed)


def _task_duality(ctx, p):
    rows, passed = [], True
    for a in _as_list(p["a"]):
        trip, tw = spectral.tilted_chain(ctx.P, ctx.F, a)
        Gamma = tw.pi_twisted[:, None] * tw.kernel.rows
        leg = ldp.legendre_dual_measure(ctx.P, tw.pi_twisted)
        ent = ldp.entropy_rate_pair(ctx.P, Gamma)
        kern = ldp.entropy_rate_measure(ctx.P, tw.pi_twisted)
        ident = a * float(tw.pi_twisted @ ctx.F) - (math.log(trip.lam) if a else 0.0)
        ok = max(abs(leg - ent), abs(ent - ident), abs(kern - ent)) <= p["tol"]
        passed &= ok
        rows.append((a, leg, ent, kern, ident, ok))
    return rows, {"rows": [dict(zip(TASKS["duality"].columns, r)) for r in rows]}, bool(passed)


def _task_simulate(ctx, p):
    seed = ctx.seed if p["seed"] is None else p["seed"]
    if p["method"] == "naive":
        est = simulate.tail_estimate_naive(ctx.P, ctx.F, p["x"], p["c"], p["n"], p["reps"], seed, ctx.threads)
    elif p["method"] == "tilted":
        est = simulate.tail_estimate_tilted(ctx.P, ctx.F, p["x"], p["c"], p["n"], p["reps"], seed,
                                            threads=ctx.threads)
    else:
        raise ConfigError(f"simulate.method must be 'naive' or 'tilted', got {p['method']!r}")
    exact = math.nan
    if ldp.lattice_span(ctx.F).is_lattice:
        try:
            exact = ldp.exact_tail_dp(ctx.P, ctx.F, p["x"], p["c"], p["n"])
        except ValueError:
            pass
    passed = True
    if p["assert_sigma"] is not None and not math.isnan(exact):
        passed = abs(est.value - exact) <= p["assert_sigma"] * est.std_error
    rec = est.to_dict()
    rec["exact"] = exact
    row = (est.method, est.n, est.c, est.reps, est.seed, est.value, est.std_error, exact)
    return [row], rec, bool(passed)


TASKS: dict[str, TaskSpec] = {
    "duality": TaskSpec(
        "Lambda*, the pair entropy rate and the kernel-space entropy minimum at pi_a",
        {"a": Param("floats", True, doc="tilt value(s)"), "tol": Param("float", False, 1e-6, "agreement tolerance")},
        ("a", "legendre", "entropy_pair", "entropy_kernel", "identity", "agree"),
        _task_duality,
    ),
    "drift": TaskSpec(
        "check a drift inequality, fitting delta and b when absent",
        {
            "kind": Param("str", True, doc="V2 | V3 | V4 | DV2 | DV3 | DV4"),
            "V": Param("floats", False, None, "Lyapunov function (defaults to the fitted one for ou_grid)"),
            "W": Param("floats", False, None, "weight for kind 3"),
            "C": Param("ints", False, None, "small set"),
            "delta": Param("float", False, None, "drift rate"),
            "b": Param("float", False, None, "bound on C"),
            "expect_holds": Param("bool", False, True, "expected verdict"),
        },
        ("state", "V", "slack", "in_C"),
        _task_drift,
    ),
    "lambda_curve": TaskSpec(
        "Lambda(aF) with first and second derivatives on a grid",
        {"grid": Param("grid", True, doc="list of a values or {lo, hi, points}"),
         "check": Param("bool", False, False, "cross-check derivatives by finite differences")},
        ("a", "Lambda", "d1", "d2"),
        _task_lambda_curve,
    ),
    "rate_point": TaskSpec(
        "saddle point a and rate J(c) for upper-tail thresholds",
        {"c": Param("floats", True, doc="threshold(s) in (pi(F), F_max)")},
        ("c", "a", "J", "sigma2"),
        _task_rate_point,
    ),
    "simulate": TaskSpec(
        "Monte Carlo estimate of P_x{S_n >= n c}",
        {
            "x": Param("int", True, doc="start state"),
            "c": Param("float", True, doc="threshold"),
            "n": Param("int", True, doc="horizon"),
            "reps": Param("int", True, doc="replicates"),
            "method": Param("str", False, "tilted", "naive | tilted"),
            "seed": Param("int", False, None, "overrides the run seed"),
            "assert_sigma": Param("float", False, None, "require |estimate - exact| <= k std errors"),
        },
        ("method", "n", "c", "reps", "seed", "value", "std_error", "exact"),
        _task_simulate,
    ),
    "spectral": TaskSpec(
        "principal eigen-triple of exp(alpha F) P, optionally with the mean ergodic curve",
        {
            "alpha": Param("float", False, 1.0, "tilt"),
            "x": Param("int", False, 0, "start state for the curve"),
            "mmet_N": Param("int", False, 0, "curve length (0 disables)"),
            "residual_tol": Param("float", False, 1e-9, "eigen residual bound"),
        },
        ("n", "E_n", "deviation"),
        _task_spectral,
    ),
    "tails": TaskSpec(
        "Bahadur-Ranga Rao prediction against the exact lattice tail",
        {
            "x": Param("int", True, doc="start state"),
            "c": Param("float", True, doc="threshold"),
            "n": Param("ints", True, doc="horizon(s)"),
            "assert_ratio": Param("range", False, None, "required [lo, hi] for predicted / exact"),
            "assert_n": Param("ints", False, None, "horizons where the ratio band applies (default: largest n)"),
        },
        ("n", "c_n", "predicted", "exact", "ratio", "method"),
        _task_tails,
    ),
}


# ---------------------------------------------------------------------------
# config handling


@dataclass
class Context:
    P: TransitionKernel
    F: np.ndarray
    seed: int
    threads: int
    ou: Optional[Any] = None


def _load(path: Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _functional(spec, n: int) -> np.ndarray:
    if isinstance(spec, list):
        vals = spec
    elif isinstance(spec, dict) and "values" in spec:
        vals = spec["values"]
    elif isinstance(spec, dict) and "indicator" in spec:
        vals = np.zeros(n)
        idx = _as_list(spec["indicator"])
        if not all(isinstance(i, int) and 0 <= i < n for i in idx):
            raise ConfigError(f"functional.indicator: states must be integers in 0..{n - 1}")
        vals[idx] = 1.0
    else:
        raise ConfigError("functional: expected a list of values, {values: [...]} or {indicator: state(s)}")
    if not (len(vals) == n and all(_is_num(v) for v in vals)):
        raise ConfigError(f"functional: expected {n} numbers")
    return np.asarray(vals, dtype=float)


def validate(cfg: dict) -> list[dict]:
    """Type-check every task block; returns tasks with defaults filled in."""
    errors = []
    for key in ("model", "tasks"):
        if key not in cfg:
            errors.append(f"{key}: required field missing")
    model = cfg.get("model", {})
    if "model" in cfg:
        if not isinstance(model, dict) or "name" not in model:
            errors.append("model: expected {name, params}")
        elif model["name"] not in MODELS:
            errors.append(f"model.name: unknown model {model['name']!r}; known: {sorted(MODELS)}")
        elif not isinstance(model.get("params", {}), dict):
            errors.append("model.params: expected an object")
    if "seed" in cfg and not _CHECKS["int"][0](cfg["seed"]):
        errors.append("seed: expected an integer")
    tasks = cfg.get("tasks", [])
    if not isinstance(tasks, list):
        errors.append("tasks: expected a list")
        tasks = []
    out = []
    for i, t in enumerate(tasks):
        where = f"tasks[{i}]"
        if not isinstance(t, dict) or "type" not in t:
            errors.append(f"{where}: expected an object with a 'type' field")
            continue
        spec = TASKS.get(t["type"])
        if spec is None:
            errors.append(f"{where}.type: unknown task {t['type']!r}; known: {sorted(TASKS)}")
            continue
        for k in t:
            if k != "type" and k not in spec.params:
                errors.append(f"{where}.{k}: unknown parameter for task {t['type']!r}")
        filled = {"type": t["type"]}
        for name, prm in spec.params.items():
            if name not in t or t[name] is None:
                if prm.required:
                    errors.append(f"{where}.{name}: required parameter missing")
                filled[name] = prm.default
                continue
            ok, what = _CHECKS[prm.kind]
            if not ok(t[name]):
                errors.append(f"{where}.{name}: expected {what}, got {json.dumps(t[name])}")
            filled[name] = t[name]
        out.append(filled)
    if errors:
        raise ConfigError("\n".join(errors))
    return out


def run(config_path, output_dir: Optional[str] = None, seed: Optional[int] = None, threads: int = 1) -> int:
    try:
        cfg = _load(Path(config_path))
        tasks = validate(cfg)
        model = cfg["model"]
        params = model.get("params", {})
        try:
            P = build_model(model["name"], params)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model.params: {e}")
        ou = None
        if model["name"] == "ou_grid":
            from .models import GridSpec
            g = None if params.get("lo") is None else GridSpec(params["lo"], params["hi"], params.get("points", 201))
            ou = ou_grid(params.get("delta", 0.5), params.get("sigma", 1.0), g)
        F = _functional(cfg.get("functional", [0.0] * P.n), P.n)
        out = Path(output_dir or cfg.get("output", "out"))
        run_seed = seed if seed is not None else cfg.get("seed", 0)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    ctx = Context(P, F, run_seed, threads, ou)
    artifacts, results = [], []
    ok_all = True
    schema = {}
    for i, t in enumerate(tasks):
        spec = TASKS[t["type"]]
        stem = f"{i:02d}_{t['type']}"
        try:
            rows, payload, passed = spec.run(ctx, t)
        except Exception as e:  # a failing task must not abort the rest of the run
            log.error("%s failed: %s", stem, e)
            rows, payload, passed = [], {"error": f"{type(e).__name__}: {e}"}, False
        write_csv(out / f"{stem}.csv", spec.columns, rows)
        write_json(out / f"{stem}.json", {"task": t, "passed": passed, "result": payload})
        artifacts += [f"{stem}.csv", f"{stem}.json"]
        schema[t["type"]] = {"doc": spec.doc, "columns": list(spec.columns)}
        results.append({"task": stem, "passed": passed})
        ok_all &= passed
    write_json(out / "schema.json", schema)
    artifacts.append("schema.json")
    write_manifest(out, artifacts, {"seed": run_seed, "model": model, "tasks": results, "passed": ok_all})
    return 0 if ok_all else 1


def list_models() -> str:
    return "\n".join(f"{name}\t{e.doc}\tdefaults={json.dumps(e.params)}" for name, e in sorted(MODELS.items()))


def describe(task: str) -> str:
    if task not in TASKS:
        raise KeyError(task)
    spec = TASKS[task]
    lines = [f"{task}: {spec.doc}", "parameters:"]
    for name, p in spec.params.items():
        flag = "required" if p.required else f"default={json.dumps(p.default)}"
        lines.append(f"  {name} ({p.kind}, {flag}): {p.doc}")
    lines.append("csv columns: " + ", ".join(spec.columns))
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="markov_ldp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute a JSON experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, default=1)
    sub.add_parser("list-models", help="list registered models")
    d = sub.add_parser("describe", help="describe a task type")
    d.add_argument("task")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    if args.cmd == "run":
        return run(args.config, args.output_dir, args.seed, args.threads)
    if args.cmd == "list-models":
        print(list_models())
        return 0
    try:
        print(describe(args.task))
    except KeyError:
        print(f"unknown task {args.task!r}; known: {', '.join(sorted(TASKS))}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
