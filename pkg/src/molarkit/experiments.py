"""
Seeded experiment sweeps behind the command line: regression error
tables, bandit regret traces, recovery sweeps, ingestion and tuning.

Data for a (grid point, replicate) cell is generated from a seed that does
not depend on the method, so every method sees the same draws and adding a
method never shifts another method's numbers.
"""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .bandit import (
    BanditModel,
    EligibilityRule,
    PolicySpec,
    build_schedule,
    regret_summary,
    run_episode,
)
from .config import DEFAULT_TUNE_GRID, config_hash, expand_grid, seed_list
from .data import (
    BanditWorldSpec,
    IngestConfig,
    NoiseSpec,
    SynthRegressionSpec,
    gen_bandit_world,
    gen_regression_tasks,
    ingest_csv,
    split_tasks,
    write_table,
)
from .exceptions import ConfigError, NoConvergenceWarning
from .molar import (
    MolarConfig,
    RobustMultitaskConfig,
    individual_lasso,
    individual_ols,
    molar_fit,
    pooled_ols_fit,
    robust_multitask_fit,
)
from .recovery import RecoveryProblem, multitask_dantzig, project_unit_ball

REGRESS_COLUMNS = ["config_hash", "grid_index", "method", "d", "n", "M", "s", "sigma", "seed",
                   "task", "l1_error", "l2_error", "wall_ms"]
REGRESS_SUMMARY_COLUMNS = ["config_hash", "grid_index", "method", "d", "n", "M", "s", "sigma", "seed",
                           "avg_l1_error", "avg_l2_error"]
BANDIT_TRACE_COLUMNS = ["config_hash", "grid_index", "policy", "seed", "instance", "round", "cumulative_regret"]
BANDIT_SUMMARY_COLUMNS = ["config_hash", "grid_index", "policy", "instance", "activation_prob", "round",
                          "mean_regret", "stderr"]
REFIT_LOG_COLUMNS = ["config_hash", "grid_index", "policy", "seed", "batch", "eligible_count", "tau"]
RECOVER_COLUMNS = ["config_hash", "grid_index", "d", "n", "M", "s", "seed", "l1_error", "objective",
                   "converged", "max_constraint_violation", "iterations"]
TIMING_COLUMNS = {"wall_ms"}

_VALIDATION_SALT = 0x7A11D


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from integers and strings."""
    words = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0] >> 1)


def method_label(method: dict) -> str:
    return method.get("label", method["name"])


def _parallel_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _write_manifest(out_dir, cfg, kind, files, seeds, workers, started):
    manifest = {
        "tool": "molarkit",
        "version": __version__,
        "kind": kind,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seeds": seeds,
        "workers": workers,
        "python": platform.python_version(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": {k: os.path.basename(v) for k, v in files.items()},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _now():
    return datetime.now(timezone.utc).isoformat()


# --------------------------------------------------------------------------
# regression
# --------------------------------------------------------------------------

def fit_regression_method(method: dict, tasks, sigma=None):
    """Per-task estimates for one method spec (a dict as in the config file)."""
    name = method["name"]
    if name == "OLS":
        return individual_ols(tasks)
    if name == "LASSO":
        return individual_lasso(tasks, c_lambda=method.get("c_lambda", 0.005))
    if name == "POOLED":
        b = pooled_ols_fit(tasks)
        return [b] * len(tasks)
    if name == "RM":
        cfg = RobustMultitaskConfig(
            trim_fraction=method.get("trim_fraction", 0.1),
            penalty_coefficient=method.get("c_lambda", 0.035),
            sparsity_hint=method.get("sparsity_hint"),
        )
        return robust_multitask_fit(tasks, cfg)
    if name == "MOLAR":
        kw = {k: method[k] for k in ("option", "c_gamma", "schedule", "noise_scale") if k in method}
        return molar_fit(tasks, MolarConfig(**kw)).task_estimates
    raise ValueError(f"unknown regression method {name!r}")


def _regression_spec(point, seed):
    noise = NoiseSpec(point.get("noise", "gaussian"), point["sigma"])
    n = point["n"]
    if point.get("poor_task_n") is not None:
        n = [point["poor_task_n"]] + [point["n"]] * (point["M"] - 1)
    return SynthRegressionSpec(d=point["d"], M=point["M"], s=point["s"], n=n, noise=noise, seed=seed)


def _regress_cell(job):
    chash, gi, point, seed, methods, salt = job
    spec = _regression_spec(point, derive_seed(seed, gi, salt))
    tasks, _, betas = gen_regression_tasks(spec)
    rows = []
    for method in methods:
        t0 = time.perf_counter()
        est = fit_regression_method(method, tasks, point["sigma"])
        wall = (time.perf_counter() - t0) * 1e3
        for m, (b, truth) in enumerate(zip(est, betas)):
            rows.append({
                "config_hash": chash, "grid_index": gi, "method": method_label(method),
                "d": point["d"], "n": tasks[m].n, "M": point["M"], "s": point["s"],
                "sigma": float(point["sigma"]), "seed": seed, "task": m,
                "l1_error": float(np.abs(b - truth).sum()),
                "l2_error": float(np.linalg.norm(b - truth)),
                "wall_ms": wall,
            })
    return rows


_GRID_KEYS_REGRESS = ["d", "n", "M", "s", "sigma", "noise", "poor_task_n"]


def _regress_rows(cfg, methods, seeds, workers, salt=0):
    chash = config_hash(cfg)
    points = expand_grid(cfg["grid"], _GRID_KEYS_REGRESS)
    jobs = [(chash, gi, p, s, methods, salt) for gi, p in enumerate(points) for s in seeds]
    rows = [r for cell in _parallel_map(_regress_cell, jobs, workers) for r in cell]
    order = {method_label(m): i for i, m in enumerate(methods)}
    rows.sort(key=lambda r: (r["grid_index"], order[r["method"]], r["seed"], r["task"]))
    return rows


def summarize_regress(rows):
    groups = {}
    for r in rows:
        key = (r["config_hash"], r["grid_index"], r["method"], r["d"], r["M"], r["s"], r["sigma"], r["seed"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, grp in groups.items():
        out.append({
            "config_hash": key[0], "grid_index": key[1], "method": key[2], "d": key[3],
            "n": max(g["n"] for g in grp), "M": key[4], "s": key[5], "sigma": key[6], "seed": key[7],
            "avg_l1_error": float(np.mean([g["l1_error"] for g in grp])),
            "avg_l2_error": float(np.mean([g["l2_error"] for g in grp])),
        })
    return out


def run_regress(cfg, out_dir, workers=1, base_seed=None):
    started = _now()
    os.makedirs(out_dir, exist_ok=True)
    seeds = seed_list(cfg, base_seed)
    rows = _regress_rows(cfg, cfg["methods"], seeds, workers)
    files = {
        "results": os.path.join(out_dir, "regress_results.csv"),
        "summary": os.path.join(out_dir, "regress_summary.csv"),
    }
    _write_csv(files["results"], REGRESS_COLUMNS, rows)
    _write_csv(files["summary"], REGRESS_SUMMARY_COLUMNS, summarize_regress(rows))
    files["manifest"] = _write_manifest(out_dir, cfg, "regress", files, seeds, workers, started)
    return files


def tune(cfg, out_dir, workers=1, base_seed=None):
    """Grid search one coefficient on freshly drawn validation data.

    Returns the chosen value; ties go to the smaller coefficient.
    """
    started = _now()
    os.makedirs(out_dir, exist_ok=True)
    spec = cfg.get("tune")
    if spec is None:
        raise ValueError("tune needs a 'tune' block in a regress config")
    grid = sorted(spec.get("grid", DEFAULT_TUNE_GRID))
    seeds = seed_list(cfg, base_seed)
    sigmas = cfg["grid"]["sigma"]
    if spec.get("scale_by_sigma", False) and len(set(sigmas)) != 1:
        raise ValueError("scale_by_sigma needs a single sigma in the grid")
    scale = sigmas[0] if spec.get("scale_by_sigma", False) else 1.0
    methods = []
    for v in grid:
        m = dict(spec["method"])
        m[spec["parameter"]] = v * scale
        m["label"] = f"{m['name']}[{spec['parameter']}={v!r}]"
        methods.append(m)
    rows = _regress_rows(cfg, methods, seeds, workers, salt=_VALIDATION_SALT)
    summary = summarize_regress(rows)
    table = []
    for v, m in zip(grid, methods):
        errs = [r["avg_l1_error"] for r in summary if r["method"] == m["label"]]
        se = float(np.std(errs, ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else 0.0
        table.append({"value": v, "effective_value": v * scale, "avg_l1_error": float(np.mean(errs)),
                      "stderr": se, "cells": len(errs)})
    best = min(table, key=lambda r: (r["avg_l1_error"], r["value"]))
    files = {"table": os.path.join(out_dir, "tune_table.csv"), "result": os.path.join(out_dir, "tune_result.json")}
    _write_csv(files["table"], ["value", "effective_value", "avg_l1_error", "stderr", "cells"], table)
    with open(files["result"], "w") as fh:
        json.dump({"parameter": spec["parameter"], "method": spec["method"]["name"],
                   "chosen": best["value"], "effective_value": best["effective_value"]}, fh, indent=2)
    files["manifest"] = _write_manifest(out_dir, cfg, "tune", files, seeds, workers, started)
    return best["value"], table, files


# --------------------------------------------------------------------------
# bandits
# --------------------------------------------------------------------------

def policy_from_method(method: dict) -> PolicySpec:
    kind = {"MOLARB": "molar", "OLSB": "ols", "LASSOB": "lasso", "RMB": "rm", "ORACLE": "oracle"}[method["name"]]
    kw = {k: method[k] for k in ("option", "c_gamma", "schedule", "c_lambda", "trim_fraction") if k in method}
    return PolicySpec(kind=kind, **kw)


def _world_for(point, world_seed):
    p_mode = point.get("p_mode", "uniform")
    return gen_bandit_world(BanditWorldSpec(
        d=point["d"], s=point["s"], M=point["M"], K=point["K"], T=point["T"],
        noise_scale=point["sigma"], model=BanditModel(point.get("model", "C")),
        activation=p_mode, seed=world_seed,
    ))


def _rule_from(cfg):
    e = cfg.get("eligibility", {})
    return EligibilityRule(
        mode=e.get("mode", "dimension"), dimension_factor=e.get("dimension_factor", 2.0),
        c_b=e.get("c_b", 1.0), subgaussian_L=e.get("L", 1.0), mu=e.get("mu", 1.0),
    )


def _bandit_cell(job):
    chash, gi, point, seed, method, rule, fixed_world = job
    world_seed = derive_seed(fixed_world, gi) if fixed_world is not None else derive_seed(seed, gi, "world")
    world = _world_for(point, world_seed)
    schedule = build_schedule(point["T"], point.get("H0", 1))
    policy = policy_from_method(method)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        trace = run_episode(world, policy, schedule, rule, seed=derive_seed(seed, gi, "episode"))
    trace.seed = seed
    trace.policy = method_label(method)
    return gi, method_label(method), seed, trace, world.activation_probs


def run_bandit(cfg, out_dir, workers=1, base_seed=None):
    started = _now()
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(cfg)
    seeds = seed_list(cfg, base_seed)
    points = expand_grid(cfg["grid"], ["d", "s", "M", "K", "T", "H0", "sigma", "model", "p_mode"])
    rule = _rule_from(cfg)
    methods = cfg["methods"]
    jobs = [(chash, gi, p, s, m, rule, cfg.get("world_seed"))
            for gi, p in enumerate(points) for m in methods for s in seeds]
    results = _parallel_map(_bandit_cell, jobs, workers)
    order = {method_label(m): i for i, m in enumerate(methods)}
    results.sort(key=lambda r: (r[0], order[r[1]], r[2]))

    files = {
        "traces": os.path.join(out_dir, "bandit_traces.csv"),
        "summary": os.path.join(out_dir, "bandit_summary.csv"),
        "refits": os.path.join(out_dir, "bandit_refit_log.csv"),
    }
    with open(files["traces"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BANDIT_TRACE_COLUMNS)
        for gi, label, seed, tr, _ in results:
            cum = tr.per_instance_cumulative
            for m in range(cum.shape[0]):
                for t in range(cum.shape[1]):
                    w.writerow([chash, gi, label, seed, m, t + 1, repr(float(cum[m, t]))])
    with open(files["refits"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REFIT_LOG_COLUMNS)
        for gi, label, seed, tr, _ in results:
            for e in tr.batch_refit_log:
                w.writerow([chash, gi, label, seed, e["batch"], len(e["eligible"]),
                            "" if e["tau"] is None else e["tau"]])
    with open(files["summary"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BANDIT_SUMMARY_COLUMNS)
        keys = sorted({(r[0], r[1]) for r in results}, key=lambda k: (k[0], order[k[1]]))
        for gi, label in keys:
            grp = [r for r in results if r[0] == gi and r[1] == label]
            summ = regret_summary([r[3] for r in grp])
            # activation probabilities are only meaningful when the world is fixed across seeds
            probs = grp[0][4] if cfg.get("world_seed") is not None else None
            M, T = summ.mean.shape
            for m in range(M):
                p = "" if probs is None else repr(float(probs[m]))
                for t in range(T):
                    w.writerow([chash, gi, label, m, p, t + 1, repr(float(summ.mean[m, t])),
                                repr(float(summ.stderr[m, t]))])
    files["manifest"] = _write_manifest(out_dir, cfg, "bandit", files, seeds, workers, started)
    return files


# --------------------------------------------------------------------------
# recovery
# --------------------------------------------------------------------------

def _recover_cell(job):
    chash, gi, point, seed, solver = job
    spec = SynthRegressionSpec(d=point["d"], M=point["M"], s=point["s"], n=point["n"],
                               noise=NoiseSpec("gaussian", 0.0), seed=derive_seed(seed, gi))
    tasks, _, betas = gen_regression_tasks(spec)
    prob = RecoveryProblem(
        tasks,
        solver_tolerance=solver.get("tolerance", 1e-8),
        max_iterations=solver.get("max_iterations", 50_000),
        step=solver.get("step", 1.0),
        relaxation=solver.get("relaxation", 1.5),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        res = multitask_dantzig(prob)
    err = np.mean([np.abs(project_unit_ball(b) - t).sum() for b, t in zip(res.task_estimates, betas)])
    return {
        "config_hash": chash, "grid_index": gi, "d": point["d"], "n": point["n"], "M": point["M"],
        "s": point["s"], "seed": seed, "l1_error": float(err), "objective": res.objective,
        "converged": res.converged, "max_constraint_violation": res.max_constraint_violation,
        "iterations": res.iterations,
    }


def run_recover(cfg, out_dir, workers=1, base_seed=None):
    started = _now()
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(cfg)
    seeds = seed_list(cfg, base_seed)
    points = expand_grid(cfg["grid"], ["d", "n", "M", "s"])
    solver = cfg.get("solver", {})
    jobs = [(chash, gi, p, s, solver) for gi, p in enumerate(points) for s in seeds]
    rows = _parallel_map(_recover_cell, jobs, workers)
    rows.sort(key=lambda r: (r["grid_index"], r["seed"]))
    files = {"results": os.path.join(out_dir, "recover_results.csv")}
    _write_csv(files["results"], RECOVER_COLUMNS, rows)
    files["manifest"] = _write_manifest(out_dir, cfg, "recover", files, seeds, workers, started)
    return files


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

def run_ingest(cfg, out_dir, workers=1, base_seed=None):
    started = _now()
    os.makedirs(out_dir, exist_ok=True)
    seed = seed_list(cfg, base_seed)[0]
    if not os.path.isfile(cfg["input"]):
        raise ConfigError(f"input file {cfg['input']!r} does not exist")
    icfg = IngestConfig(
        task_column=cfg.get("task_column", "task"),
        response_column=cfg.get("response_column", "y"),
        correlation_cutoff=cfg.get("correlation_cutoff", 0.6),
        cv_folds=cfg.get("cv_folds", 10),
        split_fractions=tuple(cfg.get("split_fractions", (0.9, 0.05, 0.05))),
        standardize=cfg.get("standardize", True),
        seed=seed,
    )
    table = ingest_csv(cfg["input"], icfg)
    paths = write_table(table, out_dir)
    files = {"processed": paths["combined"], "provenance": paths["provenance"]}
    for part in split_tasks(table, icfg.split_fractions, seed):
        name = part.provenance["split"]
        p = write_table(part, out_dir, stem=f"split_{name}")
        files[f"split_{name}"] = p["combined"]
    files["manifest"] = _write_manifest(out_dir, cfg, "ingest", files, [seed], workers, started)
    return files


def read_rows(path, drop=TIMING_COLUMNS):
    """CSV rows as dicts, without timing columns (for determinism checks)."""
    with open(path, newline="") as fh:
        return [{k: v for k, v in r.items() if k not in drop} for r in csv.DictReader(fh)]
