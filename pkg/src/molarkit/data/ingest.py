"""
Tabular ingestion for multitask regression.

Pipeline, in order: missing-value indicator columns with zero fill,
cross-validated Lasso feature selection on the pooled rows, a sequential
correlation filter in file column order, and optional standardization.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..core import LassoConfig, TaskDataset, lasso_fit
from ..exceptions import MalformedCsv, MissingColumn, TooFewRows

MISSING_SUFFIX = "__missing"


@dataclass
class IngestConfig:
    task_column: str = "task"
    response_column: str = "y"
    correlation_cutoff: float = 0.6
    cv_folds: int = 10
    split_fractions: Tuple[float, float, float] = (0.9, 0.05, 0.05)
    standardize: bool = True
    n_penalties: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.correlation_cutoff <= 1:
            raise ValueError("correlation_cutoff must lie in (0, 1]")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        _check_fractions(self.split_fractions)


def _check_fractions(fr):
    fr = tuple(float(f) for f in fr)
    if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9 or fr[0] == 0:
        raise ValueError("split fractions must be three nonnegative numbers summing to 1, train > 0")
    return fr


@dataclass
class MultiTaskTable:
    features: Dict[str, np.ndarray]
    responses: Dict[str, np.ndarray]
    columns: List[str]
    provenance: dict = field(default_factory=dict)
    task_column: str = "task"
    response_column: str = "y"

    @property
    def labels(self) -> List[str]:
        return list(self.features)

    def to_datasets(self) -> List[TaskDataset]:
        return [TaskDataset(i, self.features[k], self.responses[k]) for i, k in enumerate(self.labels)]

    def to_frame(self) -> pd.DataFrame:
        parts = []
        for k in self.labels:
            df = pd.DataFrame(self.features[k], columns=self.columns)
            df.insert(0, self.task_column, k)
            df[self.response_column] = self.responses[k]
            parts.append(df)
        return pd.concat(parts, ignore_index=True)


def _read(path, config: IngestConfig) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, keep_default_na=False, na_values=[""], encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc
    for col in (config.task_column, config.response_column):
        if col not in df.columns:
            raise MissingColumn(f"{path}: no column named {col!r}")
    return df


def _cv_select(X: np.ndarray, y: np.ndarray, config: IngestConfig, rng) -> Tuple[np.ndarray, float, list]:
    """Indices of features with nonzero Lasso coefficients at the CV-optimal penalty."""
    n, p = X.shape
    mu, sd = X.mean(axis=0), X.std(axis=0)
    Z = (X - mu) / np.where(sd > 0, sd, 1.0)
    yc = y - y.mean()
    lam_max = float(np.max(np.abs(Z.T @ yc)) / n)
    if lam_max == 0.0:
        return np.zeros(0, dtype=int), 0.0, []
    grid = lam_max * np.logspace(0, -4, config.n_penalties)
    folds = min(config.cv_folds, n)
    assign = rng.permutation(n) % folds
    cv_err = np.zeros(len(grid))
    for f in range(folds):
        tr, te = assign != f, assign == f
        ytr_mean = yc[tr].mean()
        ds = TaskDataset(f, Z[tr], yc[tr] - ytr_mean)
        beta = np.zeros(p)
        for i, lam in enumerate(grid):
            beta = lasso_fit(ds, LassoConfig(penalty=lam, tolerance=1e-6), warm_start=beta)
            r = yc[te] - ytr_mean - Z[te] @ beta
            cv_err[i] += r @ r
    cv_err /= n
    # ties go to the larger penalty
    best = int(np.flatnonzero(cv_err == cv_err.min())[0])
    beta = np.zeros(p)
    full = TaskDataset(-1, Z, yc)
    for lam in grid[: best + 1]:
        beta = lasso_fit(full, LassoConfig(penalty=lam, tolerance=1e-6), warm_start=beta)
    table = [{"penalty": float(g), "cv_mse": float(e)} for g, e in zip(grid, cv_err)]
    return np.flatnonzero(beta != 0.0), float(grid[best]), table


def _correlation_filter(X: np.ndarray, cutoff: float) -> List[int]:
    """Scan columns left to right, keeping one only if it is not too correlated with any kept column."""
    kept: List[int] = []
    Z = X - X.mean(axis=0)
    norms = np.linalg.norm(Z, axis=0)
    for j in range(X.shape[1]):
        ok = True
        for i in kept:
            r = (Z[:, i] @ Z[:, j]) / (norms[i] * norms[j])
            if abs(r) > cutoff:
                ok = False
                break
        if ok:
            kept.append(j)
    return kept


def ingest_csv(path, config: Optional[IngestConfig] = None) -> MultiTaskTable:
    config = config or IngestConfig()
    df = _read(path, config)
    prov = {
        "source": os.path.basename(str(path)),
        "rows_in": int(len(df)),
        "dummy_columns_added": [],
        "dropped_constant": [],
        "dropped_by_selection": [],
        "dropped_by_correlation": [],
        "rows_dropped_missing_response": 0,
    }
    bad_y = df[config.response_column].isna()
    if bad_y.any():
        prov["rows_dropped_missing_response"] = int(bad_y.sum())
        df = df.loc[~bad_y].reset_index(drop=True)
    if len(df) == 0:
        raise MalformedCsv(f"{path}: no rows with a response")
    try:
        y = df[config.response_column].astype(np.float64).to_numpy()
    except ValueError as exc:
        raise MalformedCsv(f"response column is not numeric: {exc}") from exc
    labels = df[config.task_column].astype(str).to_numpy()

    # 1. indicator columns for missing cells, then zero fill
    cols: List[str] = []
    data: List[np.ndarray] = []
    for col in df.columns:
        if col in (config.task_column, config.response_column):
            continue
        try:
            v = pd.to_numeric(df[col], errors="raise").astype(np.float64).to_numpy()
        except (ValueError, TypeError) as exc:
            raise MalformedCsv(f"feature column {col!r} is not numeric") from exc
        miss = np.isnan(v)
        cols.append(col)
        data.append(np.where(miss, 0.0, v))
        if miss.any():
            cols.append(col + MISSING_SUFFIX)
            data.append(miss.astype(np.float64))
            prov["dummy_columns_added"].append(col + MISSING_SUFFIX)
    X = np.column_stack(data) if data else np.zeros((len(df), 0))

    const = [j for j in range(X.shape[1]) if np.all(X[:, j] == X[0, j])]
    prov["dropped_constant"] = [cols[j] for j in const]
    live = [j for j in range(X.shape[1]) if j not in set(const)]
    X, cols = X[:, live], [cols[j] for j in live]

    # 2. pooled cross-validated Lasso selection
    rng = np.random.default_rng(config.seed)
    sel, lam, table = _cv_select(X, y, config, rng)
    prov["selection_penalty"] = lam
    prov["selection_cv_table"] = table
    prov["dropped_by_selection"] = [c for j, c in enumerate(cols) if j not in set(sel.tolist())]
    X, cols = X[:, sel], [cols[j] for j in sel]

    # 3. correlation filter in file order
    keep = _correlation_filter(X, config.correlation_cutoff)
    prov["dropped_by_correlation"] = [c for j, c in enumerate(cols) if j not in set(keep)]
    X, cols = X[:, keep], [cols[j] for j in keep]

    # 4. standardization
    if config.standardize:
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        X = (X - mu) / sd
        y_mu, y_sd = float(y.mean()), float(y.std()) or 1.0
        y = (y - y_mu) / y_sd
        prov["scaling"] = {
            "feature_mean": dict(zip(cols, mu.tolist())),
            "feature_scale": dict(zip(cols, sd.tolist())),
            "response_mean": y_mu,
            "response_scale": y_sd,
        }
    prov["columns_out"] = list(cols)

    feats, resp = {}, {}
    for lab in dict.fromkeys(labels):
        rows = labels == lab
        feats[lab] = X[rows]
        resp[lab] = y[rows]
    return MultiTaskTable(feats, resp, cols, prov, config.task_column, config.response_column)


def write_table(table: MultiTaskTable, out_dir, stem="processed") -> dict:
    """Write the combined CSV, one CSV per task, and a JSON provenance sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"combined": os.path.join(out_dir, f"{stem}.csv"), "tasks": {}}
    table.to_frame().to_csv(paths["combined"], index=False, float_format="%.17g")
    for lab in table.labels:
        df = pd.DataFrame(table.features[lab], columns=table.columns)
        df[table.response_column] = table.responses[lab]
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in lab)
        p = os.path.join(out_dir, f"{stem}_task_{safe}.csv")
        df.to_csv(p, index=False, float_format="%.17g")
        paths["tasks"][lab] = p
    paths["provenance"] = os.path.join(out_dir, f"{stem}_provenance.json")
    with open(paths["provenance"], "w") as fh:
        json.dump(table.provenance, fh, indent=2, sort_keys=True)
    return paths


def split_tasks(table: MultiTaskTable, fractions=(0.9, 0.05, 0.05), seed: int = 0):
    """Per-task random partition into (train, validation, test) tables."""
    fr = _check_fractions(fractions)
    rng = np.random.default_rng(seed)
    parts = [({}, {}) for _ in range(3)]
    for lab in table.labels:
        n = table.responses[lab].shape[0]
        n_train = int(round(fr[0] * n))
        n_val = int(round(fr[1] * n)) if fr[2] > 0 else n - n_train
        n_val = min(n_val, n - n_train)
        counts = [n_train, n_val, n - n_train - n_val]
        for k in range(3):
            if fr[k] > 0 and counts[k] == 0:
                raise TooFewRows(f"task {lab!r}: {n} rows cannot fill every split of {fr}")
        perm = rng.permutation(n)
        cuts = np.cumsum(counts)[:-1]
        for k, idx in enumerate(np.split(perm, cuts)):
            idx = np.sort(idx)
            parts[k][0][lab] = table.features[lab][idx]
            parts[k][1][lab] = table.responses[lab][idx]
    return tuple(
        MultiTaskTable(f, r, list(table.columns), dict(table.provenance, split=name, split_seed=seed),
                       table.task_column, table.response_column)
        for (f, r), name in zip(parts, ("train", "validation", "test"))
    )
