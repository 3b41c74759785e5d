"""
Asynchronous multitask linear contextual bandits with batched greedy play.

Two reward models are supported. Under ``C`` every arm has its own
context and the instance has one parameter vector; under ``P`` there is a
single context per round and one parameter vector per arm. Instances
activate independently each round, play greedily against estimates frozen
at the last batch boundary, and refit at the end of each doubling batch.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import LassoConfig, TaskDataset, gram_min_eig_ratio, lasso_fit, ols_fit
from .exceptions import InvalidHorizon, ShapeMismatch, SingularDesign
from .kernels import greedy_choice
from .molar import (
    DEFAULT_C_GAMMA,
    MolarConfig,
    RobustMultitaskConfig,
    ShrinkOption,
    ThresholdSchedule,
    lasso_penalty,
    molar_fit,
    robust_multitask_fit,
)


class BanditModel(str, enum.Enum):
    C = "C"  # per-arm contexts, shared parameter
    P = "P"  # shared context, per-arm parameters


@dataclass
class BanditWorld:
    model: BanditModel
    d: int
    K: int
    M: int
    T: int
    true_params: np.ndarray  # (M, d) under C, (M, K, d) under P
    activation_probs: np.ndarray
    noise_scale: float = 0.0
    context_cov: Optional[np.ndarray] = None  # None means identity

    def __post_init__(self):
        self.model = BanditModel(self.model)
        self.true_params = np.asarray(self.true_params, dtype=np.float64)
        self.activation_probs = np.asarray(self.activation_probs, dtype=np.float64)
        want = (self.M, self.d) if self.model is BanditModel.C else (self.M, self.K, self.d)
        if self.true_params.shape != want:
            raise ShapeMismatch(f"true_params has shape {self.true_params.shape}, expected {want}")
        if self.activation_probs.shape != (self.M,):
            raise ShapeMismatch("need one activation probability per instance")
        if np.any(self.activation_probs < 0) or np.any(self.activation_probs > 1):
            raise ValueError("activation probabilities must lie in [0, 1]")
        if np.any(np.linalg.norm(self.true_params, axis=-1) > 1 + 1e-9):
            raise ValueError("every parameter vector must have l2 norm at most 1")
        if self.K < 1 or self.T < 1:
            raise ValueError("need K >= 1 and T >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        self._chol = None
        if self.context_cov is not None:
            self.context_cov = np.asarray(self.context_cov, dtype=np.float64)
            if self.context_cov.shape != (self.d, self.d):
                raise ShapeMismatch("context_cov must be d x d")
            self._chol = np.linalg.cholesky(self.context_cov)

    def transform_contexts(self, z):
        return z if self._chol is None else z @ self._chol.T


@dataclass
class BatchSchedule:
    initial_size: int
    boundaries: List[tuple]  # inclusive (first_round, last_round), 1-based
    count: int  # Q, the number of batches after the initial one

    @property
    def ends(self):
        return [b[1] for b in self.boundaries]


def build_schedule(T: int, H0: int) -> BatchSchedule:
    """Doubling batches ``[1, H0]`` then ``(2^(q-1) H0, min(2^q H0, T)]`` for q = 1..Q."""
    if not (isinstance(T, (int, np.integer)) and isinstance(H0, (int, np.integer))):
        raise InvalidHorizon("T and H0 must be integers")
    if not 1 <= H0 <= T:
        raise InvalidHorizon(f"need 1 <= H0 <= T, got H0={H0}, T={T}")
    q_count = 0
    while (H0 << q_count) < T:
        q_count += 1
    bounds = [(1, int(H0))]
    for q in range(1, q_count + 1):
        bounds.append(((H0 << (q - 1)) + 1, min(H0 << q, T)))
    return BatchSchedule(initial_size=int(H0), boundaries=bounds, count=q_count)


class EligibilityMode(str, enum.Enum):
    THEORY = "theory"
    DIMENSION = "dimension"


@dataclass
class EligibilityRule:
    mode: EligibilityMode = EligibilityMode.DIMENSION
    c_b: float = 1.0
    dimension_factor: float = 2.0
    subgaussian_L: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        self.mode = EligibilityMode(self.mode)
        if self.c_b <= 0 or self.dimension_factor <= 0 or self.mu <= 0 or self.subgaussian_L <= 0:
            raise ValueError("eligibility constants must be positive")

    def threshold(self, M: int, T: int, d: int, K: int, L=None, mu=None) -> int:
        if self.mode is EligibilityMode.DIMENSION:
            return max(d + 1, math.ceil(self.dimension_factor * d))
        L = self.subgaussian_L if L is None else L
        mu = self.mu if mu is None else mu
        inner = max(L * math.log(K) / mu, math.e) if K > 1 else math.e
        return max(d + 1, math.ceil(2 * self.c_b * (math.log(M * T) + d * math.log(inner))))


def eligibility_set(counts, rule: EligibilityRule, M, T, d, L=None, K=1, mu=None) -> set:
    thr = rule.threshold(M, T, d, K, L=L, mu=mu)
    return {m for m, c in enumerate(counts) if c >= thr}


class PolicyKind(str, enum.Enum):
    MOLAR = "molar"
    OLS = "ols"
    LASSO = "lasso"
    RM = "rm"
    ORACLE = "oracle"


_POLICY_NAMES = {
    PolicyKind.MOLAR: "MOLARB",
    PolicyKind.OLS: "OLSB",
    PolicyKind.LASSO: "LASSOB",
    PolicyKind.RM: "RMB",
    PolicyKind.ORACLE: "ORACLE",
}


@dataclass
class PolicySpec:
    kind: PolicyKind = PolicyKind.MOLAR
    option: ShrinkOption = ShrinkOption.HARD
    c_gamma: float = DEFAULT_C_GAMMA
    schedule: ThresholdSchedule = ThresholdSchedule.THEOREM_SQRT_LOG
    c_lambda: float = 0.025
    trim_fraction: float = 0.1

    def __post_init__(self):
        self.kind = PolicyKind(self.kind)
        self.option = ShrinkOption(self.option)
        self.schedule = ThresholdSchedule(self.schedule)

    @property
    def name(self) -> str:
        return _POLICY_NAMES[self.kind]


@dataclass
class RegretTrace:
    per_instance_cumulative: np.ndarray  # (M, T)
    activation_counts: np.ndarray
    batch_refit_log: List[dict]
    seed: int
    policy: str = ""
    actions: Optional[np.ndarray] = None  # (M, T), -1 when inactive
    consumed_counts: Optional[np.ndarray] = None  # observations used by completed refits
    carried_counts: Optional[np.ndarray] = None  # observations still buffered at the end
    eigen_log: List[dict] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.per_instance_cumulative[:, -1]


def choose_arm(contexts, estimate, rng) -> int:
    """Greedy arm for one instance and round.

    Model C passes ``contexts`` of shape (K, d) and one estimate of length d;
    Model P passes a single context of length d and estimates of shape (K, d).
    Exact ties are broken uniformly with one draw from ``rng``.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if contexts.ndim == 2 and estimate.ndim == 1:
        scores = contexts @ estimate
    elif contexts.ndim == 1 and estimate.ndim == 2:
        scores = estimate @ contexts
    else:
        raise ShapeMismatch("need (K, d) contexts with a d-vector, or a d-vector with (K, d) estimates")
    return int(greedy_choice(scores[None, :], np.array([rng.random()]))[0])


_STREAMS = {"activation": 0, "contexts": 1, "noise": 2, "tiebreak": 3}


def substreams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent named generators derived from one master seed."""
    return {
        name: np.random.default_rng(np.random.SeedSequence([int(seed), code]))
        for name, code in _STREAMS.items()
    }


class _Buffer:
    """Rows observed since the last successful refit."""

    __slots__ = ("rows", "ys")

    def __init__(self):
        self.rows = []
        self.ys = []

    def __len__(self):
        return len(self.ys)

    def add(self, x, y):
        self.rows.append(x)
        self.ys.append(y)

    def dataset(self, task_id, d):
        X = np.asarray(self.rows, dtype=np.float64).reshape(-1, d)
        return TaskDataset(task_id, X, np.asarray(self.ys, dtype=np.float64))

    def clear(self):
        self.rows = []
        self.ys = []


def _refit_group(policy: PolicySpec, datasets: Dict[int, TaskDataset], sigma: float, entry: dict):
    """Refit one group of buffers (one arm under model P). Returns {instance: estimate}."""
    if not datasets:
        return {}
    if policy.kind is PolicyKind.LASSO:
        out = {}
        for m, ds in datasets.items():
            lam = lasso_penalty(policy.c_lambda, ds.n, ds.d)
            out[m] = lasso_fit(ds, LassoConfig(penalty=lam))
        return out

    fits = {}
    for m, ds in datasets.items():
        try:
            fits[m] = ols_fit(ds)
        except SingularDesign:
            entry["failed"].append(m)
    if not fits:
        return {}
    ids = sorted(fits)
    if policy.kind is PolicyKind.OLS:
        return {m: fits[m].coefficients for m in ids}
    tasks = [datasets[m] for m in ids]
    fit_list = [fits[m] for m in ids]
    if policy.kind is PolicyKind.MOLAR:
        cfg = MolarConfig(
            option=policy.option, c_gamma=policy.c_gamma, noise_scale=sigma, schedule=policy.schedule
        )
        res = molar_fit(tasks, cfg, fits=fit_list)
        entry["tau"] = res.tau
        return dict(zip(ids, res.task_estimates))
    if policy.kind is PolicyKind.RM:
        # small eligible sets cannot support the nominal trim; fall back to the largest valid one
        omega = min(policy.trim_fraction, ((len(ids) - 1) // 2) / len(ids))
        cfg = RobustMultitaskConfig(trim_fraction=omega, penalty_coefficient=policy.c_lambda)
        return dict(zip(ids, robust_multitask_fit(tasks, cfg, fits=fit_list)))
    raise ValueError(f"policy {policy.kind} does not refit")


def run_episode(
    world: BanditWorld,
    policy: PolicySpec,
    schedule: Optional[BatchSchedule] = None,
    rule: Optional[EligibilityRule] = None,
    seed: int = 0,
    record_eigen: bool = False,
) -> RegretTrace:
    """Simulate ``world.T`` rounds of ``policy`` and return the per-instance regret trace."""
    schedule = schedule or build_schedule(world.T, 1)
    rule = rule or EligibilityRule()
    if schedule.boundaries[-1][1] != world.T:
        raise InvalidHorizon("schedule does not end at the world's horizon")
    M, K, d, T = world.M, world.K, world.d, world.T
    model_c = world.model is BanditModel.C
    beta = world.true_params
    rng = substreams(seed)

    if policy.kind is PolicyKind.ORACLE:
        est = beta.copy()
    else:
        est = np.zeros_like(beta)
    n_groups = 1 if model_c else K
    buffers = [[_Buffer() for _ in range(n_groups)] for _ in range(M)]

    cum = np.zeros((M, T))
    actions = np.full((M, T), -1, dtype=np.int64)
    act_counts = np.zeros(M, dtype=np.int64)
    consumed = np.zeros(M, dtype=np.int64)
    running = np.zeros(M)
    log: List[dict] = []
    eigen_log: List[dict] = []
    ends = {end: q for q, (_, end) in enumerate(schedule.boundaries)}
    ctx_shape = (M, K, d) if model_c else (M, d)

    for t in range(1, T + 1):
        active = rng["activation"].random(M) < world.activation_probs
        X = world.transform_contexts(rng["contexts"].standard_normal(ctx_shape))
        eps = rng["noise"].standard_normal(M)
        u = rng["tiebreak"].random(M)
        idx = np.flatnonzero(active)
        if idx.size:
            if model_c:
                scores = np.einsum("mkd,md->mk", X[idx], est[idx])
                means = np.einsum("mkd,md->mk", X[idx], beta[idx])
            else:
                scores = np.einsum("md,mkd->mk", X[idx], est[idx])
                means = np.einsum("md,mkd->mk", X[idx], beta[idx])
            arms = greedy_choice(scores, u[idx])
            chosen = means[np.arange(idx.size), arms]
            running[idx] += means.max(axis=1) - chosen
            rewards = chosen + world.noise_scale * eps[idx]
            actions[idx, t - 1] = arms
            act_counts[idx] += 1
            for j, m in enumerate(idx):
                if model_c:
                    buffers[m][0].add(X[m, arms[j]], rewards[j])
                else:
                    buffers[m][arms[j]].add(X[m], rewards[j])
        cum[:, t - 1] = running

        if t in ends and t < T and policy.kind is not PolicyKind.ORACLE:
            q = ends[t]
            counts = [sum(len(b) for b in buffers[m]) for m in range(M)]
            eligible = sorted(eligibility_set(counts, rule, M, T, d, K=K))
            for g in range(n_groups):
                entry = {"batch": q, "arm": None if model_c else g, "eligible": eligible, "tau": None, "failed": []}
                datasets = {}
                for m in eligible:
                    buf = buffers[m][g]
                    if len(buf) == 0:
                        continue
                    datasets[m] = buf.dataset(m, d)
                    if record_eigen:
                        eigen_log.append(
                            {"batch": q, "instance": m, "arm": entry["arm"],
                             "n": len(buf), "ratio": gram_min_eig_ratio(datasets[m].features)}
                        )
                new = _refit_group(policy, datasets, world.noise_scale, entry)
                for m, b in new.items():
                    if model_c:
                        est[m] = b
                    else:
                        est[m, g] = b
                    consumed[m] += len(buffers[m][g])
                    buffers[m][g].clear()
                log.append(entry)

    carried = np.array([sum(len(b) for b in buffers[m]) for m in range(M)], dtype=np.int64)
    return RegretTrace(
        per_instance_cumulative=cum,
        activation_counts=act_counts,
        batch_refit_log=log,
        seed=int(seed),
        policy=policy.name,
        actions=actions,
        consumed_counts=consumed,
        carried_counts=carried,
        eigen_log=eigen_log,
    )


def min_eigen_probe(world, policy, schedule=None, seed=0, rule=None) -> List[dict]:
    """Per refit and eligible instance, ``lambda_min(X_q' X_q) / n_q`` of the batch buffer."""
    return run_episode(world, policy, schedule, rule, seed, record_eigen=True).eigen_log


@dataclass
class RegretSummary:
    mean: np.ndarray  # (M, T)
    stderr: np.ndarray
    n_traces: int

    def to_rows(self, policy=""):
        M, T = self.mean.shape
        for m in range(M):
            for t in range(T):
                yield {"policy": policy, "instance": m, "round": t + 1,
                       "mean": self.mean[m, t], "stderr": self.stderr[m, t]}


def regret_summary(traces: Sequence[RegretTrace]) -> RegretSummary:
    """Mean and standard error of cumulative regret across traces, at every round."""
    if not traces:
        raise ShapeMismatch("no traces given")
    shape = traces[0].per_instance_cumulative.shape
    if any(tr.per_instance_cumulative.shape != shape for tr in traces):
        raise ShapeMismatch("traces do not share (M, T)")
    stack = np.stack([tr.per_instance_cumulative for tr in traces])
    mean = stack.mean(axis=0)
    if len(traces) == 1:
        se = np.zeros(shape)
    else:
        se = stack.std(axis=0, ddof=1) / math.sqrt(len(traces))
    return RegretSummary(mean=mean, stderr=se, n_traces=len(traces))


TRACE_COLUMNS = ["policy", "seed", "instance", "round", "cumulative_regret"]
REFIT_COLUMNS = ["policy", "seed", "batch", "eligible_count", "tau"]


def trace_rows(trace: RegretTrace):
    M, T = trace.per_instance_cumulative.shape
    for m in range(M):
        row = trace.per_instance_cumulative[m]
        for t in range(T):
            yield [trace.policy, trace.seed, m, t + 1, repr(float(row[t]))]


def write_trace_csv(traces: Sequence[RegretTrace], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            w.writerows(trace_rows(tr))


def write_refit_log_csv(traces: Sequence[RegretTrace], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REFIT_COLUMNS)
        for tr in traces:
            for e in tr.batch_refit_log:
                tau = "" if e["tau"] is None else e["tau"]
                w.writerow([tr.policy, tr.seed, e["batch"], len(e["eligible"]), tau])


def read_trace_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["instance"] = int(r["instance"])
        r["round"] = int(r["round"])
        r["cumulative_regret"] = float(r["cumulative_regret"])
    return rows
