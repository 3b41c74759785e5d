"""Synthetic regression tasks and bandit worlds with exactly sparse heterogeneity."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from ..bandit import BanditModel, BanditWorld
from ..core import TaskDataset
from ..exceptions import InfeasibleRescale


class NoiseFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BOUNDED = "bounded"  # uniform on [-scale, scale]
    SUBEXPONENTIAL = "subexponential"  # difference of two Exp(rate) draws


@dataclass
class NoiseSpec:
    family: NoiseFamily = NoiseFamily.GAUSSIAN
    scale: float = 0.1  # sigma, the bound b, or the exponential rate

    def __post_init__(self):
        self.family = NoiseFamily(self.family)
        if self.scale < 0 or (self.family is NoiseFamily.SUBEXPONENTIAL and self.scale == 0):
            raise ValueError("invalid noise scale")

    def sample(self, rng, size):
        if self.family is NoiseFamily.GAUSSIAN:
            return self.scale * rng.standard_normal(size)
        if self.family is NoiseFamily.BOUNDED:
            return rng.uniform(-self.scale, self.scale, size)
        return rng.exponential(1.0 / self.scale, size) - rng.exponential(1.0 / self.scale, size)


def sample_sphere(d: int, rng) -> np.ndarray:
    """Uniform draw from the unit sphere in R^d (a normalized Gaussian)."""
    if d < 1:
        raise ValueError("d must be at least 1")
    g = rng.standard_normal(d)
    while not np.any(g):
        g = rng.standard_normal(d)
    return g / np.linalg.norm(g)


def perturb_sparse(base, s: int, rng, provenance: Optional[list] = None, max_attempts: int = 100):
    """Redraw ``s`` random coordinates of a unit vector and rescale only those.

    The replaced coordinates get fresh standard Gaussian values and are
    then scaled so the result has unit norm again, so at most ``s``
    coordinates differ from ``base`` and the rest are copied bit-for-bit.
    """
    base = np.asarray(base, dtype=np.float64)
    d = base.shape[0]
    if not 0 <= s <= d:
        raise ValueError(f"s must lie in [0, {d}]")
    if s == 0:
        return base.copy()
    for _ in range(max_attempts):
        idx = rng.choice(d, size=s, replace=False)
        keep = np.ones(d, dtype=bool)
        keep[idx] = False
        room = 1.0 - float(base[keep] @ base[keep])
        if room < 0.0:
            continue
        g = rng.standard_normal(s)
        out = base.copy()
        out[idx] = g * (np.sqrt(room) / np.linalg.norm(g))
        return out
    # untouched mass exceeds one on every draw: only reachable with a non-unit base
    if provenance is not None:
        provenance.append({"event": "infeasible_rescale", "fallback": "zeroed_and_renormalized"})
    out = base.copy()
    out[idx] = 0.0
    norm = np.linalg.norm(out)
    if norm == 0.0:
        raise InfeasibleRescale("cannot renormalize an all-zero vector")
    return out / norm


def toeplitz_cov(d: int, rho: float) -> np.ndarray:
    """AR(1) covariance ``rho^|i-j|``."""
    i = np.arange(d)
    return rho ** np.abs(i[:, None] - i[None, :])


@dataclass
class SynthRegressionSpec:
    d: int
    M: int
    s: int
    n: Union[int, Sequence[int]]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    feature_cov: Optional[np.ndarray] = None
    seed: int = 0

    def sizes(self) -> List[int]:
        if np.ndim(self.n) == 0:
            return [int(self.n)] * self.M
        sizes = [int(v) for v in self.n]
        if len(sizes) != self.M:
            raise ValueError(f"got {len(sizes)} sample sizes for {self.M} tasks")
        return sizes

    def __post_init__(self):
        if not 0 <= self.s <= self.d:
            raise ValueError("need 0 <= s <= d")
        if self.M < 1 or min(self.sizes()) < 1:
            raise ValueError("need M >= 1 and every n >= 1")


def _streams(seed, names):
    return {
        name: np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        for i, name in enumerate(names)
    }


def heterogeneous_params(d, s, M, rng):
    """A global unit vector and ``M`` sparse perturbations of it."""
    star = sample_sphere(d, rng)
    return star, np.array([perturb_sparse(star, s, rng) for _ in range(M)])


def gen_regression_tasks(spec: SynthRegressionSpec):
    """Returns ``(tasks, beta_star, betas)``; fully determined by ``spec.seed``."""
    rng = _streams(spec.seed, ["params", "features", "noise"])
    star, betas = heterogeneous_params(spec.d, spec.s, spec.M, rng["params"])
    chol = None if spec.feature_cov is None else np.linalg.cholesky(np.asarray(spec.feature_cov, float))
    tasks = []
    for m, n in enumerate(spec.sizes()):
        X = rng["features"].standard_normal((n, spec.d))
        if chol is not None:
            X = X @ chol.T
        y = X @ betas[m] + spec.noise.sample(rng["noise"], n)
        tasks.append(TaskDataset(m, X, y))
    return tasks, star, betas


@dataclass
class BanditWorldSpec:
    d: int = 30
    s: int = 2
    M: int = 20
    K: int = 3
    T: int = 3000
    noise_scale: float = 0.5
    model: BanditModel = BanditModel.C
    activation: Union[str, Sequence[float]] = "uniform"
    context_cov: Optional[np.ndarray] = None
    seed: int = 0


def gen_bandit_world(spec: BanditWorldSpec) -> BanditWorld:
    rng = _streams(spec.seed, ["params", "activation"])
    model = BanditModel(spec.model)
    if model is BanditModel.C:
        _, params = heterogeneous_params(spec.d, spec.s, spec.M, rng["params"])
    else:
        # one global center per arm, each instance perturbs every arm's center
        centers = [sample_sphere(spec.d, rng["params"]) for _ in range(spec.K)]
        params = np.array(
            [[perturb_sparse(centers[a], spec.s, rng["params"]) for a in range(spec.K)] for _ in range(spec.M)]
        )
    if isinstance(spec.activation, str):
        if spec.activation != "uniform":
            raise ValueError("activation must be 'uniform' or a list of probabilities")
        probs = rng["activation"].uniform(0.0, 1.0, spec.M)
    else:
        probs = np.asarray(spec.activation, dtype=np.float64)
    return BanditWorld(
        model=model, d=spec.d, K=spec.K, M=spec.M, T=spec.T, true_params=params,
        activation_probs=probs, noise_scale=spec.noise_scale, context_cov=spec.context_cov,
    )
