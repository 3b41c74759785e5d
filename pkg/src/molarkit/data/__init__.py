from .ingest import IngestConfig, MultiTaskTable, ingest_csv, split_tasks, write_table
from .synth import (
    BanditWorldSpec,
    NoiseFamily,
    NoiseSpec,
    SynthRegressionSpec,
    gen_bandit_world,
    gen_regression_tasks,
    perturb_sparse,
    sample_sphere,
    toeplitz_cov,
)

__all__ = [
    "IngestConfig",
    "MultiTaskTable",
    "ingest_csv",
    "split_tasks",
    "write_table",
    "BanditWorldSpec",
    "NoiseFamily",
    "NoiseSpec",
    "SynthRegressionSpec",
    "gen_bandit_world",
    "gen_regression_tasks",
    "perturb_sparse",
    "sample_sphere",
    "toeplitz_cov",
]
