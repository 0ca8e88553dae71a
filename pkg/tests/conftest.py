import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_dataset(rng, n, d1, d2, *, max_m=3, kind="WI", alpha=0.0, beta=None, noise=1.0):
    """Clustered data with uniform Z, standard normal X and smooth curves."""
    from oracles import dense_covariance

    from plmsel import ClusteredDataset

    sizes = rng.integers(1, max_m + 1, size=n)
    groups = np.repeat(np.arange(n), sizes)
    n_T = groups.shape[0]
    x = rng.normal(size=(n_T, d1))
    z = rng.uniform(size=(n_T, d2))
    beta = rng.normal(size=d1) if beta is None else np.asarray(beta)
    mean = x @ beta + np.sum(np.sin(2 * np.pi * z), axis=1)
    err = np.concatenate(
        [np.linalg.cholesky(dense_covariance(kind, alpha, m)) @ rng.normal(size=m) for m in sizes]
    )
    y = 1.0 + mean + noise * err
    return ClusteredDataset.from_arrays(y, x, z, groups), sizes


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def no_spline_instance(seed, penalty_kind="SCAD"):
    """Small clustered linear model with clear signal, as used for exhaustive search."""
    rng = np.random.default_rng(seed)
    d1 = int(rng.integers(2, 5))
    kind = str(rng.choice(["WI", "EX", "AR1"]))
    alpha = 0.0 if kind == "WI" else 0.5
    beta = np.where(rng.random(d1) < 0.5, 0.0, rng.choice([-1, 1], d1) * rng.uniform(1, 3, d1))
    ds, sizes = random_dataset(rng, int(rng.integers(10, 40)), d1, 0, kind=kind, alpha=alpha, beta=beta, noise=0.5)
    from plmsel import PenaltySpec, WorkingCovarianceSpec

    spec = WorkingCovarianceSpec(kind, alpha)
    return ds, sizes, spec, PenaltySpec(penalty_kind, np.zeros(d1))


@lru_cache(maxsize=None)
def study(n, working="EX", replicates=100, seed=20240):
    """Simulation study shared by every test of the session."""
    from plmsel.simulation import SimConfig, run_study

    return run_study(SimConfig(n=n, working=working, replicates=replicates, seed=seed))
