"""Seeded Monte Carlo study of selection and estimation accuracy.

Data follow the design

    Y_ij = beta^T X_ij + eta1(Z_ij1) + eta2(Z_ij2) + eps_ij,   j = 1..3

with ``beta = (3, 1.5, 0, 0, 2, 0, 0, 0)``, ``eta1(z) = sin(2 pi (z - 0.5))``
and ``eta2(z) = z - 0.5 + sin(2 pi (z - 0.5))``.  ``Z_ij`` is bivariate
normal (mean 0, variance 0.25, correlation 0.9) truncated to the unit
square, X1..X6 are independent normal, ``X7 = 3(1 - 2 Z1)(1 - 2 Z2) + u``,
X8 is +-0.5 with equal probability and the errors of a cluster are
exchangeable normal with correlation 0.9.

Replicate ``r`` draws from ``default_rng(SeedSequence(seed).spawn(R)[r])``,
so results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import ClusteredDataset, CovKind, WorkingCovarianceSpec, estimate_alpha
from .estimator import fit_design, build_weighted_design, FitResult
from .exceptions import GenerationError, ParameterError, PLMError
from .penalties import PenaltyKind, PenaltySpec
from .solver import select_lambda
from .splines import make_space

__all__ = [
    "BETA0",
    "eta1",
    "eta2",
    "SimConfig",
    "ReplicateResult",
    "SimMetrics",
    "generate_replicate",
    "model_error",
    "sd_metrics",
    "run_replicate",
    "run_study",
    "replicate_rng",
    "MAD_SCALE",
]

log = logging.getLogger(__name__)

BETA0 = np.array([3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0])
MAD_SCALE = 0.6745
_L2_GRID = np.linspace(0.0, 1.0, 1001)


def eta1(z: ArrayLike) -> NDArray[np.float64]:
    return np.sin(2.0 * np.pi * (np.asarray(z, dtype=np.float64) - 0.5))


def eta2(z: ArrayLike) -> NDArray[np.float64]:
    z = np.asarray(z, dtype=np.float64)
    return z - 0.5 + np.sin(2.0 * np.pi * (z - 0.5))


@dataclass(frozen=True)
class SimConfig:
    """Settings of one simulation cell.

    ``x_sd`` is the standard deviation of X1..X6 and of the noise in X7.
    ``working_alpha=None`` estimates the working correlation per replicate
    from working-independence residuals.
    """

    n: int = 400
    m: int = 3
    replicates: int = 100
    seed: int = 0
    working: CovKind = CovKind.EX
    penalty: PenaltyKind = PenaltyKind.SCAD
    beta0: tuple[float, ...] = tuple(BETA0)
    error_alpha: float = 0.9
    z_sd: float = 0.5
    z_corr: float = 0.9
    x_sd: float = 0.25
    degree: int = 3
    knots: int = 4
    working_alpha: float | None = None
    grid: tuple[float, ...] | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "working", CovKind.parse(self.working))
        object.__setattr__(self, "penalty", PenaltyKind.parse(self.penalty))
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))
        if self.n < 10:
            raise ParameterError("n must be at least 10")
        if self.replicates < 1:
            raise ParameterError("replicates must be at least 1")
        if len(self.beta0) != 8:
            raise ParameterError("the design has 8 parametric covariates")
        if self.working is CovKind.RSM:
            raise ParameterError("the simulation design has no observation times")

    @property
    def true_active(self) -> tuple[int, ...]:
        return tuple(k for k, b in enumerate(self.beta0) if b != 0)


def replicate_rng(seed: int, replicates: int, index: int) -> np.random.Generator:
    """Generator of replicate ``index``: stream ``index`` spawned from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(replicates)[index])


def _truncated_z(size: int, rng: np.random.Generator, sd: float, corr: float) -> NDArray[np.float64]:
    cov = sd * sd * np.array([[1.0, corr], [corr, 1.0]])
    chol = np.linalg.cholesky(cov)
    out = np.empty((0, 2))
    drawn = 0
    while out.shape[0] < size:
        batch = max(64, 3 * (size - out.shape[0]))
        cand = rng.standard_normal((batch, 2)) @ chol.T
        drawn += batch
        keep = np.all((cand >= 0.0) & (cand <= 1.0), axis=1)
        out = np.vstack([out, cand[keep]])
        if drawn >= 10_000 and out.shape[0] < 1e-4 * drawn:
            raise GenerationError(f"rejection acceptance rate {out.shape[0] / drawn:.2e} too low")
    return out[:size]


def generate_replicate(config: SimConfig, rng: np.random.Generator) -> ClusteredDataset:
    n, m = config.n, config.m
    n_T = n * m
    z = _truncated_z(n_T, rng, config.z_sd, config.z_corr)
    x = np.empty((n_T, 8))
    x[:, :6] = rng.normal(0.0, config.x_sd, size=(n_T, 6))
    x[:, 6] = 3.0 * (1.0 - 2.0 * z[:, 0]) * (1.0 - 2.0 * z[:, 1]) + rng.normal(0.0, config.x_sd, n_T)
    x[:, 7] = rng.choice([-0.5, 0.5], size=n_T)
    a = config.error_alpha
    sigma = (1.0 - a) * np.eye(m) + a * np.ones((m, m))
    eps = (rng.standard_normal((n, m)) @ np.linalg.cholesky(sigma).T).reshape(-1)
    y = x @ np.asarray(config.beta0) + eta1(z[:, 0]) + eta2(z[:, 1]) + eps
    return ClusteredDataset.from_arrays(y, x, z, np.repeat(np.arange(n), m))


def model_error(
    beta_hat: ArrayLike,
    beta0: ArrayLike,
    dataset: ClusteredDataset | None = None,
    *,
    moment: ArrayLike | None = None,
) -> float:
    """``(beta_hat - beta0)^T M (beta_hat - beta0)``, ``M`` the pooled ``E[X X^T]``."""
    diff = np.asarray(beta_hat, dtype=np.float64) - np.asarray(beta0, dtype=np.float64)
    if moment is None:
        if dataset is None:
            raise ValueError("need a dataset or a moment matrix")
        moment = dataset.x.T @ dataset.x / dataset.n_T
    return float(diff @ np.asarray(moment, dtype=np.float64) @ diff)


def _mad(values: NDArray[np.float64], axis: int = 0) -> NDArray[np.float64]:
    med = np.median(values, axis=axis, keepdims=True)
    return np.median(np.abs(values - med), axis=axis)


def sd_metrics(estimates: ArrayLike, ses: ArrayLike) -> tuple[float, float, float]:
    """``(SD, SD_m, SD_mad)``: robust spread of estimates, median SE, robust spread of SEs."""
    est = np.asarray(estimates, dtype=np.float64).reshape(-1)
    se = np.asarray(ses, dtype=np.float64).reshape(-1)
    if est.size < 2 or se.size < 2:
        raise ValueError("need at least two replicates")
    return (
        float(_mad(est) / MAD_SCALE),
        float(np.median(se)),
        float(_mad(se) / MAD_SCALE),
    )


@dataclass(frozen=True, eq=False)
class ReplicateResult:
    index: int
    converged: bool
    working_alpha: float
    beta_full: NDArray[np.float64]
    se_full: NDArray[np.float64]
    beta_pen: NDArray[np.float64]
    se_pen: NDArray[np.float64]
    beta_oracle: NDArray[np.float64]
    se_oracle: NDArray[np.float64]
    me_full: float
    me_pen: float
    me_oracle: float
    lambda_scalar: float
    eta_l2: NDArray[np.float64]
    mean_error: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    h_bb_eigs: tuple[float, float] = (math.nan, math.nan)


@dataclass(frozen=True, eq=False)
class SimMetrics:
    """Aggregated metrics of one estimator over the replicates of a cell.

    ``sd_table`` maps a coefficient index (0-based) to ``(SD, SD_m, SD_mad)``.
    ``oracle`` holds the same metrics for the refit on the true support.
    """

    C: float
    I: float
    MRME: float
    RMSE: float
    MRME_mean: float
    sd_table: dict[int, tuple[float, float, float]]
    n_used: int
    n_excluded: int
    config: SimConfig | None = None
    oracle: SimMetrics | None = None
    replicates: tuple[ReplicateResult, ...] = field(default=(), repr=False)

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "C": self.C,
            "I": self.I,
            "MRME": self.MRME,
            "RMSE": self.RMSE,
            "MRME_mean": self.MRME_mean,
            "sd_table": {str(k + 1): list(v) for k, v in sorted(self.sd_table.items())},
            "n_used": self.n_used,
            "n_excluded": self.n_excluded,
        }
        if self.oracle is not None:
            out["oracle"] = self.oracle.as_dict()
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimMetrics):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    __hash__ = None  # type: ignore[assignment]


def _working_spec(config: SimConfig, dataset: ClusteredDataset, design_spaces) -> WorkingCovarianceSpec:
    kind = config.working
    if kind is CovKind.WI:
        return WorkingCovarianceSpec.independence()
    alpha = config.working_alpha
    if alpha is None:
        pre = fit_design(build_weighted_design(dataset, design_spaces, WorkingCovarianceSpec()))
        alpha = estimate_alpha(kind, pre.residuals)
    return WorkingCovarianceSpec(kind, alpha)


def _eta_l2(fit: FitResult, dataset: ClusteredDataset) -> NDArray[np.float64]:
    errs = []
    for l, truth in enumerate((eta1, eta2)):
        centered_truth = truth(_L2_GRID) - np.mean(truth(dataset.z[:, l]))
        diff = fit.eta_hat[l](_L2_GRID) - centered_truth
        errs.append(float(np.trapezoid(diff * diff, _L2_GRID)))
    return np.array(errs)


def run_replicate(config: SimConfig, index: int) -> ReplicateResult:
    """Generate replicate ``index`` and fit the full, penalized and oracle models."""
    rng = replicate_rng(config.seed, config.replicates, index)
    dataset = generate_replicate(config, rng)
    spaces = [make_space(config.degree, config.knots)] * 2
    beta0 = np.asarray(config.beta0)
    moment = dataset.x.T @ dataset.x / dataset.n_T
    nan8 = np.full(8, np.nan)
    try:
        spec = _working_spec(config, dataset, spaces)
        full = fit_design(build_weighted_design(dataset, spaces, spec))
        penalty = PenaltySpec(config.penalty, np.zeros(8))
        grid = None if config.grid is None else np.asarray(config.grid)
        pen, _ = select_lambda(dataset, spaces, spec, penalty, grid, fit=full)

        active = list(config.true_active)
        sub = dataset.with_arrays(x=dataset.x[:, active], x_names=[f"x{k + 1}" for k in active])
        oracle = fit_design(build_weighted_design(sub, spaces, spec))
    except PLMError as exc:
        log.warning("replicate %d failed: %s", index, exc)
        return ReplicateResult(
            index, False, math.nan, nan8, nan8, nan8, nan8, nan8, nan8,
            math.nan, math.nan, math.nan, math.nan, np.full(2, np.nan),
        )
    beta_or = np.zeros(8)
    se_or = np.zeros(8)
    beta_or[active] = oracle.beta_hat
    se_or[active] = oracle.se
    mu = dataset.x @ beta0 + eta1(dataset.z[:, 0]) + eta2(dataset.z[:, 1])
    mean_error = tuple(
        float(np.mean((fitted - mu) ** 2))
        for fitted in (full.fitted(), dataset.y - pen.residuals, oracle.fitted())
    )
    eig = np.linalg.eigvalsh(full.blocks.H_BB / dataset.n)
    return ReplicateResult(
        index=index,
        converged=pen.converged,
        working_alpha=spec.alpha,
        beta_full=full.beta_hat,
        se_full=full.se,
        beta_pen=pen.beta_p,
        se_pen=pen.se_p,
        beta_oracle=beta_or,
        se_oracle=se_or,
        me_full=model_error(full.beta_hat, beta0, moment=moment),
        me_pen=model_error(pen.beta_p, beta0, moment=moment),
        me_oracle=model_error(beta_or, beta0, moment=moment),
        lambda_scalar=pen.lambda_scalar,
        eta_l2=_eta_l2(full, dataset),
        mean_error=mean_error,  # type: ignore[arg-type]
        h_bb_eigs=(float(eig[0]), float(eig[-1])),
    )


def _aggregate(
    results: Sequence[ReplicateResult],
    beta0: NDArray[np.float64],
    pick: Callable[[ReplicateResult], tuple[NDArray[np.float64], NDArray[np.float64], float, float]],
    n_excluded: int,
    config: SimConfig | None,
) -> SimMetrics:
    zero = beta0 == 0
    betas = np.array([pick(r)[0] for r in results])
    ses = np.array([pick(r)[1] for r in results])
    rme = np.array([pick(r)[2] / r.me_full for r in results])
    rme_mean = np.array([pick(r)[3] / r.mean_error[0] for r in results])
    is_zero = betas == 0.0
    C = float(np.mean(np.sum(is_zero[:, zero], axis=1)))
    I = float(np.mean(np.sum(is_zero[:, ~zero], axis=1)))
    rmse = float(np.sqrt(np.mean(np.sum((betas - beta0) ** 2, axis=1))))
    sd_table = {}
    if len(results) >= 2:
        for k in np.flatnonzero(~zero):
            sd_table[int(k)] = sd_metrics(betas[:, k], ses[:, k])
    return SimMetrics(
        C=C,
        I=I,
        MRME=float(100.0 * np.median(rme)),
        RMSE=rmse,
        MRME_mean=float(100.0 * np.median(rme_mean)),
        sd_table=sd_table,
        n_used=len(results),
        n_excluded=n_excluded,
        config=config,
    )


def summarize(results: Iterable[ReplicateResult], config: SimConfig) -> SimMetrics:
    """Aggregate replicate results; non-converged replicates are excluded and counted."""
    results = sorted(results, key=lambda r: r.index)
    used = [r for r in results if r.converged]
    excluded = len(results) - len(used)
    if not used:
        raise GenerationError("every replicate failed")
    beta0 = np.asarray(config.beta0)
    oracle = _aggregate(used, beta0, lambda r: (r.beta_oracle, r.se_oracle, r.me_oracle, r.mean_error[2]), excluded, config)
    pen = _aggregate(used, beta0, lambda r: (r.beta_pen, r.se_pen, r.me_pen, r.mean_error[1]), excluded, config)
    return replace(pen, oracle=oracle, replicates=tuple(results))


def run_study(config: SimConfig) -> SimMetrics:
    """Run every replicate of ``config`` and aggregate.

    Replicates run on ``config.workers`` threads; the result is identical
    for any worker count.
    """
    indices = range(config.replicates)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(lambda i: run_replicate(config, i), indices))
    else:
        results = [run_replicate(config, i) for i in indices]
    return summarize(results, config)
