"""Penalized estimation of the linear part by iterated local quadratic approximation.

Starting from the unpenalized estimate, each step solves the ridge system

    (G + n_T * diag(w(beta))) beta_new = X_hat^T V^{-1} (Y - Pi Y)

where ``G`` is the spline-profiled Gram matrix and ``w`` the LQA weights of
the penalty.  Penalized coefficients that fall below ``zero_tol`` are set to
exactly zero and removed from later systems.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import ClusteredDataset, WorkingCovarianceSpec
from .estimator import (
    CURVE_GRID,
    CenteredCurve,
    FitResult,
    fit_unpenalized,
    sandwich_from_scores,
    spd_solve,
    split_gamma,
)
from .exceptions import NumericalError, ParameterError, SelectionError
from .penalties import PenaltySpec, lqa_weights
from .splines import SplineSpace

__all__ = [
    "PenalizedFit",
    "TuningPath",
    "default_grid",
    "lqa_step",
    "penalized_objective",
    "solve_penalized",
    "penalized_se",
    "effective_parameters",
    "bic_score",
    "select_lambda",
]

log = logging.getLogger(__name__)

MAX_ITER = 100
TOL = 1e-8
BIC_SENTINEL = -1e300
BIC_TIE = 1e-10


def default_grid(lo: float = 1e-3, hi: float = 5.0, size: int = 40) -> NDArray[np.float64]:
    return np.geomspace(lo, hi, size)


@dataclass(frozen=True, eq=False)
class PenalizedFit:
    """Penalized fit at one vector of tuning parameters.

    Inactive coefficients are exactly zero and have SE 0.
    ``objective_path`` and ``beta_path`` record the penalized objective and
    the coefficients at every iterate, starting from the unpenalized fit.
    """

    beta_p: NDArray[np.float64]
    active_set: tuple[int, ...]
    se_p: NDArray[np.float64]
    lambda_scalar: float
    lambda_vector: NDArray[np.float64]
    bic: float
    effective_params: float
    iterations: int
    converged: bool
    residuals: NDArray[np.float64] = field(repr=False)
    objective_path: list[float] = field(default_factory=list, repr=False)
    beta_path: list[NDArray[np.float64]] = field(default_factory=list, repr=False)
    covariance: NDArray[np.float64] | None = field(default=None, repr=False)
    fit: FitResult | None = field(default=None, repr=False)

    @property
    def inactive_set(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.beta_p.shape[0]) if k not in self.active_set)

    @cached_property
    def _spline_parts(self) -> tuple[NDArray[np.float64], float, float, tuple[CenteredCurve, ...]]:
        if self.fit is None:
            raise ValueError("fit was not retained")
        design = self.fit.design
        delta = self.fit.profiled.delta(self.beta_p)
        return split_gamma(delta, design.spaces, design.dataset.z)

    @property
    def gamma_p(self) -> NDArray[np.float64]:
        """B-spline coefficients at the penalized estimate, ``d2 * J`` entries."""
        return self._spline_parts[0]

    @property
    def intercept_shift(self) -> float:
        return self._spline_parts[2]

    @property
    def eta_hat(self) -> tuple[CenteredCurve, ...]:
        return self._spline_parts[3]

    def curves(self, grid: ArrayLike = CURVE_GRID) -> NDArray[np.float64]:
        grid = np.asarray(grid, dtype=np.float64)
        if not self.eta_hat:
            return np.zeros((grid.shape[0], 0))
        return np.column_stack([eta(grid) for eta in self.eta_hat])


@dataclass(frozen=True)
class TuningPath:
    grid: NDArray[np.float64]
    active_size: NDArray[np.intp]
    bic: NDArray[np.float64]
    effective_params: NDArray[np.float64]
    active_sets: tuple[tuple[int, ...], ...]
    converged: NDArray[np.bool_]

    def records(self) -> list[dict[str, object]]:
        return [
            {
                "lambda": float(lam),
                "active_size": int(k),
                "bic": float(b),
                "effective_params": float(e),
                "converged": bool(c),
            }
            for lam, k, b, e, c in zip(
                self.grid, self.active_size, self.bic, self.effective_params, self.converged
            )
        ]


def penalized_objective(beta: ArrayLike, fit: FitResult, penalty: PenaltySpec) -> float:
    """``Q(beta) + n_T * sum_k p_{lambda_k}(|beta_k|)`` with the exact penalty."""
    n_T = fit.design.dataset.n_T
    return fit.profiled.objective(beta) + n_T * penalty.total(beta)


def lqa_step(
    beta: ArrayLike,
    fit: FitResult,
    penalty: PenaltySpec,
    active: Sequence[int] | None = None,
) -> NDArray[np.float64]:
    """One LQA update restricted to ``active`` (all coefficients by default)."""
    beta = np.asarray(beta, dtype=np.float64)
    d1 = beta.shape[0]
    idx = np.arange(d1) if active is None else np.asarray(active, dtype=np.intp)
    n_T = fit.design.dataset.n_T
    gram = fit.profiled.gram
    w = lqa_weights(beta, penalty)[idx]
    a = gram[np.ix_(idx, idx)] + n_T * np.diag(w)
    new = np.zeros(d1)
    if idx.size:
        new[idx] = spd_solve(a, fit.profiled.score0[idx], NumericalError, "LQA ridge system")
    return new


def _ridge(beta: NDArray[np.float64], penalty: PenaltySpec, idx: NDArray[np.intp], n_T: int):
    return n_T * np.diag(lqa_weights(beta, penalty)[idx])


def effective_parameters(
    beta: ArrayLike, fit: FitResult, penalty: PenaltySpec, active: Sequence[int]
) -> float:
    """``tr{(G + n_T Sigma_lambda)^{-1} G}`` over the active coefficients."""
    idx = np.asarray(active, dtype=np.intp)
    if idx.size == 0:
        return 0.0
    beta = np.asarray(beta, dtype=np.float64)
    g = fit.profiled.gram[np.ix_(idx, idx)]
    a = g + _ridge(beta, penalty, idx, fit.design.dataset.n_T)
    return float(np.trace(spd_solve(a, g, NumericalError, "LQA ridge system")))


def penalized_se(
    beta: ArrayLike,
    fit: FitResult,
    penalty: PenaltySpec,
    active: Sequence[int],
    residuals: ArrayLike,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Sandwich covariance of the active coefficients and the full SE vector.

    ``Cov = (G + n_T S)^{-1} (sum_i s_i s_i^T) (G + n_T S)^{-1}`` where
    ``S`` is the LQA matrix at ``beta`` and ``s_i`` are cluster scores of the
    penalized residuals.  Inactive coefficients get SE 0.
    """
    beta = np.asarray(beta, dtype=np.float64)
    idx = np.asarray(active, dtype=np.intp)
    se = np.zeros(beta.shape[0])
    if idx.size == 0:
        return np.zeros((0, 0)), se
    design = fit.design
    xw = fit.profiled.x_hat_w[:, idx]
    resid_w = design.whitener.whiten(np.asarray(residuals, dtype=np.float64))
    cov = sandwich_from_scores(
        fit.profiled.gram[np.ix_(idx, idx)],
        xw,
        resid_w,
        design.whitener,
        ridge=_ridge(beta, penalty, idx, design.dataset.n_T),
    )
    se[idx] = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return cov, se


def bic_score(residuals: ArrayLike, fit: FitResult, effective: float) -> float:
    """``log(n_T^{-1} sum_i r_i^T R_i^{-1} r_i) + log(n_T) / n_T * e``.

    Returns a large negative sentinel (with a warning) when the residuals
    vanish, since the logarithm is then unbounded.
    """
    design = fit.design
    n_T = design.dataset.n_T
    quad = design.whitener.correlation_quadratic(residuals)
    scale = max(design.blocks.yy, np.finfo(float).tiny)
    if not quad > 1e-24 * scale:
        warnings.warn("residuals vanish; BIC set to a sentinel", RuntimeWarning, stacklevel=2)
        return BIC_SENTINEL
    return float(np.log(quad / n_T) + np.log(n_T) / n_T * effective)


def _solve(
    fit: FitResult,
    penalty: PenaltySpec,
    *,
    lambda_scalar: float = float("nan"),
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    zero_tol: float | None = None,
) -> PenalizedFit:
    d1 = fit.beta_hat.shape[0]
    if penalty.size != d1:
        raise ParameterError(f"penalty has {penalty.size} lambdas for {d1} coefficients")
    if zero_tol is None:
        zero_tol = 1e-4 * max(1.0, float(np.max(np.abs(fit.beta_hat), initial=0.0)))
    freezable = penalty.lambdas > 0

    beta = fit.beta_hat.copy()
    mask = np.ones(d1, dtype=bool)
    active = np.arange(d1)
    path = [penalized_objective(beta, fit, penalty)]
    betas = [beta]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = lqa_step(beta, fit, penalty, active)
        small = freezable & (np.abs(new) < zero_tol)
        new[small] = 0.0
        mask &= ~small
        active = np.flatnonzero(mask)
        step = float(np.max(np.abs(new - beta), initial=0.0))
        beta = new
        betas.append(beta)
        path.append(penalized_objective(beta, fit, penalty))
        if not np.all(np.isfinite(beta)):
            break
        if step < tol:
            converged = True
            break

    design = fit.design
    resid = design.y - design.x @ beta - design.w @ fit.profiled.delta(beta)
    active_t = tuple(int(k) for k in active)
    if converged:
        cov, se = penalized_se(beta, fit, penalty, active_t, resid)
        eff = effective_parameters(beta, fit, penalty, active_t)
        bic = bic_score(resid, fit, eff)
    else:
        log.debug("LQA did not converge in %d iterations", max_iter)
        cov, se = np.full((len(active_t),) * 2, np.nan), np.where(mask, np.nan, 0.0)
        eff, bic = float("nan"), float("nan")
    return PenalizedFit(
        beta_p=beta,
        active_set=active_t,
        se_p=se,
        lambda_scalar=lambda_scalar,
        lambda_vector=np.array(penalty.lambdas),
        bic=bic,
        effective_params=eff,
        iterations=iterations,
        converged=converged,
        residuals=resid,
        objective_path=path,
        beta_path=betas,
        covariance=cov,
        fit=fit,
    )


def solve_penalized(
    dataset: ClusteredDataset,
    spaces: Sequence[SplineSpace],
    spec: WorkingCovarianceSpec,
    penalty: PenaltySpec,
    lambda_vector: ArrayLike | None = None,
    *,
    fit: FitResult | None = None,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    zero_tol: float | None = None,
) -> PenalizedFit:
    """Minimize the penalized profiled objective from the unpenalized start.

    ``lambda_vector`` overrides the tuning parameters stored in ``penalty``.
    Pass a precomputed unpenalized ``fit`` to avoid refitting.
    """
    if fit is None:
        fit = fit_unpenalized(dataset, spaces, spec)
    if lambda_vector is not None:
        penalty = penalty.with_lambdas(lambda_vector)
    return _solve(fit, penalty, max_iter=max_iter, tol=tol, zero_tol=zero_tol)


def select_lambda(
    dataset: ClusteredDataset,
    spaces: Sequence[SplineSpace],
    spec: WorkingCovarianceSpec,
    penalty: PenaltySpec,
    grid: ArrayLike | None = None,
    *,
    fit: FitResult | None = None,
    scale: ArrayLike | None = None,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
) -> tuple[PenalizedFit, TuningPath]:
    """Grid search over ``lambda`` with ``lambda_k = lambda * SE(beta_hat_k)`` and BIC.

    ``scale`` replaces the unpenalized standard errors as the per-coefficient
    multiplier.  Among grid points whose BIC is within ``1e-10`` of the
    minimum the largest ``lambda`` (sparsest model) wins.
    """
    if fit is None:
        fit = fit_unpenalized(dataset, spaces, spec)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid < 0):
        raise ParameterError("lambda grid must be nonnegative and strictly increasing")
    weights = fit.se if scale is None else np.asarray(scale, dtype=np.float64).reshape(-1)

    fits: list[PenalizedFit] = []
    for lam in grid:
        try:
            pf = _solve(
                fit, penalty.with_lambdas(lam * weights),
                lambda_scalar=float(lam), max_iter=max_iter, tol=tol,
            )
        except NumericalError as exc:
            log.debug("lambda=%g failed: %s", lam, exc)
            pf = None
        fits.append(pf)  # type: ignore[arg-type]

    bics = np.array([f.bic if f is not None and f.converged else np.nan for f in fits])
    ok = np.isfinite(bics)
    if not ok.any():
        raise SelectionError("no grid point produced a converged fit")
    best = np.nanmin(bics)
    chosen = int(np.flatnonzero(ok & (bics <= best + BIC_TIE))[-1])
    path = TuningPath(
        grid=grid,
        active_size=np.array([len(f.active_set) if f else -1 for f in fits], dtype=np.intp),
        bic=bics,
        effective_params=np.array([f.effective_params if f else np.nan for f in fits]),
        active_sets=tuple(f.active_set if f else () for f in fits),
        converged=np.array([bool(f and f.converged) for f in fits]),
    )
    return fits[chosen], path
